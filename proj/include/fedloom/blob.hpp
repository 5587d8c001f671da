/**
 * Copyright 2026 The Fedloom Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// One-time-token blob transfer.
//
// Request:  32 ASCII hex bytes (the token).
// Reply:    0x01, u64 big-endian length, payload
//       or  0x00, one reason byte.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "fedloom/errors.hpp"
#include "fedloom/net.hpp"
#include "fedloom/protocol.hpp"
#include "fedloom/warehouse.hpp"

namespace fedloom {

inline constexpr std::size_t kTokenSize = 32;
inline constexpr double kDefaultCredentialLifetime = 60.0;

enum class BlobReject : std::uint8_t {
  UnknownToken = 1,  // never issued or already used
  Expired = 2,
  Missing = 3,  // resource deleted after the offer
  BadRequest = 4,
};

inline const char* to_string(BlobReject r) {
  switch (r) {
    case BlobReject::UnknownToken:
      return "unknown or used token";
    case BlobReject::Expired:
      return "expired token";
    case BlobReject::Missing:
      return "resource no longer stored";
    case BlobReject::BadRequest:
      return "malformed request";
  }
  return "rejected";
}

/// Seconds on some monotone clock. Injected so expiry can be tested.
using Clock = std::function<double()>;

inline Clock steady_clock_seconds() {
  return [] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
  };
}

/// Issued tokens and what they unlock. redeem() is atomic: of any number of
/// concurrent callers with one token, exactly one wins.
class TokenStore {
 public:
  explicit TokenStore(Clock clock = steady_clock_seconds(), double lifetime = kDefaultCredentialLifetime)
      : clock_(std::move(clock)), lifetime_(lifetime) {
    if (!(lifetime_ > 0.0)) throw InvalidArgument("credential lifetime must be positive");
  }

  std::string issue(const DataId& resource) {
    std::lock_guard lock(mu_);
    std::string token;
    do {
      token = DataId::random().hex();
    } while (live_.count(token));
    live_[token] = Entry{resource, clock_() + lifetime_};
    return token;
  }

  struct Outcome {
    std::optional<DataId> resource;
    BlobReject reason = BlobReject::UnknownToken;
  };

  Outcome redeem(const std::string& token) {
    std::lock_guard lock(mu_);
    auto it = live_.find(token);
    if (it == live_.end()) return {std::nullopt, BlobReject::UnknownToken};
    const Entry e = it->second;
    live_.erase(it);
    if (clock_() > e.expires_at) return {std::nullopt, BlobReject::Expired};
    return {e.resource, BlobReject::UnknownToken};
  }

  std::size_t live_count() const {
    std::lock_guard lock(mu_);
    return live_.size();
  }

 private:
  struct Entry {
    DataId resource;
    double expires_at = 0.0;
  };
  Clock clock_;
  double lifetime_;
  mutable std::mutex mu_;
  std::map<std::string, Entry> live_;
};

/// Serves warehouse blobs to holders of a valid token.
class BlobServer {
 public:
  BlobServer(Warehouse& warehouse, std::string host, std::uint16_t port, Clock clock = steady_clock_seconds(),
             double lifetime = kDefaultCredentialLifetime)
      : warehouse_(warehouse),
        host_(std::move(host)),
        tokens_(std::move(clock), lifetime),
        listener_(host_ == "localhost" ? "127.0.0.1" : host_, port, [this](Socket& s) { serve(s); }) {}

  Address address() const { return Address{host_, listener_.port()}; }

  /// Issues a fresh credential for a stored resource. Throws NotFound.
  TransferCredential offer(const DataId& id) {
    if (!warehouse_.contains(id)) throw NotFound("cannot offer unknown resource " + id.hex());
    return TransferCredential{address(), id, tokens_.issue(id), true};
  }

  TokenStore& tokens() noexcept { return tokens_; }

  void stop() { listener_.stop(); }

 private:
  void serve(Socket& s) {
    s.set_timeout(10.0);
    char token[kTokenSize];
    try {
      s.read_exact(token, kTokenSize);
    } catch (const TransportError&) {
      return;
    }
    const std::string t(token, kTokenSize);
    const auto outcome = tokens_.redeem(t);
    if (!outcome.resource) {
      reject(s, outcome.reason);
      return;
    }
    Bytes payload;
    try {
      payload = warehouse_.get(*outcome.resource);
    } catch (const NotFound&) {
      reject(s, BlobReject::Missing);
      return;
    }
    std::string head(1, '\x01');
    detail::append_be32(head, static_cast<std::uint32_t>(payload.size() >> 32));
    detail::append_be32(head, static_cast<std::uint32_t>(payload.size() & 0xFFFFFFFFu));
    s.write_all(head);
    s.write_all(payload.data(), payload.size());
  }

  static void reject(Socket& s, BlobReject reason) {
    const char reply[2] = {'\x00', static_cast<char>(reason)};
    s.write_all(reply, 2);
  }

  Warehouse& warehouse_;
  std::string host_;
  TokenStore tokens_;
  Listener listener_;
};

/// Downloads the blob a credential unlocks. Throws CredentialRejected when
/// the holder refuses the token and TransportError when it cannot be reached.
inline Bytes blob_fetch(const TransferCredential& cred, double timeout_seconds = 10.0) {
  if (cred.token.size() != kTokenSize) throw CredentialRejected("token must be 32 chars");
  Socket s = connect_to(cred.address, timeout_seconds);
  s.write_all(cred.token);
  unsigned char status = 0;
  s.read_exact(&status, 1);
  if (status == 0) {
    unsigned char reason = 0;
    s.read_exact(&reason, 1);
    throw CredentialRejected(std::string("blob holder rejected credential: ") +
                             to_string(static_cast<BlobReject>(reason)));
  }
  if (status != 1) throw TransportError("bad blob reply status " + std::to_string(status));
  unsigned char len_bytes[8];
  s.read_exact(len_bytes, 8);
  const std::uint64_t len = detail::get_be(len_bytes, 8);
  Bytes out(len);
  if (len > 0) s.read_exact(out.data(), len);
  return out;
}

}  // namespace fedloom
