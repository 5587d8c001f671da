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

#include <any>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "fedloom/errors.hpp"
#include "fedloom/model.hpp"

namespace fedloom {

using Bytes = std::vector<std::uint8_t>;

/// 128-bit random identifier, written as 32 lowercase hex digits.
class DataId {
 public:
  DataId() = default;
  DataId(std::uint64_t hi, std::uint64_t lo) : hi_(hi), lo_(lo) {}

  static DataId random() {
    thread_local std::mt19937_64 rng([] {
      std::random_device rd;
      std::seed_seq seq{rd(), rd(), rd(), rd(), rd(), rd()};
      return std::mt19937_64(seq);
    }());
    return {rng(), rng()};
  }

  /// Throws InvalidArgument unless `text` is exactly 32 hex digits.
  static DataId parse(std::string_view text) {
    if (text.size() != 32) throw InvalidArgument("data id must be 32 hex chars, got " + std::to_string(text.size()));
    std::uint64_t parts[2] = {0, 0};
    for (std::size_t i = 0; i < 32; ++i) {
      const char c = text[i];
      std::uint64_t nibble;
      if (c >= '0' && c <= '9') {
        nibble = static_cast<std::uint64_t>(c - '0');
      } else if (c >= 'a' && c <= 'f') {
        nibble = static_cast<std::uint64_t>(c - 'a' + 10);
      } else if (c >= 'A' && c <= 'F') {
        nibble = static_cast<std::uint64_t>(c - 'A' + 10);
      } else {
        throw InvalidArgument("data id has non-hex character '" + std::string(1, c) + "'");
      }
      parts[i / 16] = (parts[i / 16] << 4) | nibble;
    }
    return {parts[0], parts[1]};
  }

  std::string hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out(32, '0');
    for (int i = 0; i < 16; ++i) {
      out[15 - i] = kDigits[(hi_ >> (4 * i)) & 0xF];
      out[31 - i] = kDigits[(lo_ >> (4 * i)) & 0xF];
    }
    return out;
  }

  bool empty() const noexcept { return hi_ == 0 && lo_ == 0; }

  friend auto operator<=>(const DataId&, const DataId&) = default;

 private:
  std::uint64_t hi_ = 0;
  std::uint64_t lo_ = 0;
};

struct Address {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  bool valid() const { return !host.empty() && port != 0; }
  std::string str() const { return host + ":" + std::to_string(port); }
  friend bool operator==(const Address&, const Address&) = default;
};

/// Where a participant's model lives: its network address plus warehouse id.
struct ModelPointer {
  Address address;
  DataId id;

  bool valid() const { return address.valid() && !id.empty(); }
  friend bool operator==(const ModelPointer&, const ModelPointer&) = default;
};

// ---------------------------------------------------------------------------
// Canonical weights encoding: "FLWEIGHT", two big-endian u32 shape fields
// (n_features, n_classes), then big-endian IEEE-754 doubles.

inline constexpr std::string_view kWeightsMagic = "FLWEIGHT";

namespace detail {

inline void put_be(Bytes& out, std::uint64_t v, int width) {
  for (int i = width - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_be(const std::uint8_t* p, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v = (v << 8) | p[i];
  return v;
}

}  // namespace detail

inline Bytes encode_weights(const ModelWeights& w) {
  if (w.values.size() != ModelWeights::expected_size(w.n_features, w.n_classes)) {
    throw InvalidArgument("encode_weights: value count does not match shape");
  }
  Bytes out;
  out.reserve(kWeightsMagic.size() + 8 + 8 * w.values.size());
  out.insert(out.end(), kWeightsMagic.begin(), kWeightsMagic.end());
  detail::put_be(out, w.n_features, 4);
  detail::put_be(out, w.n_classes, 4);
  for (double v : w.values) detail::put_be(out, std::bit_cast<std::uint64_t>(v), 8);
  return out;
}

inline ModelWeights decode_weights(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t header = 8 + 8;
  if (bytes.size() < header) throw FormatError("weights: truncated header");
  if (std::memcmp(bytes.data(), kWeightsMagic.data(), kWeightsMagic.size()) != 0) {
    throw FormatError("weights: bad magic");
  }
  const auto nf = static_cast<std::uint32_t>(detail::get_be(bytes.data() + 8, 4));
  const auto nc = static_cast<std::uint32_t>(detail::get_be(bytes.data() + 12, 4));
  const std::size_t count = ModelWeights::expected_size(nf, nc);
  if (bytes.size() != header + 8 * count) {
    throw FormatError("weights: payload holds " + std::to_string(bytes.size() - header) + " bytes, shape needs " +
                      std::to_string(8 * count));
  }
  ModelWeights w(nf, nc);
  for (std::size_t i = 0; i < count; ++i) {
    w.values[i] = std::bit_cast<double>(detail::get_be(bytes.data() + header + 8 * i, 8));
  }
  return w;
}

// ---------------------------------------------------------------------------

enum class Backend { Memory, File };

/// Id-keyed store for blobs, weights and live objects.
///
/// Blobs go to RAM or to one file per id under the warehouse directory.
/// Live objects (model handles) only ever live in RAM. A warehouse opened
/// on a directory that an earlier process wrote to can read those files.
class Warehouse {
 public:
  /// Memory only; putting to the file backend throws StorageError.
  Warehouse() = default;

  explicit Warehouse(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_)) {
      throw StorageError("warehouse directory " + dir_.string() + " is not usable: " + ec.message());
    }
  }

  Warehouse(const Warehouse&) = delete;
  Warehouse& operator=(const Warehouse&) = delete;

  const std::filesystem::path& directory() const noexcept { return dir_; }

  DataId put(Bytes payload, Backend backend = Backend::File) {
    const DataId id = fresh_id();
    if (backend == Backend::File) {
      write_file(id, payload);
      std::unique_lock lock(mu_);
      index_[id] = Backend::File;
    } else {
      std::unique_lock lock(mu_);
      index_[id] = Backend::Memory;
      blobs_[id] = std::move(payload);
    }
    return id;
  }

  DataId put_weights(const ModelWeights& w, Backend backend = Backend::File) { return put(encode_weights(w), backend); }

  /// Keeps a live object in RAM, as the server does for its model.
  DataId put_handle(std::any handle) {
    const DataId id = fresh_id();
    std::unique_lock lock(mu_);
    handles_[id] = std::move(handle);
    return id;
  }

  Bytes get(const DataId& id) const {
    {
      std::shared_lock lock(mu_);
      if (auto it = blobs_.find(id); it != blobs_.end()) return it->second;
      if (auto it = index_.find(id); it != index_.end() && it->second == Backend::Memory) {
        throw NotFound("no blob " + id.hex());
      }
    }
    return read_file(id);
  }

  ModelWeights get_weights(const DataId& id) const {
    const Bytes b = get(id);
    return decode_weights(b);
  }

  std::any get_handle(const DataId& id) const {
    std::shared_lock lock(mu_);
    auto it = handles_.find(id);
    if (it == handles_.end()) throw NotFound("no handle " + id.hex());
    return it->second;
  }

  bool contains(const DataId& id) const {
    {
      std::shared_lock lock(mu_);
      if (blobs_.count(id) || handles_.count(id)) return true;
    }
    if (dir_.empty()) return false;
    std::error_code ec;
    return std::filesystem::exists(file_for(id), ec);
  }

  /// Idempotent.
  void erase(const DataId& id) {
    std::unique_lock lock(mu_);
    blobs_.erase(id);
    handles_.erase(id);
    index_.erase(id);
    if (!dir_.empty()) {
      std::error_code ec;
      std::filesystem::remove(file_for(id), ec);
    }
  }

  std::size_t issued() const {
    std::shared_lock lock(mu_);
    return issued_.size();
  }

 private:
  DataId fresh_id() {
    std::unique_lock lock(mu_);
    DataId id;
    do {
      id = DataId::random();
    } while (id.empty() || !issued_.insert(id).second);
    return id;
  }

  std::filesystem::path file_for(const DataId& id) const { return dir_ / id.hex(); }

  void write_file(const DataId& id, const Bytes& payload) const {
    if (dir_.empty()) throw StorageError("warehouse has no file directory");
    // Write aside and rename so readers never see a partial file.
    const auto final_path = file_for(id);
    auto tmp = final_path;
    tmp += ".part";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw StorageError("cannot create " + tmp.string());
      out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
      if (!out) throw StorageError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, final_path, ec);
    if (ec) throw StorageError("cannot move " + tmp.string() + " into place: " + ec.message());
  }

  Bytes read_file(const DataId& id) const {
    if (dir_.empty()) throw NotFound("no blob " + id.hex());
    std::ifstream in(file_for(id), std::ios::binary);
    if (!in) throw NotFound("no blob " + id.hex());
    Bytes out{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (in.bad()) throw StorageError("read failed for " + id.hex());
    return out;
  }

  std::filesystem::path dir_;
  mutable std::shared_mutex mu_;
  std::set<DataId> issued_;
  std::map<DataId, Backend> index_;
  std::map<DataId, Bytes> blobs_;
  std::map<DataId, std::any> handles_;
};

}  // namespace fedloom
