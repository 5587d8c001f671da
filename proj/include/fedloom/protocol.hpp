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

// Participant messaging. A frame is
//
//   u32 big-endian length of what follows | 5-byte topic | JSON body
//
// and the body's "action" field picks the message inside a topic.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fedloom/errors.hpp"
#include "fedloom/warehouse.hpp"

namespace fedloom {

inline constexpr std::size_t kTopicSize = 5;
inline constexpr std::size_t kMaxBodySize = std::size_t{1} << 24;

enum class Topic { Relationship, Training, Transfer };

inline std::string_view topic_tag(Topic t) {
  switch (t) {
    case Topic::Relationship:
      return "RELAT";
    case Topic::Training:
      return "TRAIN";
    case Topic::Transfer:
      return "MODEL";
  }
  return "";
}

inline std::optional<Topic> topic_from_tag(std::string_view tag) {
  if (tag == "RELAT") return Topic::Relationship;
  if (tag == "TRAIN") return Topic::Training;
  if (tag == "MODEL") return Topic::Transfer;
  return std::nullopt;
}

struct TransferCredential {
  Address address;  // blob port of the holder
  DataId resource;
  std::string token;  // 32 hex chars
  bool single_use = true;
  friend bool operator==(const TransferCredential&, const TransferCredential&) = default;
};

// RELAT ----------------------------------------------------------------------

/// Server invites a worker. `shard` optionally tells the worker which slice
/// of the shared dataset to load.
struct AddWorkerRequest {
  ModelPointer server_pointer;
  std::optional<std::uint32_t> shard;
  friend bool operator==(const AddWorkerRequest&, const AddWorkerRequest&) = default;
};

struct WorkerReady {
  ModelPointer worker_pointer;
  ModelPointer server_pointer;
  std::uint64_t data_count = 0;
  friend bool operator==(const WorkerReady&, const WorkerReady&) = default;
};

// TRAIN ----------------------------------------------------------------------

struct TrainRequest {
  ModelPointer worker_pointer;
  ModelPointer server_pointer;
  std::uint32_t epochs = 1;
  std::uint64_t server_version = 0;
  friend bool operator==(const TrainRequest&, const TrainRequest&) = default;
};

struct TrainDone {
  ModelPointer worker_pointer;
  ModelPointer server_pointer;
  std::uint64_t server_version = 0;
  std::uint32_t epochs_trained = 0;
  std::optional<double> train_seconds;  // worker-measured local training time
  friend bool operator==(const TrainDone&, const TrainDone&) = default;
};

/// A busy worker turns down a request instead of queueing it.
struct TrainRefused {
  ModelPointer worker_pointer;
  ModelPointer server_pointer;
  std::uint64_t server_version = 0;
  std::string reason;
  friend bool operator==(const TrainRefused&, const TrainRefused&) = default;
};

// MODEL ----------------------------------------------------------------------

struct FetchRequest {
  ModelPointer target_pointer;
  ModelPointer requester_pointer;
  friend bool operator==(const FetchRequest&, const FetchRequest&) = default;
};

struct FetchCredential {
  TransferCredential credential;
  ModelPointer target_pointer;
  std::uint64_t server_version = 0;
  friend bool operator==(const FetchCredential&, const FetchCredential&) = default;
};

using Message = std::variant<AddWorkerRequest, WorkerReady, TrainRequest, TrainDone, TrainRefused, FetchRequest,
                             FetchCredential>;

inline Topic topic_of(const Message& m) {
  switch (m.index()) {
    case 0:
    case 1:
      return Topic::Relationship;
    case 2:
    case 3:
    case 4:
      return Topic::Training;
    default:
      return Topic::Transfer;
  }
}

inline std::string_view action_of(const Message& m) {
  static constexpr std::string_view kNames[] = {"add_worker", "worker_ready",  "train",         "train_done",
                                                "train_refused", "fetch", "fetch_credential"};
  return kNames[m.index()];
}

struct Frame {
  Topic topic = Topic::Relationship;
  std::string body;
  friend bool operator==(const Frame&, const Frame&) = default;
};

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

using nlohmann::json;

inline json to_json(const Address& a) { return json{{"host", a.host}, {"port", a.port}}; }

inline json to_json(const ModelPointer& p) {
  return json{{"host", p.address.host}, {"port", p.address.port}, {"id", p.id.hex()}};
}

inline json to_json(const TransferCredential& c) {
  return json{{"host", c.address.host},
              {"port", c.address.port},
              {"resource", c.resource.hex()},
              {"token", c.token},
              {"single_use", c.single_use}};
}

inline Address address_from(const json& j) {
  Address a;
  a.host = j.at("host").get<std::string>();
  const auto port = j.at("port").get<std::int64_t>();
  if (port < 0 || port > 65535) throw ParseError("port out of range: " + std::to_string(port));
  a.port = static_cast<std::uint16_t>(port);
  return a;
}

inline ModelPointer pointer_from(const json& j) {
  ModelPointer p;
  p.address = address_from(j);
  p.id = DataId::parse(j.at("id").get<std::string>());
  return p;
}

inline TransferCredential credential_from(const json& j) {
  TransferCredential c;
  c.address = address_from(j);
  c.resource = DataId::parse(j.at("resource").get<std::string>());
  c.token = j.at("token").get<std::string>();
  c.single_use = j.value("single_use", true);
  return c;
}

inline json message_to_json(const Message& m) {
  json j;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, AddWorkerRequest>) {
          j["server_pointer"] = to_json(v.server_pointer);
          if (v.shard) j["shard"] = *v.shard;
        } else if constexpr (std::is_same_v<T, WorkerReady>) {
          j["worker_pointer"] = to_json(v.worker_pointer);
          j["server_pointer"] = to_json(v.server_pointer);
          j["data_count"] = v.data_count;
        } else if constexpr (std::is_same_v<T, TrainRequest>) {
          j["worker_pointer"] = to_json(v.worker_pointer);
          j["server_pointer"] = to_json(v.server_pointer);
          j["epochs"] = v.epochs;
          j["server_version"] = v.server_version;
        } else if constexpr (std::is_same_v<T, TrainDone>) {
          j["worker_pointer"] = to_json(v.worker_pointer);
          j["server_pointer"] = to_json(v.server_pointer);
          j["server_version"] = v.server_version;
          j["epochs_trained"] = v.epochs_trained;
          if (v.train_seconds) j["train_seconds"] = *v.train_seconds;
        } else if constexpr (std::is_same_v<T, TrainRefused>) {
          j["worker_pointer"] = to_json(v.worker_pointer);
          j["server_pointer"] = to_json(v.server_pointer);
          j["server_version"] = v.server_version;
          j["reason"] = v.reason;
        } else if constexpr (std::is_same_v<T, FetchRequest>) {
          j["target_pointer"] = to_json(v.target_pointer);
          j["requester_pointer"] = to_json(v.requester_pointer);
        } else {
          j["credential"] = to_json(v.credential);
          j["target_pointer"] = to_json(v.target_pointer);
          j["server_version"] = v.server_version;
        }
      },
      m);
  j["action"] = action_of(m);
  return j;
}

inline Message message_from_json(Topic topic, const json& j) {
  const auto action = j.at("action").get<std::string>();
  auto expect = [&](Topic t) {
    if (topic != t) {
      throw ParseError("action '" + action + "' does not belong to topic " + std::string(topic_tag(topic)));
    }
  };
  if (action == "add_worker") {
    expect(Topic::Relationship);
    AddWorkerRequest m{pointer_from(j.at("server_pointer")), std::nullopt};
    if (j.contains("shard")) m.shard = j.at("shard").get<std::uint32_t>();
    return m;
  }
  if (action == "worker_ready") {
    expect(Topic::Relationship);
    return WorkerReady{pointer_from(j.at("worker_pointer")), pointer_from(j.at("server_pointer")),
                       j.at("data_count").get<std::uint64_t>()};
  }
  if (action == "train") {
    expect(Topic::Training);
    return TrainRequest{pointer_from(j.at("worker_pointer")), pointer_from(j.at("server_pointer")),
                        j.at("epochs").get<std::uint32_t>(), j.at("server_version").get<std::uint64_t>()};
  }
  if (action == "train_done") {
    expect(Topic::Training);
    TrainDone m{pointer_from(j.at("worker_pointer")), pointer_from(j.at("server_pointer")),
                j.at("server_version").get<std::uint64_t>(), j.at("epochs_trained").get<std::uint32_t>(),
                std::nullopt};
    if (j.contains("train_seconds")) m.train_seconds = j.at("train_seconds").get<double>();
    return m;
  }
  if (action == "train_refused") {
    expect(Topic::Training);
    return TrainRefused{pointer_from(j.at("worker_pointer")), pointer_from(j.at("server_pointer")),
                        j.at("server_version").get<std::uint64_t>(), j.value("reason", std::string())};
  }
  if (action == "fetch") {
    expect(Topic::Transfer);
    return FetchRequest{pointer_from(j.at("target_pointer")), pointer_from(j.at("requester_pointer"))};
  }
  if (action == "fetch_credential") {
    expect(Topic::Transfer);
    return FetchCredential{credential_from(j.at("credential")), pointer_from(j.at("target_pointer")),
                           j.at("server_version").get<std::uint64_t>()};
  }
  throw ParseError("unknown action '" + action + "'");
}

inline void append_be32(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace detail

/// Raw framing. Throws MessageTooLarge for bodies over 2^24 bytes.
inline std::string encode_frame(const Frame& frame) {
  if (frame.body.size() > kMaxBodySize) {
    throw MessageTooLarge("frame body of " + std::to_string(frame.body.size()) + " bytes exceeds " +
                          std::to_string(kMaxBodySize));
  }
  std::string out;
  out.reserve(4 + kTopicSize + frame.body.size());
  detail::append_be32(out, static_cast<std::uint32_t>(kTopicSize + frame.body.size()));
  out += topic_tag(frame.topic);
  out += frame.body;
  return out;
}

inline Frame to_frame(const Message& m) { return Frame{topic_of(m), detail::message_to_json(m).dump()}; }

inline std::string encode_frame(const Message& m) { return encode_frame(to_frame(m)); }

/// Parses a frame body. Throws ParseError on malformed JSON or missing fields.
inline Message decode_message(const Frame& frame) {
  try {
    const auto j = nlohmann::json::parse(frame.body);
    if (!j.is_object()) throw ParseError("frame body is not an object");
    return detail::message_from_json(frame.topic, j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed ") + std::string(topic_tag(frame.topic)) + " body: " + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
}

/// Incremental frame reader for a byte stream. next() yields nullopt while
/// the buffered bytes do not yet hold a whole frame.
class FrameDecoder {
 public:
  void feed(std::string_view bytes) { buf_.append(bytes); }
  void feed(const char* data, std::size_t n) { buf_.append(data, n); }

  std::size_t buffered() const noexcept { return buf_.size(); }

  /// Throws UnknownTopic or MessageTooLarge; in both cases the offending frame
  /// has already been skipped (or the stream must be dropped for oversize).
  std::optional<Frame> next() {
    if (buf_.size() < 4) return std::nullopt;
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len = (len << 8) | static_cast<unsigned char>(buf_[i]);
    if (len < kTopicSize) {
      buf_.erase(0, 4 + std::min<std::size_t>(len, buf_.size() - 4));
      throw ParseError("frame length " + std::to_string(len) + " is shorter than a topic");
    }
    if (len - kTopicSize > kMaxBodySize) {
      throw MessageTooLarge("incoming frame of " + std::to_string(len) + " bytes exceeds limit");
    }
    if (buf_.size() < 4 + std::size_t{len}) return std::nullopt;
    const std::string tag = buf_.substr(4, kTopicSize);
    std::string body = buf_.substr(4 + kTopicSize, len - kTopicSize);
    buf_.erase(0, 4 + std::size_t{len});
    const auto topic = topic_from_tag(tag);
    if (!topic) throw UnknownTopic("unknown topic '" + tag + "'");
    return Frame{*topic, std::move(body)};
  }

 private:
  std::string buf_;
};

/// Decodes one complete frame held in `bytes`.
inline Message decode_frame(std::string_view bytes) {
  FrameDecoder d;
  d.feed(bytes);
  auto f = d.next();
  if (!f) throw ParseError("incomplete frame");
  if (d.buffered() != 0) throw ParseError("trailing bytes after frame");
  return decode_message(*f);
}

/// Routes each message to the handler of its topic. All three handlers are
/// required up front.
class Dispatcher {
 public:
  using Handler = std::function<void(const Message&)>;

  Dispatcher(Handler relationship, Handler training, Handler transfer)
      : handlers_{std::move(relationship), std::move(training), std::move(transfer)} {
    static constexpr const char* kNames[] = {"relationship", "training", "transfer"};
    for (int i = 0; i < 3; ++i) {
      if (!handlers_[i]) throw ConfigError(std::string("no ") + kNames[i] + " handler registered");
    }
  }

  void dispatch(const Message& m) const { handlers_[static_cast<int>(topic_of(m))](m); }

 private:
  Handler handlers_[3];
};

}  // namespace fedloom
