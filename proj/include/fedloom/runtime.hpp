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

// Networked participants.
//
// A WorkerNode is one process that hosts any number of worker models, each
// created by an AddWorkerRequest. A ServerRuntime owns the aggregation
// server model and drives an Orchestrator from network events.
//
// Training choreography for one worker model:
//
//   server -> worker   TRAIN train
//   worker -> server   MODEL fetch             (server weights)
//   server -> worker   MODEL fetch_credential
//   worker -> blob     token, downloads weights, trains
//   worker -> server   TRAIN train_done
//   server -> worker   MODEL fetch             (only if still wanted)
//   worker -> server   MODEL fetch_credential
//   server -> blob     token, downloads weights
//
// Weights only ever cross the blob port.

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "fedloom/blob.hpp"
#include "fedloom/errors.hpp"
#include "fedloom/log.hpp"
#include "fedloom/model.hpp"
#include "fedloom/net.hpp"
#include "fedloom/orchestrator.hpp"
#include "fedloom/protocol.hpp"
#include "fedloom/sim.hpp"
#include "fedloom/warehouse.hpp"

namespace fedloom {

namespace detail {

inline std::unique_ptr<Warehouse> open_warehouse(const std::filesystem::path& dir) {
  return dir.empty() ? std::make_unique<Warehouse>() : std::make_unique<Warehouse>(dir);
}

inline Backend blob_backend(const Warehouse& w) { return w.directory().empty() ? Backend::Memory : Backend::File; }

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// ===========================================================================
// Worker side

struct WorkerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;       // framed messages; 0 picks a free port
  std::uint16_t blob_port = 0;  // weights downloads
  DataPlan data;
  std::optional<std::uint32_t> default_shard;  // used when a request names none
  double learning_rate = 0.1;
  double delay_per_epoch = 0.0;  // artificial slowdown, seconds per epoch
  double credential_lifetime = kDefaultCredentialLifetime;
  double fetch_timeout = 30.0;
  std::filesystem::path data_dir;  // empty: keep blobs in memory
};

enum class WorkerStatus { Idle, Training, Transferring };

class WorkerNode {
 public:
  explicit WorkerNode(WorkerOptions opts)
      : opts_(std::move(opts)),
        warehouse_(detail::open_warehouse(opts_.data_dir)),
        blobs_(*warehouse_, opts_.host, opts_.blob_port, steady_clock_seconds(), opts_.credential_lifetime),
        listener_(opts_.host == "localhost" ? "127.0.0.1" : opts_.host, opts_.port,
                  [this](Socket& s) { serve(s); }) {}

  ~WorkerNode() { stop(); }

  Address address() const { return Address{opts_.host, listener_.port()}; }
  Address blob_address() const { return blobs_.address(); }

  std::size_t model_count() const {
    std::lock_guard lock(mu_);
    return models_.size();
  }

  /// Requests refused because the sender is not the model's server.
  std::size_t unauthorized_refusals() const { return unauthorized_.load(); }
  std::size_t trainings_completed() const { return trained_.load(); }

  void stop() {
    if (stopped_.exchange(true)) return;
    listener_.stop();
    blobs_.stop();
    std::vector<std::shared_ptr<Model>> models;
    {
      std::lock_guard lock(mu_);
      for (auto& [id, m] : models_) models.push_back(m);
    }
    {
      std::lock_guard lock(fetch_mu_);
      fetch_abort_ = true;
    }
    fetch_cv_.notify_all();
    for (auto& m : models) {
      if (m->job.joinable()) m->job.join();
    }
  }

 private:
  struct Model {
    ModelPointer self;
    ModelPointer server;
    Dataset shard;
    ModelWeights weights;
    std::mutex mu;
    WorkerStatus status = WorkerStatus::Idle;
    std::optional<DataId> trained_blob;
    std::uint64_t trained_version = 0;
    std::thread job;
  };

  void serve(Socket& s) {
    read_frames(
        s, [this](const Message& m) { handle(m); },
        [](const std::exception& e) { log(LogLevel::Warn, std::string("worker: bad frame: ") + e.what()); });
  }

  void handle(const Message& m) {
    if (const auto* r = std::get_if<AddWorkerRequest>(&m)) return on_add(*r);
    if (const auto* r = std::get_if<TrainRequest>(&m)) return on_train(*r);
    if (const auto* r = std::get_if<FetchRequest>(&m)) return on_fetch(*r);
    if (const auto* r = std::get_if<FetchCredential>(&m)) return on_credential(*r);
    log(LogLevel::Warn, "worker: ignoring unexpected action " + std::string(action_of(m)));
  }

  const std::vector<Dataset>& shards() {
    std::call_once(shards_once_, [this] { shards_ = opts_.data.shards(); });
    return shards_;
  }

  void on_add(const AddWorkerRequest& req) {
    const auto shard = req.shard ? req.shard : opts_.default_shard;
    const auto& all = shards();
    if (!shard || *shard >= all.size()) {
      log(LogLevel::Error, "worker: add request names shard " + (shard ? std::to_string(*shard) : "none") +
                               " but " + std::to_string(all.size()) + " exist");
      return;
    }
    auto m = std::make_shared<Model>();
    m->server = req.server_pointer;
    m->shard = all[*shard];
    // Same structure as the server model; real values arrive with training.
    m->weights = ModelWeights(m->shard.n_features, m->shard.n_classes);
    m->self = ModelPointer{address(), warehouse_->put_handle(m)};
    {
      std::lock_guard lock(mu_);
      models_[m->self.id] = m;
    }
    log(LogLevel::Info, "worker: model " + m->self.id.hex() + " serves " + req.server_pointer.address.str());
    try {
      send_message(req.server_pointer.address, WorkerReady{m->self, m->server, m->shard.size()});
    } catch (const TransportError& e) {
      log(LogLevel::Warn, std::string("worker: cannot answer add request: ") + e.what());
    }
  }

  std::shared_ptr<Model> find(const DataId& id) {
    std::lock_guard lock(mu_);
    auto it = models_.find(id);
    return it == models_.end() ? nullptr : it->second;
  }

  void refuse(const TrainRequest& req, const std::string& reason) {
    log(LogLevel::Warn, "worker: refusing training from " + req.server_pointer.address.str() + ": " + reason);
    try {
      send_message(req.server_pointer.address,
                   TrainRefused{req.worker_pointer, req.server_pointer, req.server_version, reason});
    } catch (const Error&) {
      // The requester may not even be listening; nothing else to do.
    }
  }

  void on_train(const TrainRequest& req) {
    auto m = find(req.worker_pointer.id);
    if (!m) return refuse(req, "unknown worker model");
    std::unique_lock lock(m->mu);
    if (req.server_pointer != m->server) {
      ++unauthorized_;
      lock.unlock();
      return refuse(req, "not this model's aggregation server");
    }
    if (m->status != WorkerStatus::Idle) {
      lock.unlock();
      return refuse(req, "busy");
    }
    if (req.epochs == 0) {
      lock.unlock();
      return refuse(req, "zero epochs requested");
    }
    m->status = WorkerStatus::Training;
    if (m->job.joinable()) m->job.join();
    m->job = std::thread([this, m, req] { run_training(m, req); });
  }

  // Runs on the model's own thread so the listener stays responsive.
  void run_training(std::shared_ptr<Model> m, TrainRequest req) {
    try {
      auto [base, base_version] = fetch_server_weights(*m);
      const auto t0 = std::chrono::steady_clock::now();
      ModelWeights trained = base;
      if (!m->shard.empty()) {
        TrainConfig tc{opts_.learning_rate, req.epochs,
                       detail::mix_seed(opts_.data.seed, base_version * 1315423911ull + m->shard.size())};
        trained = train_epochs(base, m->shard, tc);
      }
      if (opts_.delay_per_epoch > 0.0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(opts_.delay_per_epoch * req.epochs));
      }
      const double train_seconds = detail::seconds_since(t0);
      const DataId blob = warehouse_->put_weights(trained, detail::blob_backend(*warehouse_));
      std::optional<DataId> old;
      {
        std::lock_guard lock(m->mu);
        m->weights = std::move(trained);
        old = std::exchange(m->trained_blob, blob);
        m->trained_version = base_version;
        m->status = WorkerStatus::Idle;
      }
      if (old) warehouse_->erase(*old);
      ++trained_;
      send_message(m->server.address,
                   TrainDone{m->self, m->server, base_version, req.epochs, train_seconds});
    } catch (const std::exception& e) {
      {
        std::lock_guard lock(m->mu);
        m->status = WorkerStatus::Idle;
      }
      log(LogLevel::Warn, std::string("worker: training failed: ") + e.what());
      try {
        send_message(m->server.address, TrainRefused{m->self, m->server, req.server_version, e.what()});
      } catch (const Error&) {
      }
    }
  }

  // One outstanding server fetch per process: a credential names only its
  // target, so concurrent fetches of one server could not be told apart.
  std::pair<ModelWeights, std::uint64_t> fetch_server_weights(const Model& m) {
    std::lock_guard serial(fetch_serial_);
    {
      std::lock_guard lock(fetch_mu_);
      pending_.reset();
      waiting_for_ = m.server.id;
    }
    send_message(m.server.address, FetchRequest{m.server, m.self});
    std::unique_lock lock(fetch_mu_);
    const bool got = fetch_cv_.wait_for(lock, std::chrono::duration<double>(opts_.fetch_timeout),
                                        [&] { return pending_.has_value() || fetch_abort_; });
    waiting_for_.reset();
    if (!got || !pending_) throw TransportError("no credential from server within timeout");
    const FetchCredential cred = *std::exchange(pending_, std::nullopt);
    lock.unlock();
    return {decode_weights(blob_fetch(cred.credential)), cred.server_version};
  }

  void on_credential(const FetchCredential& c) {
    {
      std::lock_guard lock(fetch_mu_);
      if (!waiting_for_ || *waiting_for_ != c.target_pointer.id) {
        log(LogLevel::Warn, "worker: unsolicited credential ignored");
        return;
      }
      pending_ = c;
    }
    fetch_cv_.notify_all();
  }

  void on_fetch(const FetchRequest& req) {
    auto m = find(req.target_pointer.id);
    if (!m) {
      log(LogLevel::Warn, "worker: fetch for unknown model " + req.target_pointer.id.hex());
      return;
    }
    std::optional<DataId> blob;
    std::uint64_t version = 0;
    {
      std::lock_guard lock(m->mu);
      if (req.requester_pointer != m->server) {
        ++unauthorized_;
        log(LogLevel::Warn, "worker: fetch from a server this model does not serve");
        return;
      }
      blob = m->trained_blob;
      version = m->trained_version;
    }
    if (!blob) {
      log(LogLevel::Warn, "worker: fetch before any training");
      return;
    }
    try {
      send_message(req.requester_pointer.address, FetchCredential{blobs_.offer(*blob), m->self, version});
    } catch (const Error& e) {
      log(LogLevel::Warn, std::string("worker: cannot offer weights: ") + e.what());
    }
  }

  WorkerOptions opts_;
  std::unique_ptr<Warehouse> warehouse_;
  BlobServer blobs_;
  mutable std::mutex mu_;
  std::map<DataId, std::shared_ptr<Model>> models_;
  std::once_flag shards_once_;
  std::vector<Dataset> shards_;

  std::mutex fetch_serial_;
  std::mutex fetch_mu_;
  std::condition_variable fetch_cv_;
  std::optional<DataId> waiting_for_;
  std::optional<FetchCredential> pending_;
  bool fetch_abort_ = false;

  std::atomic<std::size_t> unauthorized_{0};
  std::atomic<std::size_t> trained_{0};
  std::atomic<bool> stopped_{false};
  // Declared last: its threads call into the members above.
  Listener listener_;
};

// ===========================================================================
// Server side

struct ServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::uint16_t blob_port = 0;
  OrchestratorConfig orchestrator;
  double credential_lifetime = kDefaultCredentialLifetime;
  double round_timeout = 60.0;  // a worker silent this long is dropped from its round
  std::filesystem::path data_dir;
};

class ServerRuntime {
 public:
  ServerRuntime(ServerOptions opts, ModelWeights initial, Dataset test)
      : opts_(std::move(opts)),
        warehouse_(detail::open_warehouse(opts_.data_dir)),
        orch_(opts_.orchestrator, initial, std::move(test)),
        blobs_(*warehouse_, opts_.host, opts_.blob_port, steady_clock_seconds(), opts_.credential_lifetime),
        transport_(*this),
        listener_(opts_.host == "localhost" ? "127.0.0.1" : opts_.host, opts_.port,
                  [this](Socket& s) { serve(s); }) {
    self_ = ModelPointer{Address{opts_.host, listener_.port()}, warehouse_->put_handle(std::string("server-model"))};
    publish(orch_.state());
    probe_ = measure_probe(initial);
  }

  ~ServerRuntime() { stop(); }

  ModelPointer pointer() const { return self_; }
  Address address() const { return self_.address; }
  const Orchestrator& orchestrator() const { return orch_; }
  std::size_t worker_count() const { return orch_.worker_count(); }

  void stop() {
    if (stopped_.exchange(true)) return;
    listener_.stop();
    blobs_.stop();
  }

  /// Runs the add-worker handshake with the process at `addr`. On failure
  /// the worker registry is left unchanged and TransportError is thrown.
  WorkerId add_worker(const Address& addr, std::optional<std::uint32_t> shard, double timeout_seconds = 10.0) {
    const auto t0 = std::chrono::steady_clock::now();
    {
      std::lock_guard lock(mu_);
      handshake_.reset();
      handshake_open_ = true;
    }
    struct Close {
      ServerRuntime* s;
      ~Close() {
        std::lock_guard lock(s->mu_);
        s->handshake_open_ = false;
      }
    } close{this};
    send_message(addr, AddWorkerRequest{self_, shard});
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, std::chrono::duration<double>(timeout_seconds), [&] { return handshake_.has_value(); })) {
      throw TransportError("worker at " + addr.str() + " did not answer the add request");
    }
    const WorkerReady ready = *handshake_;
    lock.unlock();

    WorkerProfile p;
    p.data_count = ready.data_count;
    p.t_transmit = detail::seconds_since(t0);
    p.t_one = p.data_count > 0 ? estimate_t_one(probe_, p) : 0.0;
    const WorkerId id = orch_.add_worker(p);
    std::lock_guard reg(mu_);
    peers_.push_back(Peer{ready.worker_pointer, addr});
    by_model_[ready.worker_pointer.id] = id;
    log(LogLevel::Info, "server: worker " + std::to_string(id) + " ready with " + std::to_string(p.data_count) +
                            " samples");
    return id;
  }

  /// Trains until `rounds` aggregations have completed.
  std::vector<RoundRecord> run(std::uint32_t rounds) {
    start_ = std::chrono::steady_clock::now();
    if (orch_.worker_count() == 0) throw InvalidArgument("server: no workers registered");
    if (opts_.orchestrator.mode == Mode::Async) {
      orch_.begin_async(transport_);
      std::size_t idle_polls = 0;
      while (orch_.records().size() < rounds) {
        pump();
        expire_silent_workers();
        if (orch_.any_in_flight() || pending_events()) {
          idle_polls = 0;
        } else if (++idle_polls > 50) {
          throw TransportError("async loop stalled: no worker is training");
        }
      }
    } else {
      std::uint32_t empty_streak = 0;
      std::uint32_t failed_streak = 0;
      while (orch_.records().size() < rounds) {
        const auto version_before = orch_.state().version;
        const auto start = orch_.begin_sync_round(transport_);
        if (start == RoundStart::EmptySelection) {
          if (++empty_streak > orch_.worker_count() + 1) throw InvalidArgument("server: selector never selects a worker");
          continue;
        }
        empty_streak = 0;
        if (start == RoundStart::Failed) {
          if (++failed_streak > 3) throw TransportError("server: no selected worker can be reached");
          continue;
        }
        while (orch_.round_active()) {
          pump();
          expire_silent_workers();
        }
        // An aborted round leaves the version untouched; try again.
        failed_streak = orch_.state().version == version_before ? failed_streak + 1 : 0;
        if (failed_streak > 3) throw TransportError("server: every selected worker keeps failing");
      }
    }
    return orch_.records();
  }

 private:
  struct Peer {
    ModelPointer pointer;
    Address address;  // where it was reached during the handshake
  };

  // Main-loop events, produced by listener threads.
  struct EvTrainDone {
    WorkerId worker;
    TrainDone msg;
  };
  struct EvRefused {
    WorkerId worker;
  };
  struct EvWeights {
    WorkerId worker;
    std::uint64_t base_version;
    ModelWeights weights;
  };
  using Event = std::variant<EvTrainDone, EvRefused, EvWeights>;

  class NetTransport final : public Transport {
   public:
    explicit NetTransport(ServerRuntime& s) : s_(s) {}
    double now() override { return detail::seconds_since(s_.start_); }
    bool request_training(WorkerId w, std::uint64_t version, std::uint32_t epochs) override {
      const Peer peer = s_.peer(w);
      try {
        send_message(peer.address, TrainRequest{peer.pointer, s_.self_, epochs, version});
      } catch (const TransportError& e) {
        log(LogLevel::Warn, "server: cannot reach worker " + std::to_string(w) + ": " + e.what());
        return false;
      }
      auto& t = s_.timing_[w];
      t.dispatched = std::chrono::steady_clock::now();
      t.epochs = epochs;
      t.train_seconds.reset();
      return true;
    }

   private:
    ServerRuntime& s_;
  };

  struct Timing {
    std::chrono::steady_clock::time_point dispatched;
    std::uint32_t epochs = 0;
    std::optional<double> train_seconds;
  };

  Peer peer(WorkerId w) const {
    std::lock_guard lock(mu_);
    return peers_.at(w);
  }

  std::optional<WorkerId> worker_of(const DataId& id) const {
    std::lock_guard lock(mu_);
    auto it = by_model_.find(id);
    if (it == by_model_.end()) return std::nullopt;
    return it->second;
  }

  void push(Event e) {
    {
      std::lock_guard lock(mu_);
      events_.push_back(std::move(e));
    }
    cv_.notify_all();
  }

  bool pending_events() const {
    std::lock_guard lock(mu_);
    return !events_.empty();
  }

  // Waits briefly for events, applies every queued one, then polls once.
  void pump() {
    std::deque<Event> batch;
    {
      std::unique_lock lock(mu_);
      cv_.wait_for(lock, std::chrono::milliseconds(100), [&] { return !events_.empty(); });
      batch.swap(events_);
    }
    for (auto& e : batch) apply(e);
    if (auto rec = orch_.poll(transport_)) {
      publish(orch_.state());
      log(LogLevel::Info, "server: round " + std::to_string(rec->round_index) + " accuracy " +
                              detail::accuracy_text(rec->accuracy));
    }
  }

  void apply(Event& e) {
    if (auto* d = std::get_if<EvTrainDone>(&e)) {
      timing_[d->worker].train_seconds = d->msg.train_seconds;
      if (!orch_.in_flight(d->worker)) return;
      if (d->msg.server_version > orch_.state().version) {
        orch_.on_failure(d->worker);
        return;
      }
      if (orch_.on_train_done(d->worker, d->msg.server_version) == Acceptance::RejectStale) {
        log(LogLevel::Debug, "server: ignoring stale result of worker " + std::to_string(d->worker));
        return;
      }
      const Peer p = peer(d->worker);
      try {
        send_message(p.address, FetchRequest{p.pointer, self_});
      } catch (const TransportError&) {
        orch_.on_failure(d->worker);
      }
    } else if (auto* r = std::get_if<EvRefused>(&e)) {
      orch_.on_failure(r->worker);
    } else if (auto* wv = std::get_if<EvWeights>(&e)) {
      const auto& t = timing_[wv->worker];
      WorkerResponse resp;
      resp.worker = wv->worker;
      resp.base_version = wv->base_version;
      resp.epochs = std::max<std::uint32_t>(t.epochs, 1);
      resp.weights = std::move(wv->weights);
      resp.data_count = orch_.profile(wv->worker).data_count;
      std::optional<double> train = t.train_seconds;
      std::optional<double> transmit;
      if (train) transmit = std::max(0.0, detail::seconds_since(t.dispatched) - *train);
      orch_.on_response(std::move(resp), train, transmit);
    }
  }

  void expire_silent_workers() {
    const auto now = std::chrono::steady_clock::now();
    for (WorkerId w = 0; w < orch_.worker_count(); ++w) {
      if (!orch_.in_flight(w)) continue;
      const auto it = timing_.find(w);
      if (it == timing_.end()) continue;
      if (std::chrono::duration<double>(now - it->second.dispatched).count() > opts_.round_timeout) {
        log(LogLevel::Warn, "server: worker " + std::to_string(w) + " timed out");
        orch_.on_failure(w);
      }
    }
  }

  // Makes `state` the model handed to fetching workers. Older exports are
  // dropped once two newer ones exist.
  void publish(const ServerModelState& state) {
    const DataId id = warehouse_->put_weights(state.weights, detail::blob_backend(*warehouse_));
    std::lock_guard lock(mu_);
    published_.push_back({state.version, id});
    while (published_.size() > 3) {
      warehouse_->erase(published_.front().second);
      published_.pop_front();
    }
  }

  static ServerProbe measure_probe(const ModelWeights& w) {
    // Times one pass over a small synthetic batch to price one sample.
    Dataset d{w.n_features, w.n_classes, {}};
    for (std::uint32_t i = 0; i < 64; ++i) d.samples.push_back({std::vector<double>(w.n_features, 0.5), i % w.n_classes});
    const auto t0 = std::chrono::steady_clock::now();
    train_epochs(w, d, TrainConfig{0.01, 1, 1});
    const double per = std::max(detail::seconds_since(t0) / 64.0, 1e-9);
    return ServerProbe{per, 1.0};
  }

  void serve(Socket& s) {
    read_frames(
        s, [this](const Message& m) { handle(m); },
        [](const std::exception& e) { log(LogLevel::Warn, std::string("server: bad frame: ") + e.what()); });
  }

  void handle(const Message& m) {
    if (const auto* r = std::get_if<WorkerReady>(&m)) {
      if (r->server_pointer != self_) return;
      {
        std::lock_guard lock(mu_);
        if (by_model_.count(r->worker_pointer.id)) return;  // duplicate: already recorded
        if (!handshake_open_) return;
        handshake_ = *r;
      }
      cv_.notify_all();
    } else if (const auto* r = std::get_if<TrainDone>(&m)) {
      if (auto w = worker_of(r->worker_pointer.id); w && r->server_pointer == self_) push(EvTrainDone{*w, *r});
    } else if (const auto* r = std::get_if<TrainRefused>(&m)) {
      if (auto w = worker_of(r->worker_pointer.id); w && r->server_pointer == self_) {
        log(LogLevel::Info, "server: worker " + std::to_string(*w) + " refused: " + r->reason);
        push(EvRefused{*w});
      }
    } else if (const auto* r = std::get_if<FetchRequest>(&m)) {
      on_fetch(*r);
    } else if (const auto* r = std::get_if<FetchCredential>(&m)) {
      on_credential(*r);
    } else {
      log(LogLevel::Warn, "server: ignoring unexpected action " + std::string(action_of(m)));
    }
  }

  // A worker wants the current server model.
  void on_fetch(const FetchRequest& req) {
    if (req.target_pointer != self_ || !worker_of(req.requester_pointer.id)) {
      log(LogLevel::Warn, "server: fetch from an unknown participant refused");
      return;
    }
    std::pair<std::uint64_t, DataId> current;
    {
      std::lock_guard lock(mu_);
      current = published_.back();
    }
    const auto w = *worker_of(req.requester_pointer.id);
    try {
      send_message(peer(w).address, FetchCredential{blobs_.offer(current.second), self_, current.first});
    } catch (const Error& e) {
      log(LogLevel::Warn, std::string("server: cannot offer model: ") + e.what());
    }
  }

  // A worker offered its trained weights; download off the main loop.
  void on_credential(const FetchCredential& c) {
    const auto w = worker_of(c.target_pointer.id);
    if (!w) return;
    try {
      push(EvWeights{*w, c.server_version, decode_weights(blob_fetch(c.credential))});
    } catch (const Error& e) {
      log(LogLevel::Warn, "server: download from worker " + std::to_string(*w) + " failed: " + e.what());
      push(EvRefused{*w});
    }
  }

  ServerOptions opts_;
  std::unique_ptr<Warehouse> warehouse_;
  Orchestrator orch_;
  BlobServer blobs_;
  NetTransport transport_;
  ModelPointer self_;
  ServerProbe probe_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Event> events_;
  std::vector<Peer> peers_;
  std::map<DataId, WorkerId> by_model_;
  std::deque<std::pair<std::uint64_t, DataId>> published_;
  std::optional<WorkerReady> handshake_;
  bool handshake_open_ = false;
  std::map<WorkerId, Timing> timing_;  // main loop only
  std::atomic<bool> stopped_{false};
  Listener listener_;
};

}  // namespace fedloom
