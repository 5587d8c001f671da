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

// Discrete-event execution of the orchestrator on a virtual clock.
//
// Training is real SGD on real shards; only durations are synthetic. A shard
// of n samples trained for e epochs costs n * e * unit_cost * speed_class
// virtual seconds, and each weights round trip costs transmit_delay.

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "fedloom/aggregation.hpp"
#include "fedloom/errors.hpp"
#include "fedloom/model.hpp"
#include "fedloom/orchestrator.hpp"
#include "fedloom/selection.hpp"
#include "fedloom/telemetry.hpp"

namespace fedloom {

struct SimWorkerSpec {
  double speed_class = 1.0;     // multiplier on reference train time
  double transmit_delay = 0.0;  // seconds per weights round trip
  std::uint32_t allocation = 0; // batches of data
};

enum class RunMode { Sync, Async, Sequential };

inline const char* to_string(RunMode m) {
  switch (m) {
    case RunMode::Sync:
      return "sync";
    case RunMode::Async:
      return "async";
    case RunMode::Sequential:
      return "sequential";
  }
  return "sync";
}

/// Synthetic task shared by every participant of a scenario.
struct TaskSpec {
  std::uint32_t n_classes = 10;
  std::uint32_t n_features = 0;  // 0: just enough for the class codes
  double spread = 0.3;
  std::uint32_t train_per_class = 100;
  std::uint32_t test_per_class = 100;
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::vector<SimWorkerSpec> workers;
  std::uint32_t batch_size = 100;
  TaskSpec task;
  SelectorConfig selector = SelectAll{};
  AggregationPolicy policy = FedAvg{};
  RunMode mode = RunMode::Sync;
  std::uint32_t rounds = 50;
  std::uint32_t epochs = 10;
  double learning_rate = 0.1;
  double unit_cost = 1e-3;
  double target_accuracy = 0.8;
  double time_limit = 0.0;  // virtual seconds; 0 disables
};

/// Virtual time, advanced only by popping events.
class VirtualClock {
 public:
  double now() const noexcept { return now_; }
  void advance_to(double t) {
    if (t < now_) throw InvalidArgument("VirtualClock: time cannot move backwards");
    now_ = t;
  }

 private:
  double now_ = 0.0;
};

enum class SimEventKind { Dispatch, TrainComplete, TransferComplete };

struct SimEvent {
  double due = 0.0;
  std::uint64_t seq = 0;  // insertion order, breaks ties
  SimEventKind kind = SimEventKind::Dispatch;
  WorkerId worker = 0;
};

struct SimEventLater {
  bool operator()(const SimEvent& a, const SimEvent& b) const {
    if (a.due != b.due) return a.due > b.due;
    return a.seq > b.seq;
  }
};

/// Rejects configurations that cannot run, before any event is scheduled.
inline void validate(const ScenarioConfig& cfg) {
  if (cfg.workers.empty()) throw ConfigError("scenario '" + cfg.name + "': no workers");
  std::size_t holders = 0;
  for (std::size_t i = 0; i < cfg.workers.size(); ++i) {
    const auto& w = cfg.workers[i];
    if (!(w.speed_class > 0.0)) throw ConfigError("worker " + std::to_string(i) + ": speed_class must be > 0");
    if (!(w.transmit_delay >= 0.0)) throw ConfigError("worker " + std::to_string(i) + ": transmit_delay must be >= 0");
    if (w.allocation > 0) ++holders;
  }
  if (holders == 0) throw ConfigError("scenario '" + cfg.name + "': no worker holds data");
  if (cfg.mode == RunMode::Sequential && holders != 1) {
    throw ConfigError("scenario '" + cfg.name + "': sequential mode needs exactly one worker holding data");
  }
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (cfg.rounds == 0) throw ConfigError("rounds must be >= 1");
  if (cfg.epochs == 0) throw ConfigError("epochs must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(cfg.unit_cost > 0.0)) throw ConfigError("unit_cost must be > 0");
  if (cfg.task.n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (!(cfg.task.spread > 0.0)) throw ConfigError("spread must be > 0");
  if (cfg.task.test_per_class == 0) throw ConfigError("test_per_class must be >= 1");
  std::size_t needed = 0;
  for (const auto& w : cfg.workers) needed += static_cast<std::size_t>(w.allocation) * cfg.batch_size;
  const std::size_t available = static_cast<std::size_t>(cfg.task.train_per_class) * cfg.task.n_classes;
  if (needed > available) {
    throw ConfigError("allocation needs " + std::to_string(needed) + " samples, task provides " +
                      std::to_string(available));
  }
  if (const auto* r = std::get_if<SelectRandom>(&cfg.selector); r && r->k == 0) {
    throw ConfigError("random selector needs k >= 1");
  }
  if (const auto* p = std::get_if<Weighted>(&cfg.policy);
      p && p->scheme != StalenessScheme::Linear && !(p->a > 0.0)) {
    throw ConfigError("staleness parameter a must be > 0");
  }
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

class SimTransport final : public Transport {
 public:
  SimTransport(const ScenarioConfig& cfg, std::vector<Dataset> shards, std::uint64_t seed)
      : cfg_(cfg), shards_(std::move(shards)), seed_(seed), jobs_(cfg.workers.size()) {}

  void bind(Orchestrator& orch) { orch_ = &orch; }

  double now() override { return clock_.now(); }

  bool request_training(WorkerId w, std::uint64_t version, std::uint32_t epochs) override {
    auto& job = jobs_.at(w);
    if (job.busy) return false;
    job.busy = true;
    job.base_version = version;
    job.base = orch_->state().weights;
    job.epochs = epochs;
    job.dispatched_at = clock_.now();
    job.train_seconds = static_cast<double>(shards_[w].size()) * epochs * cfg_.unit_cost * cfg_.workers[w].speed_class;
    job.transmit_seconds = cfg_.workers[w].transmit_delay;
    push(clock_.now() + job.train_seconds, SimEventKind::TrainComplete, w);
    return true;
  }

  /// Pops every event due at the earliest time, then lets the orchestrator
  /// react. Returns false when the queue is empty.
  bool step() {
    if (queue_.empty()) return false;
    const double due = queue_.top().due;
    clock_.advance_to(due);
    while (!queue_.empty() && queue_.top().due == due) {
      const SimEvent ev = queue_.top();
      queue_.pop();
      handle(ev);
    }
    return true;
  }

  bool idle() const { return queue_.empty(); }
  double next_due() const {
    return queue_.empty() ? std::numeric_limits<double>::infinity() : queue_.top().due;
  }

 private:
  struct Job {
    bool busy = false;
    std::uint64_t base_version = 0;
    ModelWeights base;
    std::uint32_t epochs = 0;
    double dispatched_at = 0.0;
    double train_seconds = 0.0;
    double transmit_seconds = 0.0;
    std::uint64_t runs = 0;
  };

  void push(double due, SimEventKind kind, WorkerId w) { queue_.push({due, next_seq_++, kind, w}); }

  void handle(const SimEvent& ev) {
    auto& job = jobs_.at(ev.worker);
    switch (ev.kind) {
      case SimEventKind::Dispatch:
        break;
      case SimEventKind::TrainComplete:
        if (orch_->on_train_done(ev.worker, job.base_version) == Acceptance::Accept) {
          push(clock_.now() + job.transmit_seconds, SimEventKind::TransferComplete, ev.worker);
        } else {
          job.busy = false;
        }
        break;
      case SimEventKind::TransferComplete: {
        TrainConfig tc{cfg_.learning_rate, job.epochs, mix_seed(seed_, (std::uint64_t{ev.worker} << 32) + job.runs)};
        ++job.runs;
        WorkerResponse r;
        r.worker = ev.worker;
        r.base_version = job.base_version;
        r.epochs = job.epochs;
        r.weights = train_epochs(job.base, shards_[ev.worker], tc);
        r.data_count = shards_[ev.worker].size();
        job.busy = false;
        orch_->on_response(std::move(r), job.train_seconds, job.transmit_seconds);
        break;
      }
    }
  }

  const ScenarioConfig& cfg_;
  std::vector<Dataset> shards_;
  std::uint64_t seed_;
  std::vector<Job> jobs_;
  Orchestrator* orch_ = nullptr;
  VirtualClock clock_;
  std::priority_queue<SimEvent, std::vector<SimEvent>, SimEventLater> queue_;
  std::uint64_t next_seq_ = 0;
};

}  // namespace detail

/// How a seed turns into train data, test data and shards. Shared by the
/// simulator and the networked runtime so both see the same data.
struct DataPlan {
  TaskSpec task;
  std::uint64_t seed = 1;
  AllocationRow row;

  Dataset train_set() const {
    return synth_dataset(task.n_classes, task.train_per_class, task.spread, seed, task.n_features);
  }
  Dataset test_set() const {
    return synth_dataset(task.n_classes, task.test_per_class, task.spread, detail::mix_seed(seed, 1), task.n_features);
  }
  std::vector<Dataset> shards() const { return partition(train_set(), row, detail::mix_seed(seed, 2)); }
  ModelWeights initial_weights() const {
    const auto nf = task.n_features > 0 ? task.n_features : code_bits(task.n_classes);
    return init_weights(nf, task.n_classes, detail::mix_seed(seed, 4));
  }
};

/// Everything a run produces; `records` is what gets exported.
struct ScenarioRun {
  std::vector<RoundRecord> records;
  std::vector<ConsumedResponse> consumed;
  ServerModelState final_state;
};

/// Runs one scenario to completion (rounds aggregations, or the time limit).
inline ScenarioRun run_scenario_full(const ScenarioConfig& cfg, std::uint64_t seed) {
  validate(cfg);

  DataPlan plan{cfg.task, seed, {}};
  plan.row.batch_size = cfg.batch_size;
  for (const auto& w : cfg.workers) plan.row.batches_per_worker.push_back(w.allocation);
  auto shards = plan.shards();

  OrchestratorConfig oc;
  oc.mode = cfg.mode == RunMode::Async ? Mode::Async : Mode::Sync;
  oc.policy = cfg.policy;
  oc.selector = cfg.mode == RunMode::Sequential ? SelectorConfig{SelectAll{}} : cfg.selector;
  oc.epochs = cfg.epochs;
  if (auto* rs = std::get_if<SelectRandom>(&oc.selector)) rs->seed = detail::mix_seed(rs->seed ^ seed, 3);

  Orchestrator orch(oc, plan.initial_weights(), plan.test_set());

  // Profiles go through the same estimate pathway as a networked server: the
  // probe is the reference per-sample cost; slower workers look like slower CPUs.
  const ServerProbe probe{cfg.unit_cost, 1.0};
  for (std::size_t i = 0; i < cfg.workers.size(); ++i) {
    WorkerProfile p;
    p.cpu_freq = 1.0 / cfg.workers[i].speed_class;
    p.cpu_prop = 1.0;
    p.data_count = shards[i].size();
    p.t_one = p.data_count > 0 ? estimate_t_one(probe, p) : 0.0;
    p.t_transmit = cfg.workers[i].transmit_delay;
    orch.add_worker(p);
  }

  detail::SimTransport transport(cfg, std::move(shards), seed);
  transport.bind(orch);

  auto past_limit = [&](double t) { return cfg.time_limit > 0.0 && t > cfg.time_limit; };

  if (oc.mode == Mode::Async) {
    orch.begin_async(transport);
    while (orch.records().size() < cfg.rounds && !transport.idle() && !past_limit(transport.next_due())) {
      transport.step();
      orch.poll(transport);
    }
  } else {
    std::uint32_t empty_streak = 0;
    while (orch.records().size() < cfg.rounds && !past_limit(transport.now())) {
      const auto start = orch.begin_sync_round(transport);
      if (start == RoundStart::EmptySelection) {
        // Nothing selectable yet; the selector has been nudged. Give up only
        // if it never opens up.
        if (++empty_streak > cfg.workers.size() + 1) break;
        continue;
      }
      empty_streak = 0;
      if (start == RoundStart::Failed) break;
      while (orch.round_active() && !transport.idle()) {
        transport.step();
        orch.poll(transport);
      }
      if (orch.round_active()) break;
    }
  }

  return {orch.records(), orch.consumed(), orch.state()};
}

inline std::vector<RoundRecord> run_scenario(const ScenarioConfig& cfg, std::uint64_t seed) {
  return run_scenario_full(cfg, seed).records;
}

}  // namespace fedloom
