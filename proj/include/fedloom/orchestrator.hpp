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

// Aggregation-server round logic, independent of how workers are reached.
//
// The orchestrator is a single-threaded state machine. A driver (the socket
// runtime or the simulator) feeds it worker events and calls poll() after
// draining each batch of events; poll() aggregates when the trigger allows
// and, in async mode, hands new training requests back to the transport.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedloom/aggregation.hpp"
#include "fedloom/errors.hpp"
#include "fedloom/model.hpp"
#include "fedloom/selection.hpp"
#include "fedloom/telemetry.hpp"

namespace fedloom {

struct OrchestratorConfig {
  Mode mode = Mode::Sync;
  AggregationPolicy policy = FedAvg{};
  SelectorConfig selector = SelectAll{};
  std::uint32_t epochs = 10;
};

/// How the orchestrator reaches workers and reads the clock.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual double now() = 0;
  /// Asks `worker` to train `epochs` epochs on top of server version
  /// `version`. Returns false when the request could not be delivered.
  virtual bool request_training(WorkerId worker, std::uint64_t version, std::uint32_t epochs) = 0;
};

enum class RoundStart { Dispatched, EmptySelection, Failed };

/// Audit entry for one response merged into the server model.
struct ConsumedResponse {
  WorkerId worker = 0;
  std::uint64_t base_version = 0;      // version the worker trained on
  std::uint64_t dispatch_version = 0;  // version when training was requested
  std::uint64_t merged_into = 0;       // server version the merge started from
};

class Orchestrator {
 public:
  Orchestrator(OrchestratorConfig cfg, ModelWeights initial, Dataset test)
      : cfg_(std::move(cfg)), selector_(cfg_.selector), test_(std::move(test)) {
    if (test_.empty()) throw InvalidArgument("orchestrator: empty test set");
    state_.weights = std::move(initial);
    accuracy_ = evaluate(state_.weights, test_);
  }

  // --- registry ------------------------------------------------------------

  WorkerId add_worker(WorkerProfile profile) {
    const auto id = static_cast<WorkerId>(workers_.size());
    profile.worker = id;
    workers_.push_back({profile, 0, false});
    return id;
  }

  std::size_t worker_count() const noexcept { return workers_.size(); }

  std::vector<WorkerProfile> profiles() const {
    std::vector<WorkerProfile> out;
    out.reserve(workers_.size());
    for (const auto& w : workers_) out.push_back(w.profile);
    return out;
  }

  const WorkerProfile& profile(WorkerId w) const { return entry(w).profile; }
  std::uint64_t dispatch_version(WorkerId w) const { return entry(w).dispatch_version; }
  bool in_flight(WorkerId w) const { return entry(w).in_flight; }

  const ServerModelState& state() const noexcept { return state_; }
  double accuracy() const noexcept { return accuracy_; }
  const std::vector<RoundRecord>& records() const noexcept { return records_; }
  const Selector& selector() const noexcept { return selector_; }
  const OrchestratorConfig& config() const noexcept { return cfg_; }
  bool round_active() const noexcept { return round_active_; }
  const WorkerSet& selected() const noexcept { return selected_; }

  /// Every response merged so far, in merge order. Used to audit staleness.
  const std::vector<ConsumedResponse>& consumed() const noexcept { return consumed_; }

  // --- synchronous rounds --------------------------------------------------

  /// Selects workers and dispatches training to each. An empty selection runs
  /// the selector update with zero improvement and reports EmptySelection.
  RoundStart begin_sync_round(Transport& transport) {
    if (cfg_.mode != Mode::Sync) throw InvalidArgument("begin_sync_round: orchestrator is in async mode");
    if (round_active_) throw InvalidArgument("begin_sync_round: a round is already running");
    const auto profs = profiles();
    selected_ = selector_.select(profs);
    if (selected_.empty()) {
      selector_.update(profs, selected_, accuracy_, accuracy_);
      return RoundStart::EmptySelection;
    }
    round_started_ = transport.now();
    quota_ = 0;
    for (auto w : selected_) {
      if (dispatch(transport, w)) ++quota_;
    }
    if (quota_ == 0) return RoundStart::Failed;
    round_active_ = true;
    return RoundStart::Dispatched;
  }

  // --- asynchronous loop ---------------------------------------------------

  /// Dispatches every selected idle worker. Call once before feeding events.
  void begin_async(Transport& transport) {
    if (cfg_.mode != Mode::Async) throw InvalidArgument("begin_async: orchestrator is in sync mode");
    round_started_ = transport.now();
    round_active_ = true;
    refill_async(transport);
  }

  // --- worker events -------------------------------------------------------

  /// A worker reports training finished on top of `base_version`. Returns
  /// whether the server still wants its weights.
  Acceptance on_train_done(WorkerId w, std::uint64_t base_version) {
    auto& e = entry(w);
    if (!e.in_flight) return Acceptance::RejectStale;
    if (base_version > state_.version) throw InvalidArgument("on_train_done: base version from the future");
    const auto verdict = accept_response(cfg_.mode, e.dispatch_version, state_.version);
    if (verdict == Acceptance::RejectStale) release(e);
    return verdict;
  }

  /// Weights for an accepted TrainDone arrived. Observed timings refine the
  /// worker's profile.
  void on_response(WorkerResponse response, std::optional<double> train_seconds = std::nullopt,
                   std::optional<double> transmit_seconds = std::nullopt) {
    auto& e = entry(response.worker);
    if (train_seconds && transmit_seconds && response.epochs > 0) {
      e.profile = refine_profile(e.profile, *train_seconds, *transmit_seconds, response.epochs);
    }
    const bool stale = cfg_.mode == Mode::Sync && response.base_version != state_.version;
    if (stale || !e.in_flight || !response.weights.same_shape(state_.weights)) {
      // Never merged: late in sync mode, unsolicited, or malformed.
      release(e);
      return;
    }
    e.in_flight = false;
    dispatched_for_[response.worker] = e.dispatch_version;
    cache_.insert(std::move(response));
  }

  /// Worker refused, vanished, or the request failed in transit.
  void on_failure(WorkerId w) { release(entry(w)); }

  /// Aggregates when the trigger allows. In async mode the responders (and
  /// any newly selected idle workers) are re-dispatched immediately.
  std::optional<RoundRecord> poll(Transport& transport) {
    if (!round_active_) return std::nullopt;
    if (cfg_.mode == Mode::Sync) {
      if (quota_ > 0 && should_aggregate(SyncTrigger{quota_}, cache_.size())) {
        auto rec = aggregate_now(transport.now());
        round_active_ = false;
        return rec;
      }
      if (quota_ == 0) {
        // Every selected worker failed: abort, version and weights untouched.
        cache_.take();
        round_active_ = false;
      }
      return std::nullopt;
    }
    if (!should_aggregate(AsyncTrigger{}, cache_.size())) {
      if (!any_in_flight()) refill_async(transport);
      return std::nullopt;
    }
    auto rec = aggregate_now(transport.now());
    round_started_ = transport.now();
    refill_async(transport);
    return rec;
  }

  bool any_in_flight() const {
    return std::any_of(workers_.begin(), workers_.end(), [](const Entry& e) { return e.in_flight; });
  }

 private:
  struct Entry {
    WorkerProfile profile;
    std::uint64_t dispatch_version = 0;
    bool in_flight = false;
  };

  Entry& entry(WorkerId w) {
    if (w >= workers_.size()) throw NotFound("unknown worker " + std::to_string(w));
    return workers_[w];
  }
  const Entry& entry(WorkerId w) const {
    if (w >= workers_.size()) throw NotFound("unknown worker " + std::to_string(w));
    return workers_[w];
  }

  std::uint32_t epochs_for(WorkerId w) const {
    if (const auto* rm = std::get_if<SelectRMinMax>(&selector_.config())) {
      return rminmax_epochs(workers_[w].profile, rm->state);
    }
    return selector_.epochs(cfg_.epochs);
  }

  // Quick workers may train up to rmax epochs inside the window set by the
  // quickest worker; everyone trains at least rmin (rounded) and at least 1.
  std::uint32_t rminmax_epochs(const WorkerProfile& p, const RMinMaxState& st) const {
    double window = std::numeric_limits<double>::infinity();
    for (const auto& e : workers_) {
      if (e.profile.data_count > 0) window = std::min(window, round_time(e.profile, st.rmax));
    }
    const double lo = std::max(1.0, std::ceil(st.rmin - 1e-9));
    const double hi = std::max(lo, std::floor(st.rmax + 1e-9));
    double fit = p.t_one > 0.0 ? std::floor((window - p.t_transmit) / p.t_one + 1e-9) : hi;
    if (!std::isfinite(fit)) fit = hi;
    return static_cast<std::uint32_t>(std::clamp(fit, lo, hi));
  }

  // Drops a worker from the current round without a response.
  void release(Entry& e) {
    if (!e.in_flight) return;
    e.in_flight = false;
    if (cfg_.mode == Mode::Sync && round_active_ && e.dispatch_version == state_.version && quota_ > 0) --quota_;
  }

  bool dispatch(Transport& transport, WorkerId w) {
    auto& e = workers_[w];
    e.dispatch_version = state_.version;
    e.in_flight = true;
    if (!transport.request_training(w, state_.version, epochs_for(w))) {
      e.in_flight = false;
      return false;
    }
    return true;
  }

  RoundRecord aggregate_now(double now) {
    auto responses = cache_.take();
    for (const auto& r : responses) {
      consumed_.push_back({r.worker, r.base_version, dispatched_for_[r.worker], state_.version});
    }
    state_ = aggregate(state_, responses, cfg_.policy);
    const double before = accuracy_;
    accuracy_ = evaluate(state_.weights, test_);

    RoundRecord rec;
    rec.round_index = state_.version;
    rec.started_at = round_started_;
    rec.finished_at = now;
    rec.accuracy = accuracy_;
    rec.selected = selected_;
    rec.responses_used = responses.size();
    records_.push_back(rec);

    selector_.update(profiles(), selected_, before, accuracy_);
    return rec;
  }

  // Dispatches every selected worker that is idle, which covers the workers
  // whose responses were just merged. With nothing running and nothing
  // selectable, keeps applying the zero-improvement update so a
  // budget-driven selector can open up.
  void refill_async(Transport& transport) {
    auto profs = profiles();
    selected_ = selector_.select(profs);
    for (int guard = 0; selected_.empty() && !any_in_flight() && guard < 64; ++guard) {
      const auto before = selected_;
      selector_.update(profs, selected_, accuracy_, accuracy_);
      selected_ = selector_.select(profs);
      if (selected_.empty() && selected_ == before && !may_grow_on_stall()) break;
    }
    for (auto w : selected_) {
      if (!workers_[w].in_flight && !cache_.contains(w)) dispatch(transport, w);
    }
  }

  bool may_grow_on_stall() const { return std::holds_alternative<SelectTimeBased>(selector_.config()); }

  OrchestratorConfig cfg_;
  Selector selector_;
  Dataset test_;
  ServerModelState state_;
  double accuracy_ = 0.0;
  std::vector<Entry> workers_;
  ResponseCache cache_;
  WorkerSet selected_;
  std::vector<RoundRecord> records_;
  std::vector<ConsumedResponse> consumed_;
  std::map<WorkerId, std::uint64_t> dispatched_for_;
  bool round_active_ = false;
  double round_started_ = 0.0;
  std::size_t quota_ = 0;
};

}  // namespace fedloom
