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

// Worker selection: which registered workers train in the next round.
//
// Every policy sees a snapshot of WorkerProfiles and returns a sorted id set.
// Workers holding no data are never eligible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedloom/aggregation.hpp"
#include "fedloom/errors.hpp"

namespace fedloom {

using WorkerSet = std::vector<WorkerId>;  // sorted, unique

struct WorkerProfile {
  WorkerId worker = 0;
  double t_one = 0.0;       // seconds per local epoch over all local data
  double t_transmit = 0.0;  // seconds per weights round trip
  double cpu_freq = 1.0;    // GHz
  double cpu_prop = 1.0;    // available fraction, (0, 1]
  std::uint64_t data_count = 0;
};

/// Server-side timing of one training sample.
struct ServerProbe {
  double t_onedata = 0.0;
  double cpu_freq_server = 1.0;
};

struct RMinMaxState {
  double rmin = 5.0;
  double rmax = 5.0;
};

struct TimeBasedState {
  std::uint32_t r = 10;
  double t_budget = 0.0;
  double threshold_a = 0.005;
};

/// Per-epoch training time scaled from the server's one-sample probe. A
/// worker with a slower or busier CPU than the server takes longer.
inline double estimate_t_one(const ServerProbe& probe, const WorkerProfile& profile) {
  if (!(probe.t_onedata > 0.0) || !(probe.cpu_freq_server > 0.0)) {
    throw InvalidArgument("estimate_t_one: server probe values must be positive");
  }
  if (!(profile.cpu_freq > 0.0) || !(profile.cpu_prop > 0.0) || profile.cpu_prop > 1.0) {
    throw InvalidArgument("estimate_t_one: worker cpu_freq must be > 0 and cpu_prop in (0, 1]");
  }
  if (profile.data_count == 0) throw InvalidArgument("estimate_t_one: worker holds no data");
  return probe.t_onedata * probe.cpu_freq_server / (profile.cpu_freq * profile.cpu_prop) *
         static_cast<double>(profile.data_count);
}

namespace detail {

inline bool eligible(const WorkerProfile& p) { return p.data_count > 0; }

inline WorkerSet sorted(WorkerSet s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

}  // namespace detail

/// Round-trip time of `epochs` local epochs plus one weights transfer.
inline double round_time(const WorkerProfile& p, double epochs) { return p.t_one * epochs + p.t_transmit; }

inline WorkerSet select_all(std::span<const WorkerProfile> profiles) {
  WorkerSet out;
  for (const auto& p : profiles) {
    if (detail::eligible(p)) out.push_back(p.worker);
  }
  return detail::sorted(std::move(out));
}

/// R-min/r-max window: a worker is kept when it can finish rmin epochs no
/// later than the quickest worker finishes rmax epochs.
inline WorkerSet select_rminmax(std::span<const WorkerProfile> profiles, const RMinMaxState& state) {
  double quickest_max = std::numeric_limits<double>::infinity();
  const WorkerProfile* fastest = nullptr;
  for (const auto& p : profiles) {
    if (!detail::eligible(p)) continue;
    const double t = round_time(p, state.rmax);
    if (t < quickest_max) {
      quickest_max = t;
      fastest = &p;
    }
  }
  WorkerSet out;
  for (const auto& p : profiles) {
    if (detail::eligible(p) && round_time(p, state.rmin) <= quickest_max) out.push_back(p.worker);
  }
  // Falling accuracy can push rmin past rmax; the fastest worker still trains.
  if (fastest && std::find(out.begin(), out.end(), fastest->worker) == out.end()) out.push_back(fastest->worker);
  return detail::sorted(std::move(out));
}

/// Rising accuracy lowers rmin and raises rmax; the +1 damps early surges.
inline RMinMaxState update_rminmax(const RMinMaxState& state, double acc_prev, double acc_now) {
  const double ratio = (acc_prev + 1.0) / (acc_now + 1.0);
  return {state.rmin * ratio, state.rmax / ratio};
}

inline WorkerSet select_timebased(std::span<const WorkerProfile> profiles, const TimeBasedState& state) {
  WorkerSet out;
  for (const auto& p : profiles) {
    if (detail::eligible(p) && round_time(p, state.r) <= state.t_budget) out.push_back(p.worker);
  }
  return detail::sorted(std::move(out));
}

/// When accuracy gains fall under the threshold, widen the budget just
/// enough to admit the quickest worker not yet selected.
inline TimeBasedState update_timebased(const TimeBasedState& state, std::span<const WorkerProfile> unselected,
                                       double acc_prev, double acc_now) {
  TimeBasedState next = state;
  if (acc_now - acc_prev >= state.threshold_a) return next;
  double quickest = std::numeric_limits<double>::infinity();
  for (const auto& p : unselected) {
    if (detail::eligible(p)) quickest = std::min(quickest, round_time(p, state.r));
  }
  if (std::isfinite(quickest)) next.t_budget = std::max(next.t_budget, quickest);
  return next;
}

/// k workers drawn uniformly without replacement.
inline WorkerSet select_random(std::span<const WorkerId> workers, std::size_t k, std::uint64_t seed) {
  if (k > workers.size()) {
    throw InvalidArgument("select_random: k=" + std::to_string(k) + " exceeds " +
                          std::to_string(workers.size()) + " workers");
  }
  WorkerSet pool = detail::sorted(WorkerSet(workers.begin(), workers.end()));
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(k);
  return detail::sorted(std::move(pool));
}

/// Replaces the estimates with what was actually observed.
inline WorkerProfile refine_profile(const WorkerProfile& profile, double observed_train_seconds,
                                    double observed_transmit_seconds, std::uint32_t epochs_trained) {
  if (epochs_trained == 0) throw InvalidArgument("refine_profile: zero epochs trained");
  if (observed_train_seconds < 0.0 || observed_transmit_seconds < 0.0) {
    throw InvalidArgument("refine_profile: negative observation");
  }
  WorkerProfile next = profile;
  next.t_one = observed_train_seconds / static_cast<double>(epochs_trained);
  next.t_transmit = observed_transmit_seconds;
  return next;
}

// ---------------------------------------------------------------------------
// Selector: a policy plus whatever state its update rule carries.

struct SelectAll {};

struct SelectRandom {
  std::size_t k = 1;
  std::uint64_t seed = 0;
};

struct SelectRMinMax {
  RMinMaxState state;
};

struct SelectTimeBased {
  TimeBasedState state;
};

using SelectorConfig = std::variant<SelectAll, SelectRandom, SelectRMinMax, SelectTimeBased>;

class Selector {
 public:
  explicit Selector(SelectorConfig cfg = SelectAll{}) : cfg_(std::move(cfg)) {}

  const SelectorConfig& config() const noexcept { return cfg_; }

  /// Random selection draws a fresh set each round from (seed, round).
  WorkerSet select(std::span<const WorkerProfile> profiles) const {
    return std::visit(
        [&](const auto& c) -> WorkerSet {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, SelectAll>) {
            return select_all(profiles);
          } else if constexpr (std::is_same_v<T, SelectRandom>) {
            const WorkerSet pool = select_all(profiles);
            const auto seed = c.seed ^ (0x9E3779B97F4A7C15ull * (draws_ + 1));
            return select_random(pool, std::min(c.k, pool.size()), seed);
          } else if constexpr (std::is_same_v<T, SelectRMinMax>) {
            return select_rminmax(profiles, c.state);
          } else {
            return select_timebased(profiles, c.state);
          }
        },
        cfg_);
  }

  /// Runs the policy's update rule after an aggregation.
  void update(std::span<const WorkerProfile> profiles, const WorkerSet& selected, double acc_prev, double acc_now) {
    ++draws_;
    if (auto* rm = std::get_if<SelectRMinMax>(&cfg_)) {
      rm->state = update_rminmax(rm->state, acc_prev, acc_now);
    } else if (auto* tb = std::get_if<SelectTimeBased>(&cfg_)) {
      std::vector<WorkerProfile> unselected;
      for (const auto& p : profiles) {
        if (!std::binary_search(selected.begin(), selected.end(), p.worker)) unselected.push_back(p);
      }
      tb->state = update_timebased(tb->state, unselected, acc_prev, acc_now);
    }
  }

  /// Epochs a dispatched worker should train, when the policy fixes it.
  std::uint32_t epochs(std::uint32_t fallback) const {
    if (const auto* tb = std::get_if<SelectTimeBased>(&cfg_)) return tb->state.r;
    return fallback;
  }

  std::string name() const {
    switch (cfg_.index()) {
      case 0:
        return "all";
      case 1:
        return "random";
      case 2:
        return "rminmax";
      default:
        return "timebased";
    }
  }

 private:
  SelectorConfig cfg_;
  std::uint64_t draws_ = 0;
};

}  // namespace fedloom
