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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedloom/errors.hpp"
#include "fedloom/model.hpp"

namespace fedloom {

using WorkerId = std::uint32_t;

/// Aggregation-server model. `version` counts completed aggregations.
struct ServerModelState {
  std::uint64_t version = 0;
  ModelWeights weights;
};

struct WorkerResponse {
  WorkerId worker = 0;
  std::uint64_t base_version = 0;
  std::uint32_t epochs = 1;
  ModelWeights weights;
  std::uint64_t data_count = 0;
};

enum class StalenessScheme { Linear, Polynomial, Exponential };

struct FedAvg {};

struct Weighted {
  StalenessScheme scheme = StalenessScheme::Polynomial;
  double a = 0.5;  // unused by Linear
};

using AggregationPolicy = std::variant<FedAvg, Weighted>;

struct SyncTrigger {
  std::size_t min_responses = 1;
};
struct AsyncTrigger {};
using Trigger = std::variant<SyncTrigger, AsyncTrigger>;

enum class Mode { Sync, Async };

enum class Acceptance { Accept, RejectStale };

inline double staleness_weight(const Weighted& scheme, std::uint64_t server_version, std::uint64_t base_version) {
  if (base_version > server_version) {
    throw InvalidArgument("staleness_weight: base version " + std::to_string(base_version) +
                          " is ahead of server version " + std::to_string(server_version));
  }
  const double lag = static_cast<double>(server_version - base_version);
  switch (scheme.scheme) {
    case StalenessScheme::Linear:
      return 1.0 / (lag + 1.0);
    case StalenessScheme::Polynomial:
      return std::pow(lag + 1.0, -scheme.a);
    case StalenessScheme::Exponential:
      return std::exp(-scheme.a * lag);
  }
  return 1.0;
}

/// Scales positive raw weights so they sum to one.
inline std::vector<double> normalize(std::span<const double> raw) {
  if (raw.empty()) throw InvalidArgument("normalize: empty weight list");
  double total = 0.0;
  for (double r : raw) {
    if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("normalize: weights must be positive and finite");
    total += r;
  }
  std::vector<double> out(raw.begin(), raw.end());
  for (double& v : out) v /= total;
  return out;
}

namespace detail {

inline void check_responses(const ServerModelState& state, std::span<const WorkerResponse> responses) {
  if (responses.empty()) throw InvalidArgument("aggregate: no responses");
  for (const auto& r : responses) {
    if (!r.weights.same_shape(state.weights) || r.weights.values.size() != state.weights.values.size()) {
      throw InvalidArgument("aggregate: response from worker " + std::to_string(r.worker) +
                            " has mismatched shape");
    }
    if (r.base_version > state.version) {
      throw InvalidArgument("aggregate: response base version ahead of server");
    }
  }
}

}  // namespace detail

/// Merges responses into a new server model and bumps the version.
/// FedAvg is the plain elementwise mean; Weighted uses normalised staleness
/// weights relative to the current version.
inline ServerModelState aggregate(const ServerModelState& state, std::span<const WorkerResponse> responses,
                                  const AggregationPolicy& policy) {
  detail::check_responses(state, responses);

  // Work in a canonical order so the result does not depend on arrival order.
  std::vector<std::size_t> order(responses.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = responses[a];
    const auto& rb = responses[b];
    if (ra.worker != rb.worker) return ra.worker < rb.worker;
    if (ra.base_version != rb.base_version) return ra.base_version < rb.base_version;
    return ra.weights.values < rb.weights.values;
  });

  std::vector<double> coeff;
  if (std::holds_alternative<FedAvg>(policy)) {
    coeff.assign(responses.size(), 1.0 / static_cast<double>(responses.size()));
  } else {
    const auto& scheme = std::get<Weighted>(policy);
    std::vector<double> raw;
    raw.reserve(responses.size());
    for (std::size_t x : order) raw.push_back(staleness_weight(scheme, state.version, responses[x].base_version));
    coeff = normalize(raw);
  }

  ServerModelState next;
  next.version = state.version + 1;
  next.weights = ModelWeights(state.weights.n_features, state.weights.n_classes);
  auto& out = next.weights.values;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& in = responses[order[k]].weights.values;
    const double c = coeff[k];
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += c * in[j];
  }
  // A lone response, or identical responses, must come back bit-exact.
  bool all_same = true;
  for (std::size_t x = 1; x < responses.size() && all_same; ++x) {
    all_same = responses[x].weights.values == responses[0].weights.values;
  }
  if (all_same) out = responses[0].weights.values;
  return next;
}

inline bool should_aggregate(const Trigger& trigger, std::size_t cache_size) {
  if (const auto* sync = std::get_if<SyncTrigger>(&trigger)) {
    return cache_size >= std::max<std::size_t>(sync->min_responses, 1);
  }
  return cache_size >= 1;
}

inline Acceptance accept_response(Mode mode, std::uint64_t version_at_dispatch, std::uint64_t current_version) {
  if (mode == Mode::Async) return Acceptance::Accept;
  return version_at_dispatch == current_version ? Acceptance::Accept : Acceptance::RejectStale;
}

/// Pending worker responses; keeps only the newest per worker. Safe for
/// concurrent insertion. `take` empties it, so anything inserted while an
/// aggregation runs lands in the next round.
class ResponseCache {
 public:
  void insert(WorkerResponse r) {
    std::lock_guard lock(mu_);
    auto it = pending_.find(r.worker);
    if (it == pending_.end() || it->second.base_version <= r.base_version) pending_[r.worker] = std::move(r);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return pending_.size();
  }

  bool contains(WorkerId w) const {
    std::lock_guard lock(mu_);
    return pending_.count(w) > 0;
  }

  void erase(WorkerId w) {
    std::lock_guard lock(mu_);
    pending_.erase(w);
  }

  /// Removes and returns everything, ordered by worker id.
  std::vector<WorkerResponse> take() {
    std::lock_guard lock(mu_);
    std::vector<WorkerResponse> out;
    out.reserve(pending_.size());
    for (auto& [id, r] : pending_) out.push_back(std::move(r));
    pending_.clear();
    return out;
  }

 private:
  mutable std::mutex mu_;
  std::map<WorkerId, WorkerResponse> pending_;
};

inline std::string to_string(const AggregationPolicy& policy) {
  if (std::holds_alternative<FedAvg>(policy)) return "fedavg";
  const auto& w = std::get<Weighted>(policy);
  switch (w.scheme) {
    case StalenessScheme::Linear:
      return "linear";
    case StalenessScheme::Polynomial:
      return "polynomial:" + std::to_string(w.a);
    case StalenessScheme::Exponential:
      return "exponential:" + std::to_string(w.a);
  }
  return "fedavg";
}

}  // namespace fedloom
