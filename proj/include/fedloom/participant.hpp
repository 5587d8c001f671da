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

// Participant configuration files for `fedloom serve` and `fedloom work`.
//
// Both roles must agree on the data keys so that a worker's shard index
// means the same samples on every host:
//
//   seed, n_classes, n_features, spread, train_per_class, test_per_class,
//   allocation (batches per shard), batch_size
//
// Server keys:
//   host, port, blob_port, worker = host:port (repeat; shard = position),
//   mode, selector, policy, rounds, epochs, ready_timeout, round_timeout,
//   credential_lifetime, data_dir, records, audit
//
// Worker keys:
//   host, port, blob_port, shard, learning_rate, delay_per_epoch,
//   credential_lifetime, data_dir

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedloom/config.hpp"
#include "fedloom/runtime.hpp"

namespace fedloom {

namespace detail {

inline const std::set<std::string>& data_keys() {
  static const std::set<std::string> keys = {"seed",           "n_classes",      "n_features", "spread",
                                             "train_per_class", "test_per_class", "allocation", "batch_size"};
  return keys;
}

inline DataPlan parse_data_plan(const KeyValueConfig& cfg) {
  DataPlan plan;
  plan.seed = cfg.number<std::uint64_t>("seed", 1);
  plan.task.n_classes = cfg.number<std::uint32_t>("n_classes", plan.task.n_classes);
  plan.task.n_features = cfg.number<std::uint32_t>("n_features", plan.task.n_features);
  plan.task.spread = cfg.number<double>("spread", plan.task.spread);
  plan.task.train_per_class = cfg.number<std::uint32_t>("train_per_class", plan.task.train_per_class);
  plan.task.test_per_class = cfg.number<std::uint32_t>("test_per_class", plan.task.test_per_class);
  plan.row.batch_size = cfg.number<std::uint32_t>("batch_size", plan.row.batch_size);
  if (auto e = cfg.entry("allocation")) plan.row.batches_per_worker = parse_uint_list(e->value, "allocation", e->line);

  if (plan.task.n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (plan.task.n_features > 0 && plan.task.n_features < code_bits(plan.task.n_classes)) {
    throw ConfigError("n_features too small for " + std::to_string(plan.task.n_classes) + " classes");
  }
  if (!(plan.task.spread > 0.0)) throw ConfigError("spread must be > 0");
  if (plan.task.test_per_class == 0) throw ConfigError("test_per_class must be >= 1");
  if (plan.row.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::size_t needed = 0;
  for (auto b : plan.row.batches_per_worker) needed += static_cast<std::size_t>(b) * plan.row.batch_size;
  if (needed > static_cast<std::size_t>(plan.task.train_per_class) * plan.task.n_classes) {
    throw ConfigError("allocation needs " + std::to_string(needed) + " samples, the task provides " +
                      std::to_string(plan.task.train_per_class * plan.task.n_classes));
  }
  return plan;
}

inline std::uint16_t parse_port(const KeyValueConfig& cfg, const std::string& key) {
  const auto v = cfg.number<std::uint32_t>(key, 0);
  if (v > 65535) throw ConfigError(key + " out of range", cfg.entry(key)->line);
  return static_cast<std::uint16_t>(v);
}

inline void require_positive(double v, const std::string& key) {
  if (!(v > 0.0)) throw ConfigError(key + " must be > 0");
}

}  // namespace detail

struct ServerConfig {
  ServerOptions options;
  DataPlan data;
  std::vector<Address> workers;
  std::uint32_t rounds = 10;
  double ready_timeout = 30.0;
  std::string records_path = "records.csv";
  std::string audit_path;  // empty: no audit file
};

struct WorkerConfig {
  WorkerOptions options;
};

inline ServerConfig parse_server_config(const KeyValueConfig& cfg) {
  auto known = detail::data_keys();
  known.insert({"host", "port", "blob_port", "worker", "mode", "selector", "policy", "rounds", "epochs",
                "ready_timeout", "round_timeout", "credential_lifetime", "data_dir", "records", "audit"});
  cfg.check_known(known);

  ServerConfig sc;
  sc.data = detail::parse_data_plan(cfg);
  auto& o = sc.options;
  o.host = cfg.str("host", o.host);
  o.port = detail::parse_port(cfg, "port");
  o.blob_port = detail::parse_port(cfg, "blob_port");
  if (auto e = cfg.entry("mode")) o.orchestrator.mode = parse_mode(e->value, e->line);
  if (auto e = cfg.entry("selector")) o.orchestrator.selector = parse_selector(e->value, e->line);
  if (auto e = cfg.entry("policy")) o.orchestrator.policy = parse_policy(e->value, e->line);
  o.orchestrator.epochs = cfg.number<std::uint32_t>("epochs", o.orchestrator.epochs);
  if (o.orchestrator.epochs == 0) throw ConfigError("epochs must be >= 1");
  o.round_timeout = cfg.number<double>("round_timeout", o.round_timeout);
  o.credential_lifetime = cfg.number<double>("credential_lifetime", o.credential_lifetime);
  o.data_dir = cfg.str("data_dir", "");
  detail::require_positive(o.round_timeout, "round_timeout");
  detail::require_positive(o.credential_lifetime, "credential_lifetime");

  for (const auto& e : cfg.all("worker")) sc.workers.push_back(parse_address(e.value, e.line));
  if (sc.workers.empty()) throw ConfigError("at least one 'worker = host:port' is required");
  if (sc.data.row.batches_per_worker.empty()) {
    sc.data.row.batches_per_worker.assign(sc.workers.size(), 1);
  } else if (sc.data.row.batches_per_worker.size() < sc.workers.size()) {
    throw ConfigError("allocation has fewer shards than configured workers", cfg.entry("allocation")->line);
  }
  sc.rounds = cfg.number<std::uint32_t>("rounds", sc.rounds);
  if (sc.rounds == 0) throw ConfigError("rounds must be >= 1");
  sc.ready_timeout = cfg.number<double>("ready_timeout", sc.ready_timeout);
  detail::require_positive(sc.ready_timeout, "ready_timeout");
  sc.records_path = cfg.str("records", sc.records_path);
  sc.audit_path = cfg.str("audit", "");
  return sc;
}

inline WorkerConfig parse_worker_config(const KeyValueConfig& cfg) {
  auto known = detail::data_keys();
  known.insert({"host", "port", "blob_port", "shard", "learning_rate", "delay_per_epoch", "credential_lifetime",
                "data_dir"});
  cfg.check_known(known);

  WorkerConfig wc;
  auto& o = wc.options;
  o.data = detail::parse_data_plan(cfg);
  o.host = cfg.str("host", o.host);
  o.port = detail::parse_port(cfg, "port");
  o.blob_port = detail::parse_port(cfg, "blob_port");
  if (cfg.has("shard")) o.default_shard = cfg.number<std::uint32_t>("shard", 0);
  o.learning_rate = cfg.number<double>("learning_rate", o.learning_rate);
  o.delay_per_epoch = cfg.number<double>("delay_per_epoch", o.delay_per_epoch);
  o.credential_lifetime = cfg.number<double>("credential_lifetime", o.credential_lifetime);
  o.data_dir = cfg.str("data_dir", "");
  detail::require_positive(o.learning_rate, "learning_rate");
  detail::require_positive(o.credential_lifetime, "credential_lifetime");
  if (o.delay_per_epoch < 0.0) throw ConfigError("delay_per_epoch must be >= 0");
  if (o.data.row.batches_per_worker.empty()) throw ConfigError("missing required key 'allocation'");
  return wc;
}

/// Lines for the consumed-response audit file written by `fedloom serve`.
inline std::string consumed_csv(const std::vector<ConsumedResponse>& consumed) {
  std::string out = "worker,base_version,dispatch_version,merged_into\n";
  for (const auto& c : consumed) {
    out += std::to_string(c.worker) + ',' + std::to_string(c.base_version) + ',' +
           std::to_string(c.dispatch_version) + ',' + std::to_string(c.merged_into) + '\n';
  }
  return out;
}

}  // namespace fedloom
