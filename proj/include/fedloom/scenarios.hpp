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

// Scenario files and the built-in scenario catalogue.
//
// A scenario file uses the participant config syntax plus simulator keys:
//
//   name            = my_run
//   mode            = sync | async | sequential
//   selector        = timebased:10,0.005
//   policy          = polynomial:0.5
//   allocation      = 1,1,1,1,1,1,1,1,1,1   # batches per worker
//   speed_class     = 1,1,1,2,2,2,10,10,10,10
//   transmit_delay  = 0.01                  # one value, or one per worker
//   batch_size, epochs, rounds, learning_rate, unit_cost, target_accuracy,
//   time_limit, n_classes, n_features, spread, train_per_class,
//   test_per_class

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedloom/config.hpp"
#include "fedloom/errors.hpp"
#include "fedloom/sim.hpp"
#include "fedloom/telemetry.hpp"

namespace fedloom {

inline RunMode parse_run_mode(std::string_view text, int line = 0) {
  if (text == "sequential") return RunMode::Sequential;
  return parse_mode(text, line) == Mode::Async ? RunMode::Async : RunMode::Sync;
}

namespace detail {

inline std::vector<double> parse_double_list(std::string_view text, const std::string& key, int line) {
  std::vector<double> out;
  for (auto part : split_list(text, ',')) out.push_back(KeyValueConfig::to_number<double>(part, key, line));
  return out;
}

// Expands a scalar to `n` copies; a list must have exactly `n` entries.
inline std::vector<double> per_worker(const KeyValueConfig& cfg, const std::string& key, std::size_t n,
                                      double fallback) {
  const auto e = cfg.entry(key);
  if (!e) return std::vector<double>(n, fallback);
  auto values = parse_double_list(e->value, key, e->line);
  if (values.size() == 1) return std::vector<double>(n, values[0]);
  if (values.size() != n) {
    throw ConfigError("'" + key + "' lists " + std::to_string(values.size()) + " values for " + std::to_string(n) +
                          " workers",
                      e->line);
  }
  return values;
}

}  // namespace detail

inline const std::set<std::string>& scenario_keys() {
  static const std::set<std::string> keys = {
      "name",     "mode",          "selector",        "policy",     "allocation", "speed_class",
      "transmit_delay", "batch_size", "epochs",       "rounds",     "learning_rate", "unit_cost",
      "target_accuracy", "time_limit", "n_classes",   "n_features", "spread",     "train_per_class",
      "test_per_class"};
  return keys;
}

inline ScenarioConfig scenario_from_config(const KeyValueConfig& cfg) {
  cfg.check_known(scenario_keys());
  ScenarioConfig s;
  s.name = cfg.str("name", s.name);
  if (auto e = cfg.entry("mode")) s.mode = parse_run_mode(e->value, e->line);
  if (auto e = cfg.entry("selector")) s.selector = parse_selector(e->value, e->line);
  if (auto e = cfg.entry("policy")) s.policy = parse_policy(e->value, e->line);

  const auto alloc = cfg.entry("allocation");
  if (!alloc) throw ConfigError("missing required key 'allocation'");
  const auto batches = parse_uint_list(alloc->value, "allocation", alloc->line);
  const auto speeds = detail::per_worker(cfg, "speed_class", batches.size(), 1.0);
  const auto delays = detail::per_worker(cfg, "transmit_delay", batches.size(), 0.0);
  for (std::size_t i = 0; i < batches.size(); ++i) {
    if (!(speeds[i] > 0.0)) throw ConfigError("speed_class must be > 0", cfg.entry("speed_class")->line);
    if (delays[i] < 0.0) throw ConfigError("transmit_delay must be >= 0", cfg.entry("transmit_delay")->line);
    s.workers.push_back({speeds[i], delays[i], batches[i]});
  }

  s.batch_size = cfg.number<std::uint32_t>("batch_size", s.batch_size);
  s.epochs = cfg.number<std::uint32_t>("epochs", s.epochs);
  s.rounds = cfg.number<std::uint32_t>("rounds", s.rounds);
  s.learning_rate = cfg.number<double>("learning_rate", s.learning_rate);
  s.unit_cost = cfg.number<double>("unit_cost", s.unit_cost);
  s.target_accuracy = cfg.number<double>("target_accuracy", s.target_accuracy);
  s.time_limit = cfg.number<double>("time_limit", s.time_limit);
  s.task.n_classes = cfg.number<std::uint32_t>("n_classes", s.task.n_classes);
  s.task.n_features = cfg.number<std::uint32_t>("n_features", s.task.n_features);
  s.task.spread = cfg.number<double>("spread", s.task.spread);
  s.task.train_per_class = cfg.number<std::uint32_t>("train_per_class", s.task.train_per_class);
  s.task.test_per_class = cfg.number<std::uint32_t>("test_per_class", s.task.test_per_class);
  if (s.task.n_features > 0 && s.task.n_features < code_bits(s.task.n_classes)) {
    throw ConfigError("n_features " + std::to_string(s.task.n_features) + " cannot encode " +
                      std::to_string(s.task.n_classes) + " classes");
  }
  validate(s);
  return s;
}

/// Writes a scenario back in file syntax; scenario_from_config() reads it.
inline std::string scenario_to_text(const ScenarioConfig& s) {
  std::string out;
  auto line = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  auto join = [&](auto get) {
    std::string t;
    for (std::size_t i = 0; i < s.workers.size(); ++i) t += (i ? "," : "") + get(s.workers[i]);
    return t;
  };
  line("name", s.name);
  line("mode", to_string(s.mode));
  line("selector", to_string(s.selector));
  line("policy", to_string(s.policy));
  line("allocation", join([](const SimWorkerSpec& w) { return std::to_string(w.allocation); }));
  line("speed_class", join([&](const SimWorkerSpec& w) { return num(w.speed_class); }));
  line("transmit_delay", join([&](const SimWorkerSpec& w) { return num(w.transmit_delay); }));
  line("batch_size", std::to_string(s.batch_size));
  line("epochs", std::to_string(s.epochs));
  line("rounds", std::to_string(s.rounds));
  line("learning_rate", num(s.learning_rate));
  line("unit_cost", num(s.unit_cost));
  line("target_accuracy", num(s.target_accuracy));
  line("time_limit", num(s.time_limit));
  line("n_classes", std::to_string(s.task.n_classes));
  line("n_features", std::to_string(s.task.n_features));
  line("spread", num(s.task.spread));
  line("train_per_class", std::to_string(s.task.train_per_class));
  line("test_per_class", std::to_string(s.task.test_per_class));
  return out;
}

// ---------------------------------------------------------------------------
// Built-in catalogue

namespace scenarios {

/// Speed classes of the reference pool: three machines hosting three,
/// three and four worker models.
inline std::vector<double> reference_speeds() { return {1, 1, 1, 2, 2, 2, 10, 10, 10, 10}; }

/// The synthetic task every reference scenario trains on.
inline TaskSpec reference_task() {
  TaskSpec t;
  t.n_classes = 10;
  t.n_features = 100;
  t.spread = 0.25;
  t.train_per_class = 100;
  t.test_per_class = 100;
  return t;
}

struct ReferenceKnobs {
  std::uint32_t epochs = 4;
  double learning_rate = 0.03;
  double transmit_delay = 0.01;
  double threshold_a = 0.04;
  std::uint32_t batch_size = 100;
};

inline ReferenceKnobs reference_knobs() { return {}; }

inline ScenarioConfig reference_base(const std::string& name) {
  const auto k = reference_knobs();
  ScenarioConfig s;
  s.name = name;
  s.task = reference_task();
  s.batch_size = k.batch_size;
  s.epochs = k.epochs;
  s.learning_rate = k.learning_rate;
  s.rounds = 60;
  s.target_accuracy = 0.8;
  for (double speed : reference_speeds()) s.workers.push_back({speed, k.transmit_delay, 1});
  s.selector = SelectTimeBased{TimeBasedState{k.epochs, 0.0, k.threshold_a}};
  s.policy = FedAvg{};
  return s;
}

inline ScenarioConfig reference_sync() { return reference_base("reference_sync"); }

inline ScenarioConfig reference_async() {
  auto s = reference_base("reference_async");
  s.mode = RunMode::Async;
  s.policy = Weighted{StalenessScheme::Polynomial, 0.5};
  s.rounds = 400;
  return s;
}

/// One worker of the fastest machine holds every batch.
inline ScenarioConfig reference_sequential() {
  auto s = reference_base("reference_sequential");
  s.mode = RunMode::Sequential;
  s.selector = SelectAll{};
  for (auto& w : s.workers) w.allocation = 0;
  s.workers[0].allocation = static_cast<std::uint32_t>(s.workers.size());
  s.rounds = 30;
  return s;
}

inline ScenarioConfig reference_random() {
  auto s = reference_base("reference_random");
  s.selector = SelectRandom{4, 7};
  return s;
}

/// rmin = rmax = 5 with the uneven allocation 1 / 3 / 2,2,2: W4 needs
/// longer for 5 epochs than W1 does, so W1 trains alone forever.
inline ScenarioConfig reference_rminmax_stall() {
  auto s = reference_base("reference_rminmax_stall");
  s.selector = SelectRMinMax{RMinMaxState{5.0, 5.0}};
  const std::uint32_t row[] = {1, 0, 0, 3, 0, 0, 0, 2, 2, 2};
  for (std::size_t i = 0; i < s.workers.size(); ++i) s.workers[i].allocation = row[i];
  s.rounds = 50;
  return s;
}

// Allocation tables: the ten-worker pool sits on three machines as
// W1-3, W4-6, W7-10; the thirty-worker pool as W1-10, W11-20, W21-30.
// Handwriting-like rows use batches of 100 samples, image-like rows use
// a harder task scaled down to batches of 10 samples.

inline ScenarioConfig table_row(const std::string& name, const std::vector<std::uint32_t>& allocation,
                                bool harder_task) {
  ScenarioConfig s;
  s.name = name;
  const std::size_t n = allocation.size();
  const std::size_t group = n == 10 ? 3 : 10;
  std::uint32_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double speed = i < group ? 1.0 : (i < 2 * group ? 2.0 : 10.0);
    s.workers.push_back({speed, 0.01, allocation[i]});
    total += allocation[i];
  }
  s.task = reference_task();
  s.batch_size = harder_task ? 10 : 100;
  if (harder_task) {
    s.task.n_features = 40;
    s.task.spread = 0.4;
  }
  s.task.train_per_class = total * s.batch_size / s.task.n_classes;
  s.epochs = 5;
  s.rounds = 20;
  s.selector = SelectAll{};
  s.policy = FedAvg{};
  return s;
}

inline std::vector<std::uint32_t> expand_ten(std::uint32_t w1, std::uint32_t w23, std::uint32_t w4, std::uint32_t w56,
                                             std::uint32_t w7, std::uint32_t w8_10) {
  return {w1, w23, w23, w4, w56, w56, w7, w8_10, w8_10, w8_10};
}

inline std::vector<std::uint32_t> expand_thirty(std::uint32_t w1, std::uint32_t w2_10, std::uint32_t w11,
                                                std::uint32_t w12_20, std::uint32_t w21, std::uint32_t w22_30) {
  std::vector<std::uint32_t> out;
  out.push_back(w1);
  out.insert(out.end(), 9, w2_10);
  out.push_back(w11);
  out.insert(out.end(), 9, w12_20);
  out.push_back(w21);
  out.insert(out.end(), 9, w22_30);
  return out;
}

}  // namespace scenarios

inline const std::map<std::string, ScenarioConfig (*)()>& builtin_scenarios() {
  using namespace scenarios;
  static const std::map<std::string, ScenarioConfig (*)()> table = {
      {"reference_sync", &reference_sync},
      {"reference_async", &reference_async},
      {"reference_sequential", &reference_sequential},
      {"reference_random", &reference_random},
      {"reference_rminmax_stall", &reference_rminmax_stall},
      {"table4_1_row1", [] { return table_row("table4_1_row1", expand_ten(10, 0, 0, 0, 0, 0), false); }},
      {"table4_1_row2", [] { return table_row("table4_1_row2", expand_ten(1, 1, 1, 1, 1, 1), false); }},
      {"table4_1_row3", [] { return table_row("table4_1_row3", expand_ten(1, 0, 3, 0, 0, 2), false); }},
      {"table4_1_row4", [] { return table_row("table4_1_row4", expand_ten(100, 0, 0, 0, 0, 0), true); }},
      {"table4_1_row5", [] { return table_row("table4_1_row5", expand_ten(10, 10, 10, 10, 10, 10), true); }},
      {"table4_1_row6", [] { return table_row("table4_1_row6", expand_ten(10, 0, 30, 0, 0, 20), true); }},
      {"table4_2_row1", [] { return table_row("table4_2_row1", expand_thirty(30, 0, 0, 0, 0, 0), false); }},
      {"table4_2_row2", [] { return table_row("table4_2_row2", expand_thirty(1, 1, 1, 1, 1, 1), false); }},
      {"table4_2_row3", [] { return table_row("table4_2_row3", expand_thirty(4, 0, 8, 0, 0, 2), false); }},
      {"table4_2_row4", [] { return table_row("table4_2_row4", expand_thirty(300, 0, 0, 0, 0, 0), true); }},
      {"table4_2_row5", [] { return table_row("table4_2_row5", expand_thirty(10, 10, 10, 10, 10, 10), true); }},
      {"table4_2_row6", [] { return table_row("table4_2_row6", expand_thirty(40, 0, 80, 0, 0, 20), true); }},
  };
  return table;
}

inline std::optional<ScenarioConfig> builtin_scenario(const std::string& name) {
  const auto& table = builtin_scenarios();
  auto it = table.find(name);
  if (it == table.end()) return std::nullopt;
  return it->second();
}

/// A built-in name, or else a path to a scenario file.
inline ScenarioConfig resolve_scenario(const std::string& name_or_path) {
  if (auto s = builtin_scenario(name_or_path)) return *s;
  return scenario_from_config(KeyValueConfig::load(name_or_path));
}

// ---------------------------------------------------------------------------
// Comparisons

struct RunSummary {
  std::string scenario;
  std::uint64_t seed = 0;
  std::optional<double> time_to_target;
  double final_accuracy = 0.0;
  std::size_t rounds = 0;
  std::vector<RoundRecord> records;
};

/// time_to_target(other) / time_to_target(baseline) for one seed; below 1
/// means `other` got there first.
struct Speedup {
  std::string baseline;
  std::string other;
  std::uint64_t seed = 0;
  std::optional<double> ratio;
};

struct Comparison {
  std::vector<RunSummary> runs;
  std::vector<Speedup> speedups;
};

inline RunSummary summarize(const ScenarioConfig& cfg, std::uint64_t seed) {
  RunSummary s;
  s.scenario = cfg.name;
  s.seed = seed;
  s.records = run_scenario(cfg, seed);
  s.time_to_target = time_to_accuracy(s.records, cfg.target_accuracy);
  s.final_accuracy = s.records.empty() ? 0.0 : s.records.back().accuracy;
  s.rounds = s.records.size();
  return s;
}

/// Runs every scenario for every seed; speedups compare each later scenario
/// with the first one, seed by seed.
inline Comparison compare_runs(const std::vector<ScenarioConfig>& configs, const std::vector<std::uint64_t>& seeds) {
  if (configs.size() < 2) throw InvalidArgument("compare_runs needs at least two scenarios");
  Comparison c;
  for (const auto& cfg : configs) {
    for (auto seed : seeds) c.runs.push_back(summarize(cfg, seed));
  }
  const std::size_t n = seeds.size();
  for (std::size_t k = 1; k < configs.size(); ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto& base = c.runs[j];
      const auto& other = c.runs[k * n + j];
      Speedup sp{base.scenario, other.scenario, seeds[j], std::nullopt};
      if (base.time_to_target && other.time_to_target && *base.time_to_target > 0.0) {
        sp.ratio = *other.time_to_target / *base.time_to_target;
      }
      c.speedups.push_back(sp);
    }
  }
  return c;
}

inline std::string summary_csv(const std::vector<RunSummary>& runs) {
  std::string out = "scenario,seed,time_to_target,final_accuracy,rounds\n";
  for (const auto& r : runs) {
    out += r.scenario + ',' + std::to_string(r.seed) + ',';
    out += r.time_to_target ? detail::exact_double(*r.time_to_target) : "unreached";
    out += ',' + detail::accuracy_text(r.final_accuracy) + ',' + std::to_string(r.rounds) + '\n';
  }
  return out;
}

inline std::string speedup_csv(const std::vector<Speedup>& speedups) {
  std::string out = "baseline,other,seed,ratio\n";
  for (const auto& s : speedups) {
    out += s.baseline + ',' + s.other + ',' + std::to_string(s.seed) + ',';
    out += s.ratio ? detail::exact_double(*s.ratio) : "n/a";
    out += '\n';
  }
  return out;
}

}  // namespace fedloom
