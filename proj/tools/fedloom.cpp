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

// fedloom: serve | work | simulate | report
//
// Exit codes: 0 success, 1 runtime failure, 2 config or parse error,
// 3 workers not ready in time, 4 port already in use.

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fedloom/participant.hpp"
#include "fedloom/scenarios.hpp"

namespace {

using namespace fedloom;

enum Exit : int { kOk = 0, kFailure = 1, kConfig = 2, kNotReady = 3, kPortInUse = 4 };

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw StorageError("cannot write " + path.string());
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int fail(int code, const std::string& what) {
  std::fprintf(stderr, "fedloom: %s\n", what.c_str());
  return code;
}

// Blocks SIGINT/SIGTERM in every thread so the main thread can sigwait.
sigset_t block_stop_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

// ---------------------------------------------------------------------------

int cmd_serve(const std::string& config_path, const std::string& mode_override) {
  ServerConfig sc;
  try {
    sc = parse_server_config(KeyValueConfig::load(config_path));
    if (!mode_override.empty()) sc.options.orchestrator.mode = parse_mode(mode_override);
  } catch (const ConfigError& e) {
    return fail(kConfig, config_path + ": " + e.what());
  }

  try {
    ServerRuntime server(sc.options, sc.data.initial_weights(), sc.data.test_set());
    log(LogLevel::Info, "serve: listening on " + server.address().str());

    // Workers may come up after the server; keep knocking until the deadline.
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                               std::chrono::duration<double>(sc.ready_timeout));
    for (std::size_t i = 0; i < sc.workers.size(); ++i) {
      while (true) {
        const double left =
            std::chrono::duration<double>(deadline - std::chrono::steady_clock::now()).count();
        if (left <= 0.0) {
          return fail(kNotReady, "worker " + sc.workers[i].str() + " not ready within " +
                                     std::to_string(sc.ready_timeout) + " s (" + std::to_string(i) + " of " +
                                     std::to_string(sc.workers.size()) + " ready)");
        }
        try {
          server.add_worker(sc.workers[i], static_cast<std::uint32_t>(i), std::min(left, 5.0));
          break;
        } catch (const TransportError& e) {
          log(LogLevel::Debug, std::string("serve: ") + e.what());
          std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
      }
    }

    const auto records = server.run(sc.rounds);
    write_file(sc.records_path, export_records(records));
    if (!sc.audit_path.empty()) write_file(sc.audit_path, consumed_csv(server.orchestrator().consumed()));
    std::printf("rounds %zu final_accuracy %s records %s\n", records.size(),
                detail::accuracy_text(records.empty() ? 0.0 : records.back().accuracy).c_str(),
                sc.records_path.c_str());
    server.stop();
    return kOk;
  } catch (const PortInUse& e) {
    return fail(kPortInUse, e.what());
  } catch (const ConfigError& e) {
    return fail(kConfig, e.what());
  } catch (const std::exception& e) {
    return fail(kFailure, e.what());
  }
}

int cmd_work(const std::string& config_path) {
  WorkerConfig wc;
  try {
    wc = parse_worker_config(KeyValueConfig::load(config_path));
  } catch (const ConfigError& e) {
    return fail(kConfig, config_path + ": " + e.what());
  }

  const sigset_t stop_set = block_stop_signals();
  try {
    WorkerNode node(wc.options);
    std::printf("listening %s blob %s\n", node.address().str().c_str(), node.blob_address().str().c_str());
    std::fflush(stdout);
    int sig = 0;
    sigwait(&stop_set, &sig);
    log(LogLevel::Info, "work: signal " + std::to_string(sig) + ", shutting down");
    node.stop();
    return kOk;
  } catch (const PortInUse& e) {
    return fail(kPortInUse, e.what());
  } catch (const std::exception& e) {
    return fail(kFailure, e.what());
  }
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (auto part : detail::split_list(text, ',')) {
    seeds.push_back(KeyValueConfig::to_number<std::uint64_t>(part, "seeds", 0));
  }
  return seeds;
}

int cmd_simulate(const std::vector<std::string>& scenario_args, const std::string& seeds_text,
                 const std::string& out_dir) {
  std::vector<ScenarioConfig> configs;
  std::vector<std::uint64_t> seeds;
  try {
    for (const auto& s : scenario_args) configs.push_back(resolve_scenario(s));
    seeds = parse_seeds(seeds_text);
  } catch (const ConfigError& e) {
    return fail(kConfig, e.what());
  } catch (const InvalidArgument& e) {
    return fail(kConfig, e.what());
  }

  try {
    std::vector<RunSummary> runs;
    std::vector<Speedup> speedups;
    if (configs.size() >= 2) {
      auto cmp = compare_runs(configs, seeds);
      runs = std::move(cmp.runs);
      speedups = std::move(cmp.speedups);
    } else {
      for (auto seed : seeds) runs.push_back(summarize(configs.front(), seed));
    }
    const std::filesystem::path out(out_dir);
    for (const auto& r : runs) {
      write_file(out / (r.scenario + "_seed" + std::to_string(r.seed) + ".csv"), export_records(r.records));
    }
    write_file(out / "summary.csv", summary_csv(runs));
    if (!speedups.empty()) write_file(out / "speedup.csv", speedup_csv(speedups));
    std::fputs(summary_csv(runs).c_str(), stdout);
    return kOk;
  } catch (const ConfigError& e) {
    return fail(kConfig, e.what());
  } catch (const std::exception& e) {
    return fail(kFailure, e.what());
  }
}

int cmd_report(const std::string& records_path, double target) {
  std::vector<RoundRecord> records;
  try {
    records = parse_records(read_text(records_path));
  } catch (const ConfigError& e) {
    return fail(kConfig, records_path + ": " + e.what());
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const RoundRecord& a, const RoundRecord& b) { return a.finished_at < b.finished_at; });
  std::string out;
  for (const auto& r : records) {
    out += detail::exact_double(r.finished_at) + ' ' + detail::accuracy_text(r.accuracy) + '\n';
  }
  const auto t = time_to_accuracy(records, target);
  out += "# time_to_accuracy " + detail::exact_double(target) + ' ' + (t ? detail::exact_double(*t) : "unreached") +
         '\n';
  std::fputs(out.c_str(), stdout);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedloom: federated learning server, worker and simulator"};
  app.require_subcommand(1, 1);

  std::string config_path, mode;
  auto* serve = app.add_subcommand("serve", "Run the server described by a config file");
  serve->add_option("--config", config_path, "Server config file")->required();
  serve->add_option("--mode", mode, "Override the configured mode")->check(CLI::IsMember({"sync", "async"}));

  std::string work_config;
  auto* work = app.add_subcommand("work", "Run a worker until SIGINT or SIGTERM");
  work->add_option("--config", work_config, "Worker config file")->required();

  std::vector<std::string> scenarios;
  std::string seeds = "1";
  std::string out_dir = ".";
  auto* simulate = app.add_subcommand("simulate", "Run scenarios on the virtual clock");
  simulate->add_option("--scenario", scenarios, "Built-in scenario name or scenario file (repeatable)")->required();
  simulate->add_option("--seeds", seeds, "Comma-separated seeds");
  simulate->add_option("--out", out_dir, "Output directory");

  std::string records_path;
  double target = 0.8;
  auto* report = app.add_subcommand("report", "Print accuracy-over-time pairs from a records CSV");
  report->add_option("--records", records_path, "Records CSV")->required();
  report->add_option("--target", target, "Target accuracy");

  app.footer("Built-in scenarios: " + [] {
    std::string names;
    for (const auto& [name, _] : builtin_scenarios()) names += (names.empty() ? "" : ", ") + name;
    return names;
  }());

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  if (*serve) return cmd_serve(config_path, mode);
  if (*work) return cmd_work(work_config);
  if (*simulate) return cmd_simulate(scenarios, seeds, out_dir);
  return cmd_report(records_path, target);
}
