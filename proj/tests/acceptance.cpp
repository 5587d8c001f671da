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
// Acceptance suite. Each criterion prints one PASS/FAIL line with the
// numbers it was judged on; the exit status is non-zero if any failed.
//
//   fedloom_acceptance [--criterion N]

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include "fedloom/aggregation.hpp"
#include "fedloom/blob.hpp"
#include "fedloom/model.hpp"
#include "fedloom/net.hpp"
#include "fedloom/protocol.hpp"
#include "fedloom/scenarios.hpp"
#include "fedloom/selection.hpp"
#include "fedloom/sim.hpp"

extern char** environ;

namespace {

using namespace fedloom;
namespace fs = std::filesystem;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string ttt_text(const std::optional<double>& t) { return t ? fmt("%.3f", *t) : "unreached"; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1-2: aggregation

std::vector<WorkerResponse> random_responses(std::mt19937_64& rng, ServerModelState& state, bool fresh) {
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  const auto n = 1 + rng() % 50;
  const auto classes = static_cast<std::uint32_t>(2 + rng() % 9);
  const auto features = static_cast<std::uint32_t>(rng() % (1000 / classes));
  state.version = rng() % 30;
  state.weights = ModelWeights(features, classes);
  std::vector<WorkerResponse> out;
  for (std::size_t r = 0; r < n; ++r) {
    WorkerResponse wr{static_cast<WorkerId>(r), fresh ? state.version : rng() % (state.version + 1), 1,
                      ModelWeights(features, classes), 1};
    for (auto& v : wr.weights.values) v = u(rng);
    out.push_back(std::move(wr));
  }
  return out;
}

Verdict criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::size_t max_weights = 0;
  for (int i = 0; i < 100; ++i) {
    ServerModelState s;
    const auto rs = random_responses(rng, s, false);
    const auto got = aggregate(s, rs, FedAvg{});
    max_weights = std::max(max_weights, got.weights.values.size());
    for (std::size_t j = 0; j < got.weights.values.size(); ++j) {
      long double sum = 0;
      for (const auto& r : rs) sum += r.weights.values[j];
      worst = std::max(worst, std::abs(got.weights.values[j] - static_cast<double>(sum / rs.size())));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 5.0, "max |fedavg - mean| " + fmt("%.3g", worst) + " over 100 cases (up to " +
                                            std::to_string(max_weights) + " weights), " + fmt("%.2f", secs) + " s"};
}

Verdict criterion2() {
  std::mt19937_64 rng(202);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    ServerModelState s;
    const auto rs = random_responses(rng, s, true);
    const auto mean = aggregate(s, rs, FedAvg{});
    for (const Weighted& w : {Weighted{StalenessScheme::Linear, 0.0}, Weighted{StalenessScheme::Polynomial, 0.5},
                              Weighted{StalenessScheme::Exponential, 0.5}}) {
      const auto got = aggregate(s, rs, w);
      for (std::size_t j = 0; j < got.weights.values.size(); ++j) {
        worst = std::max(worst, std::abs(got.weights.values[j] - mean.weights.values[j]));
      }
    }
  }
  double worst_sum = 0.0;
  std::uniform_real_distribution<double> u(1e-6, 1e3);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> raw(1 + rng() % 60);
    const std::uint64_t version = 20;
    for (auto& r : raw) {
      r = rng() % 2 ? u(rng)
                    : staleness_weight(Weighted{static_cast<StalenessScheme>(rng() % 3), 0.5}, version, rng() % 21);
    }
    double sum = 0.0;
    for (double v : normalize(raw)) sum += v;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  return {worst <= 1e-12 && worst_sum <= 1e-12,
          "fresh weighted vs fedavg " + fmt("%.3g", worst) + ", normalized sum error " + fmt("%.3g", worst_sum)};
}

// ---------------------------------------------------------------------------
// 3: gradient

Verdict criterion3() {
  std::mt19937_64 rng(303);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::uint32_t nf = 12, nc = 5;
  ModelWeights w(nf, nc);
  for (auto& v : w.values) v = 0.3 * g(rng);
  double worst = 0.0;
  std::size_t checked = 0;
  for (int s = 0; s < 5; ++s) {
    std::vector<double> x(nf);
    for (auto& v : x) v = g(rng);
    const auto label = static_cast<std::uint32_t>(rng() % nc);
    std::vector<double> grad;
    loss_and_gradient(w, x, label, grad);
    const double h = 1e-5;
    for (std::size_t i = 0; i < w.values.size(); ++i) {
      auto plus = w, minus = w;
      plus.values[i] += h;
      minus.values[i] -= h;
      const double numeric = (loss(plus, x, label) - loss(minus, x, label)) / (2 * h);
      const double scale = std::max(std::abs(numeric), std::abs(grad[i]));
      const double err = scale > 1e-7 ? std::abs(numeric - grad[i]) / scale : 0.0;
      worst = std::max(worst, err);
      ++checked;
    }
  }
  return {worst <= 1e-4, "max relative error " + fmt("%.3g", worst) + " over " + std::to_string(checked) +
                             " partials on 5 samples"};
}

// ---------------------------------------------------------------------------
// 4: selection on the t_one = 1, 2, 10 pool

Verdict criterion4() {
  const std::vector<WorkerProfile> pool = {
      {0, 1.0, 0.5, 1, 1, 100}, {1, 2.0, 0.5, 1, 1, 100}, {2, 10.0, 0.5, 1, 1, 100}};
  std::vector<std::string> bad;
  if (select_rminmax(pool, {2.0, 5.0}) != WorkerSet{0, 1}) bad.push_back("rminmax(2,5)");
  if (select_rminmax(pool, {5.0, 5.0}) != WorkerSet{0}) bad.push_back("rminmax(5,5)");
  const auto up = update_rminmax({5.0, 5.0}, 0.10, 0.32);
  if (std::abs(up.rmin - 5.0 * 1.10 / 1.32) > 1e-12 || std::abs(up.rmax - 6.0) > 1e-12) bad.push_back("rminmax update");
  if (!select_timebased(pool, {3, 0.0, 0.01}).empty()) bad.push_back("timebased(0)");
  if (select_timebased(pool, {3, 7.0, 0.01}) != WorkerSet{0, 1}) bad.push_back("timebased(7)");

  TimeBasedState s{3, 0.0, 0.01};
  std::string trace;
  std::vector<double> budgets;
  std::vector<WorkerSet> sets;
  for (int step = 0; step < 4; ++step) {
    const auto sel = select_timebased(pool, s);
    budgets.push_back(s.t_budget);
    sets.push_back(sel);
    trace += (trace.empty() ? "" : " -> ") + fmt("%g", s.t_budget) + "{" + std::to_string(sel.size()) + "}";
    std::vector<WorkerProfile> rest;
    for (const auto& p : pool) {
      if (!std::binary_search(sel.begin(), sel.end(), p.worker)) rest.push_back(p);
    }
    s = update_timebased(s, rest, 0.5, 0.5);
  }
  if (budgets != std::vector<double>{0.0, 3.5, 6.5, 30.5}) bad.push_back("budget progression");
  if (sets != std::vector<WorkerSet>{{}, {0}, {0, 1}, {0, 1, 2}}) bad.push_back("selected sets");
  std::string detail = "budget trace " + trace;
  for (const auto& b : bad) detail += "; mismatch: " + b;
  return {bad.empty(), detail};
}

// ---------------------------------------------------------------------------
// 5-7: reference pool

const std::uint64_t kSeeds[] = {1, 2, 3};

struct ReferenceRuns {
  std::vector<RunSummary> sync, async, sequential;
};

const ReferenceRuns& reference_runs() {
  static const ReferenceRuns runs = [] {
    ReferenceRuns r;
    for (auto seed : kSeeds) {
      r.sync.push_back(summarize(scenarios::reference_sync(), seed));
      r.async.push_back(summarize(scenarios::reference_async(), seed));
      r.sequential.push_back(summarize(scenarios::reference_sequential(), seed));
    }
    return r;
  }();
  return runs;
}

double best_accuracy(const RunSummary& s) {
  double best = 0.0;
  for (const auto& r : s.records) best = std::max(best, r.accuracy);
  return best;
}

Verdict criterion5() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& runs = reference_runs();
  bool pass = true;
  std::string detail;
  for (std::size_t i = 0; i < std::size(kSeeds); ++i) {
    const auto& a = runs.async[i].time_to_target;
    const auto& s = runs.sync[i].time_to_target;
    const auto& q = runs.sequential[i].time_to_target;
    bool ok = a && s && q && *a < *s && *s < *q && *a <= 0.8 * *s && *s <= 0.9 * *q;
    pass &= ok;
    detail += "seed " + std::to_string(kSeeds[i]) + ": async " + ttt_text(a) + " sync " + ttt_text(s) + " seq " +
              ttt_text(q);
    if (a && s && *s > 0) detail += " (async/sync " + fmt("%.3f", *a / *s) + ")";
    if (s && q && *q > 0) detail += " (sync/seq " + fmt("%.3f", *s / *q) + ")";
    detail += ok ? "; " : " FAILS; ";
  }
  const double secs = seconds_since(t0);
  pass &= secs < 120.0;
  return {pass, detail + fmt("%.1f", secs) + " s"};
}

Verdict criterion6() {
  const auto& runs = reference_runs();
  bool pass = true;
  std::string detail;
  for (std::size_t i = 0; i < std::size(kSeeds); ++i) {
    const auto random = summarize(scenarios::reference_random(), kSeeds[i]);
    const auto& s = runs.sync[i].time_to_target;
    const auto& r = random.time_to_target;
    // An unreached target counts as never, which is no earlier than anything.
    const bool ok = !r || (s && *r >= *s);
    pass &= ok;
    detail += "seed " + std::to_string(kSeeds[i]) + ": random " + ttt_text(r) + " sync " + ttt_text(s) +
              (ok ? "; " : " FAILS; ");
  }
  return {pass, detail};
}

Verdict criterion7() {
  const auto& runs = reference_runs();
  const auto cfg = scenarios::reference_rminmax_stall();
  bool pass = true;
  std::string detail;
  for (std::size_t i = 0; i < std::size(kSeeds); ++i) {
    const auto recs = run_scenario(cfg, kSeeds[i]);
    bool same = recs.size() == cfg.rounds;
    for (const auto& r : recs) same &= r.selected == recs.front().selected;
    const double ceiling = best_accuracy(runs.sequential[i]);
    const double last = recs.empty() ? 0.0 : recs.back().accuracy;
    const bool ok = same && ceiling - last >= 0.25;
    pass &= ok;
    detail += "seed " + std::to_string(kSeeds[i]) + ": " + std::to_string(recs.size()) + " rounds, selected " +
              std::to_string(recs.empty() ? 0 : recs.front().selected.size()) + (same ? " fixed" : " GREW") +
              ", final " + fmt("%.3f", last) + " vs ceiling " + fmt("%.3f", ceiling) + (ok ? "; " : " FAILS; ");
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 8: protocol

ModelPointer random_pointer(std::mt19937_64& rng) {
  return {{"10.0." + std::to_string(rng() % 256) + "." + std::to_string(rng() % 256),
           static_cast<std::uint16_t>(1 + rng() % 65535)},
          DataId(rng(), rng() | 1)};
}

Message random_message(std::mt19937_64& rng) {
  auto p = [&] { return random_pointer(rng); };
  const std::uint64_t version = rng() >> (rng() % 64);
  switch (rng() % 7) {
    case 0:
      return AddWorkerRequest{p(), rng() % 2 ? std::optional<std::uint32_t>(rng() % 100) : std::nullopt};
    case 1:
      return WorkerReady{p(), p(), rng() % 100000};
    case 2:
      return TrainRequest{p(), p(), static_cast<std::uint32_t>(1 + rng() % 50), version};
    case 3: {
      std::optional<double> secs;
      if (rng() % 2) secs = static_cast<double>(rng() % 1000000) / 1000.0;
      return TrainDone{p(), p(), version, static_cast<std::uint32_t>(rng() % 50), secs};
    }
    case 4:
      return TrainRefused{p(), p(), version, rng() % 2 ? "busy" : "not \"mine\"\n"};
    case 5:
      return FetchRequest{p(), p()};
    default: {
      const auto ptr = p();
      return FetchCredential{TransferCredential{ptr.address, DataId(rng(), rng()), DataId::random().hex(), true},
                             p(), version};
    }
  }
}

Verdict criterion8() {
  std::mt19937_64 rng(808);
  int roundtrips = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto m = random_message(rng);
    if (decode_frame(encode_frame(m)) == m) ++roundtrips;
  }
  const std::string fixture("\x00\x00\x00\x07RELAT{}", 11);
  const bool fixture_ok = encode_frame(Frame{Topic::Relationship, "{}"}) == fixture;

  Warehouse warehouse;
  BlobServer server(warehouse, "127.0.0.1", 0);
  const auto id = warehouse.put({7, 7, 7}, Backend::Memory);
  const auto once = server.offer(id);
  bool first = false, second_rejected = false;
  try {
    first = blob_fetch(once) == Bytes{7, 7, 7};
    blob_fetch(once);
  } catch (const CredentialRejected&) {
    second_rejected = true;
  }

  int single_winner_trials = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    const auto cred = server.offer(id);
    std::atomic<int> wins{0};
    std::vector<std::thread> racers;
    for (int k = 0; k < 4; ++k) {
      racers.emplace_back([&] {
        try {
          blob_fetch(cred);
          ++wins;
        } catch (const Error&) {
        }
      });
    }
    for (auto& r : racers) r.join();
    single_winner_trials += wins.load() == 1;
  }
  server.stop();
  const bool pass =
      roundtrips == 1000 && fixture_ok && first && second_rejected && single_winner_trials == trials;
  return {pass, std::to_string(roundtrips) + "/1000 roundtrips, fixture " + (fixture_ok ? "ok" : "MISMATCH") +
                    ", reuse " + (second_rejected ? "rejected" : "ACCEPTED") + ", concurrent single winner " +
                    std::to_string(single_winner_trials) + "/" + std::to_string(trials)};
}

// ---------------------------------------------------------------------------
// 9-10: the fedloom binary

class Child {
 public:
  Child(std::vector<std::string> args, const fs::path& out_file) {
    args.insert(args.begin(), FEDLOOM_BIN);
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_addopen(&fa, 1, out_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_addopen(&fa, 2, "/dev/null", O_WRONLY, 0);
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    if (posix_spawn(&pid_, FEDLOOM_BIN, &fa, nullptr, argv.data(), environ) != 0) pid_ = -1;
    posix_spawn_file_actions_destroy(&fa);
  }
  ~Child() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
  }
  void stop() {
    if (pid_ > 0) ::kill(pid_, SIGTERM);
  }
  int wait() {
    if (pid_ <= 0) return -1;
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  }

 private:
  pid_t pid_ = -1;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint16_t free_port() {
  Listener l("127.0.0.1", 0, [](Socket&) {});
  return l.port();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fedloom_accept_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct NetRun {
  int code = -1;
  std::size_t rounds = 0;
  std::size_t consumed = 0;
  std::size_t fresh = 0;  // base_version == dispatch_version
  std::size_t stale = 0;  // base_version < merged_into
};

NetRun network_run(const fs::path& dir, const std::string& mode) {
  const std::string data =
      "seed = 5\nn_classes = 10\nn_features = 20\nspread = 0.3\ntrain_per_class = 60\nbatch_size = 100\n"
      "allocation = 2,2,2\n";
  const double delays[] = {0.005, 0.02, 0.08};
  std::vector<std::unique_ptr<Child>> workers;
  std::string server_cfg = data + "mode = " + mode + "\nrounds = 10\nepochs = 2\nready_timeout = 20\n";
  if (mode == "async") server_cfg += "policy = polynomial:0.5\n";
  for (int i = 0; i < 3; ++i) {
    const auto port = free_port();
    const auto cfg = dir / ("worker" + std::to_string(i) + ".conf");
    std::ofstream(cfg) << data << "port = " << port << "\nblob_port = 0\ndelay_per_epoch = " << delays[i] << "\n";
    workers.push_back(std::make_unique<Child>(
        std::vector<std::string>{"work", "--config", cfg.string()}, dir / ("worker" + std::to_string(i) + ".out")));
    server_cfg += "worker = 127.0.0.1:" + std::to_string(port) + "\n";
  }
  const auto records = dir / (mode + "_records.csv");
  const auto audit = dir / (mode + "_audit.csv");
  server_cfg += "records = " + records.string() + "\naudit = " + audit.string() + "\n";
  const auto scfg = dir / (mode + "_server.conf");
  std::ofstream(scfg) << server_cfg;

  NetRun run;
  Child server({"serve", "--config", scfg.string()}, dir / (mode + "_server.out"));
  run.code = server.wait();
  for (auto& w : workers) {
    w->stop();
    w->wait();
  }
  if (run.code != 0) return run;
  run.rounds = parse_records(slurp(records)).size();
  std::istringstream in(slurp(audit));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    unsigned long long worker, base, dispatch, merged;
    if (std::sscanf(line.c_str(), "%llu,%llu,%llu,%llu", &worker, &base, &dispatch, &merged) != 4) continue;
    ++run.consumed;
    run.fresh += base == dispatch;
    run.stale += base < merged;
  }
  return run;
}

Verdict criterion9() {
  const auto dir = scratch("net");
  const auto sync = network_run(dir, "sync");
  const auto async = network_run(dir, "async");
  fs::remove_all(dir);
  const bool sync_ok = sync.code == 0 && sync.rounds == 10 && sync.consumed > 0 && sync.fresh == sync.consumed;
  const bool async_ok = async.code == 0 && async.rounds == 10 && async.stale >= 1;
  return {sync_ok && async_ok,
          "sync exit " + std::to_string(sync.code) + ", " + std::to_string(sync.rounds) + " rounds, " +
              std::to_string(sync.fresh) + "/" + std::to_string(sync.consumed) + " consumed at dispatch version; async exit " +
              std::to_string(async.code) + ", " + std::to_string(async.rounds) + " rounds, " +
              std::to_string(async.stale) + "/" + std::to_string(async.consumed) + " consumed stale"};
}

Verdict criterion10() {
  const auto dir = scratch("determinism");
  auto simulate = [&](const std::string& sub) {
    return Child({"simulate", "--scenario", "reference_sync", "--scenario", "reference_async", "--seeds", "1,2",
                  "--out", (dir / sub).string()},
                 dir / (sub + ".out"))
        .wait();
  };
  const int a = simulate("a");
  const int b = simulate("b");
  std::size_t files = 0, identical = 0;
  if (a == 0 && b == 0) {
    for (const auto& e : fs::directory_iterator(dir / "a")) {
      ++files;
      const auto other = dir / "b" / e.path().filename();
      identical += fs::exists(other) && slurp(e.path()) == slurp(other);
    }
  }
  fs::remove_all(dir);
  return {a == 0 && b == 0 && files > 0 && files == identical,
          std::to_string(identical) + "/" + std::to_string(files) + " output files byte-identical across two runs"};
}

const std::vector<std::function<Verdict()>> kCriteria = {criterion1, criterion2, criterion3, criterion4,
                                                         criterion5, criterion6, criterion7, criterion8,
                                                         criterion9, criterion10};

const char* kNames[] = {"aggregation oracle",   "staleness algebra",   "gradient check",   "selection traces",
                        "async < sync < sequential", "random selection", "rminmax stall",   "protocol conformance",
                        "network run",          "determinism"};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) {
      which.push_back(std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N]...\n", argv[0]);
      return 2;
    }
  }
  if (which.empty()) {
    for (int i = 1; i <= static_cast<int>(kCriteria.size()); ++i) which.push_back(i);
  }
  int failures = 0;
  for (int n : which) {
    if (n < 1 || n > static_cast<int>(kCriteria.size())) {
      std::fprintf(stderr, "no criterion %d\n", n);
      return 2;
    }
    Verdict v;
    try {
      v = kCriteria[n - 1]();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::printf("criterion %d %s: %s: %s\n", n, v.pass ? "PASS" : "FAIL", kNames[n - 1], v.detail.c_str());
    std::fflush(stdout);
    failures += !v.pass;
  }
  return failures == 0 ? 0 : 1;
}
