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
#include <gtest/gtest.h>

#include <algorithm>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include "fedloom/net.hpp"
#include "fedloom/telemetry.hpp"

extern char** environ;

namespace fedloom {
namespace {

namespace fs = std::filesystem;

// A child process running the fedloom binary, stdout captured.
class Child {
 public:
  explicit Child(std::vector<std::string> args) {
    args.insert(args.begin(), FEDLOOM_BIN);
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0) throw std::runtime_error("pipe");
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, fds[1], 1);
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    if (posix_spawn(&pid_, FEDLOOM_BIN, &fa, nullptr, argv.data(), environ) != 0) {
      throw std::runtime_error("spawn failed");
    }
    posix_spawn_file_actions_destroy(&fa);
    ::close(fds[1]);
    out_ = fds[0];
  }
  ~Child() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
    ::close(out_);
  }

  // Reads stdout until a newline or the timeout.
  std::string read_line(double seconds) {
    std::string line;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(static_cast<int>(seconds * 1000));
    while (std::chrono::steady_clock::now() < deadline) {
      pollfd p{out_, POLLIN, 0};
      if (::poll(&p, 1, 50) <= 0) continue;
      char c;
      if (::read(out_, &c, 1) != 1) break;
      if (c == '\n') return line;
      line += c;
    }
    return line;
  }

  void signal(int sig) { ::kill(pid_, sig); }

  int wait() {
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  }

 private:
  pid_t pid_ = -1;
  int out_ = -1;
};

struct Result {
  int code;
  std::string out;
};

Result run(std::vector<std::string> args) {
  Child c(std::move(args));
  std::string out, line;
  while (true) {
    line = c.read_line(120);
    if (line.empty()) break;
    out += line + '\n';
  }
  return {c.wait(), out};
}

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

class CliTest : public ::testing::Test {
 protected:
  fs::path dir = fs::temp_directory_path() /
                 ("fedloom_cli_" + std::to_string(::getpid()) + "_" +
                  ::testing::UnitTest::GetInstance()->current_test_info()->name());
  void SetUp() override { fs::create_directories(dir); }
  void TearDown() override { fs::remove_all(dir); }

  fs::path write(const std::string& name, const std::string& text) {
    const auto p = dir / name;
    std::ofstream(p) << text;
    return p;
  }
};

TEST_F(CliTest, MalformedServerConfigExitsTwo) {
  const auto cfg = write("s.conf", "port = 7000\nworker 127.0.0.1:7001\n");
  EXPECT_EQ(run({"serve", "--config", cfg.string()}).code, 2);
  EXPECT_EQ(run({"serve", "--config", (dir / "missing.conf").string()}).code, 2);
  EXPECT_EQ(run({"work", "--config", write("w.conf", "allocation = x\n").string()}).code, 2);
  EXPECT_EQ(run({"bogus"}).code, 2);
  EXPECT_EQ(run({"simulate", "--scenario", "no_such_scenario"}).code, 2);
}

TEST_F(CliTest, ReportUnreachedAndSorted) {
  const auto csv = write("r.csv", std::string(kRecordsHeader) +
                                      "\n2,1,2.5,0.4,0,1\n1,0,1,0.3,0,1\n");
  const auto r = run({"report", "--records", csv.string(), "--target", "0.8"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "1 0.3\n2.5 0.4\n# time_to_accuracy 0.8 unreached\n");

  const auto one = write("one.csv", std::string(kRecordsHeader) + "\n1,0,3.25,0.9,0;1,2\n");
  EXPECT_EQ(run({"report", "--records", one.string()}).out, "3.25 0.9\n# time_to_accuracy 0.8 3.25\n");

  EXPECT_EQ(run({"report", "--records", write("bad.csv", "nonsense\n").string()}).code, 2);
}

TEST_F(CliTest, SimulateIsByteIdentical) {
  const auto scen = write("tiny.conf",
                          "name = tiny\nallocation = 1,1\nspeed_class = 1,3\nbatch_size = 20\nn_classes = 4\n"
                          "train_per_class = 20\nrounds = 5\nepochs = 2\n");
  const auto a = run({"simulate", "--scenario", scen.string(), "--seeds", "1,2,3", "--out", (dir / "a").string()});
  const auto b = run({"simulate", "--scenario", scen.string(), "--seeds", "1,2,3", "--out", (dir / "b").string()});
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 4u);  // three runs and the summary
  EXPECT_TRUE(fs::exists(dir / "a" / "tiny_seed2.csv"));
}

TEST_F(CliTest, SimulateBuiltinSequentialBaseline) {
  const auto r = run({"simulate", "--scenario", "table4_1_row1", "--seeds", "1", "--out", dir.string()});
  ASSERT_EQ(r.code, 0);
  const auto csv = slurp(dir / "table4_1_row1_seed1.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);
}

TEST_F(CliTest, WorkerStopsCleanlyOnSigterm) {
  const auto port = free_port();
  const auto cfg = write("w.conf", "port = " + std::to_string(port) + "\nallocation = 1\n");
  Child w({"work", "--config", cfg.string()});
  EXPECT_EQ(w.read_line(10).rfind("listening 127.0.0.1:" + std::to_string(port), 0), 0u);
  w.signal(SIGTERM);
  EXPECT_EQ(w.wait(), 0);
}

TEST_F(CliTest, WorkerPortInUseExitsFour) {
  Listener busy("127.0.0.1", 0, [](Socket&) {});
  const auto cfg = write("w.conf", "port = " + std::to_string(busy.port()) + "\nallocation = 1\n");
  EXPECT_EQ(run({"work", "--config", cfg.string()}).code, 4);
}

TEST_F(CliTest, TwoWorkersOnOneHost) {
  const auto p1 = free_port();
  const auto p2 = free_port();
  Child a({"work", "--config", write("a.conf", "port = " + std::to_string(p1) + "\nallocation = 1\n").string()});
  Child b({"work", "--config", write("b.conf", "port = " + std::to_string(p2) + "\nallocation = 1\n").string()});
  EXPECT_FALSE(a.read_line(10).empty());
  EXPECT_FALSE(b.read_line(10).empty());
  a.signal(SIGINT);
  b.signal(SIGTERM);
  EXPECT_EQ(a.wait(), 0);
  EXPECT_EQ(b.wait(), 0);
}

TEST_F(CliTest, ServerWithoutWorkersExitsThree) {
  const auto cfg = write("s.conf", "worker = 127.0.0.1:" + std::to_string(free_port()) + "\nready_timeout = 1\n");
  EXPECT_EQ(run({"serve", "--config", cfg.string()}).code, 3);
}

TEST_F(CliTest, ServeOneWorkerThreeRounds) {
  const auto wport = free_port();
  const std::string data = "n_classes = 4\nn_features = 6\ntrain_per_class = 50\nbatch_size = 50\nallocation = 2\n";
  Child w({"work", "--config", write("w.conf", "port = " + std::to_string(wport) + "\n" + data).string()});
  ASSERT_FALSE(w.read_line(10).empty());
  const auto records = dir / "records.csv";
  const auto cfg = write("s.conf", "worker = 127.0.0.1:" + std::to_string(wport) + "\nrounds = 3\nepochs = 2\n" +
                                       data + "records = " + records.string() + "\n");
  const auto r = run({"serve", "--config", cfg.string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("rounds 3 ", 0), 0u);
  const auto recs = parse_records(slurp(records));
  EXPECT_EQ(recs.size(), 3u);
  w.signal(SIGTERM);
  EXPECT_EQ(w.wait(), 0);
}

}  // namespace
}  // namespace fedloom
