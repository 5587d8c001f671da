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

#include <atomic>
#include <cstring>
#include <filesystem>
#include <random>
#include <set>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

#include "fedloom/warehouse.hpp"

namespace fedloom {
namespace {

class WarehouseDir : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() /
                              ("fedloom_wh_" + std::to_string(::getpid()) + "_" +
                               ::testing::UnitTest::GetInstance()->current_test_info()->name());
  void TearDown() override { std::filesystem::remove_all(dir); }
};

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes b(n);
  for (auto& v : b) v = static_cast<std::uint8_t>(rng());
  return b;
}

TEST(DataIdText, HexRoundTripAndRejects) {
  const auto id = DataId::random();
  const auto hex = id.hex();
  ASSERT_EQ(hex.size(), 32u);
  for (char c : hex) EXPECT_TRUE(std::isdigit(static_cast<unsigned char>(c)) || (c >= 'a' && c <= 'f'));
  EXPECT_EQ(DataId::parse(hex), id);
  EXPECT_EQ(DataId(0x0123456789abcdefULL, 1).hex(), "0123456789abcdef0000000000000001");
  EXPECT_THROW(DataId::parse("abc"), InvalidArgument);
  EXPECT_THROW(DataId::parse(std::string(31, '0') + "g"), InvalidArgument);
}

TEST_F(WarehouseDir, RoundTripOnBothBackends) {
  Warehouse w(dir);
  std::mt19937_64 rng(1);
  for (std::size_t n : {0u, 1u, 7u, 4096u}) {
    const auto payload = random_bytes(rng, n);
    EXPECT_EQ(w.get(w.put(payload, Backend::Memory)), payload);
    const auto id = w.put(payload, Backend::File);
    EXPECT_EQ(w.get(id), payload);
    EXPECT_TRUE(std::filesystem::exists(dir / id.hex()));
  }
}

TEST_F(WarehouseDir, IdenticalPayloadsGetDistinctIds) {
  Warehouse w(dir);
  const Bytes p{1, 2, 3};
  EXPECT_NE(w.put(p), w.put(p));
  EXPECT_NE(w.put(p, Backend::Memory), w.put(p, Backend::Memory));
}

TEST(Warehouse, TenThousandPutsNoCollisions) {
  Warehouse w;
  std::set<std::string> seen;
  for (int i = 0; i < 10000; ++i) {
    const auto id = w.put(Bytes{static_cast<std::uint8_t>(i)}, Backend::Memory);
    ASSERT_TRUE(seen.insert(id.hex()).second) << "collision at put " << i;
  }
  EXPECT_EQ(w.issued(), 10000u);
}

TEST(Warehouse, UnknownIdsAndDeletes) {
  Warehouse w;
  EXPECT_THROW(w.get(DataId::random()), NotFound);
  EXPECT_NO_THROW(w.erase(DataId::random()));
  const auto id = w.put({9, 9}, Backend::Memory);
  w.erase(id);
  EXPECT_THROW(w.get(id), NotFound);
  EXPECT_NO_THROW(w.erase(id));
  EXPECT_FALSE(w.contains(id));
}

TEST(Warehouse, MemoryOnlyRefusesFileBackend) {
  Warehouse w;
  EXPECT_THROW(w.put({1}, Backend::File), StorageError);
}

TEST(Warehouse, HandlesStayInMemory) {
  Warehouse w;
  const auto id = w.put_handle(std::string("model"));
  EXPECT_EQ(std::any_cast<std::string>(w.get_handle(id)), "model");
  EXPECT_THROW(w.get_handle(DataId::random()), NotFound);
  EXPECT_TRUE(w.contains(id));
}

TEST_F(WarehouseDir, FileBackendSurvivesProcessRestart) {
  int fds[2];
  ASSERT_EQ(::pipe(fds), 0);
  const pid_t pid = ::fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    // Writer process: store one blob and report its id.
    ::close(fds[0]);
    Warehouse w(dir);
    const auto hex = w.put(Bytes{'p', 'e', 'r', 's', 'i', 's', 't'}).hex();
    const auto n = ::write(fds[1], hex.data(), hex.size());
    ::_exit(n == 32 ? 0 : 1);
  }
  ::close(fds[1]);
  char buf[32];
  ASSERT_EQ(::read(fds[0], buf, 32), 32);
  ::close(fds[0]);
  int status = 0;
  ::waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status) && WEXITSTATUS(status) == 0);

  Warehouse reopened(dir);
  EXPECT_EQ(reopened.get(DataId::parse(std::string_view(buf, 32))), (Bytes{'p', 'e', 'r', 's', 'i', 's', 't'}));
}

TEST_F(WarehouseDir, ConcurrentGetAndDeleteNeverTear) {
  Warehouse w(dir);
  std::mt19937_64 rng(3);
  const auto payload = random_bytes(rng, 64 * 1024);
  for (auto backend : {Backend::Memory, Backend::File}) {
    for (int round = 0; round < 20; ++round) {
      const auto id = w.put(payload, backend);
      std::atomic<int> torn{0};
      std::thread reader([&] {
        for (int i = 0; i < 50; ++i) {
          try {
            if (w.get(id) != payload) ++torn;
          } catch (const NotFound&) {
          }
        }
      });
      w.erase(id);
      reader.join();
      EXPECT_EQ(torn.load(), 0);
    }
  }
}

TEST(WeightsCodec, ByteExactFixture) {
  ModelWeights w(1, 2);
  w.values = {1.0, -2.0, 0.5, 0.0};
  Bytes expected = {'F', 'L', 'W', 'E', 'I', 'G', 'H', 'T', 0, 0, 0, 1, 0, 0, 0, 2};
  for (auto word : {0x3FF0000000000000ULL, 0xC000000000000000ULL, 0x3FE0000000000000ULL, 0ULL}) {
    for (int s = 56; s >= 0; s -= 8) expected.push_back(static_cast<std::uint8_t>(word >> s));
  }
  EXPECT_EQ(encode_weights(w), expected);
  EXPECT_EQ(decode_weights(expected), w);
}

TEST(WeightsCodec, RandomRoundTripsAreBitExact) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    ModelWeights w(static_cast<std::uint32_t>(1 + rng() % 20), static_cast<std::uint32_t>(2 + rng() % 9));
    for (auto& v : w.values) {
      std::uint64_t bits;
      do {
        bits = rng();
        std::memcpy(&v, &bits, sizeof v);
      } while (!std::isfinite(v));
    }
    EXPECT_EQ(decode_weights(encode_weights(w)), w);
  }
}

TEST(WeightsCodec, RejectsMalformedInput) {
  ModelWeights w(2, 2);
  auto bytes = encode_weights(w);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_weights(bad), FormatError);
  bytes.pop_back();
  EXPECT_THROW(decode_weights(bytes), FormatError);
  EXPECT_THROW(decode_weights(Bytes{'F', 'L'}), FormatError);
}

TEST_F(WarehouseDir, WeightsThroughFileBackend) {
  Warehouse w(dir);
  ModelWeights m(3, 2);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = 0.1 * static_cast<double>(i) - 0.25;
  EXPECT_EQ(w.get_weights(w.put_weights(m)), m);
}

TEST(ModelPointerShape, Validity) {
  EXPECT_TRUE((ModelPointer{{"127.0.0.1", 7000}, DataId::random()}.valid()));
  EXPECT_FALSE((ModelPointer{{"127.0.0.1", 0}, DataId::random()}.valid()));
  EXPECT_FALSE((ModelPointer{{"127.0.0.1", 7000}, DataId{}}.valid()));
}

}  // namespace
}  // namespace fedloom
