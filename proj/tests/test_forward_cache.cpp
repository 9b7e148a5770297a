#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "instantft/engine.hpp"
#include "instantft/forward_cache.hpp"
#include "instantft/nf4.hpp"

using namespace instantft;

namespace {

std::vector<float> payload_for(Index i, Index n) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(i) + 100);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(n));
  for (float& x : v) x = d(rng);
  return v;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("instantft_test_" + name);
}

}  // namespace

TEST(ForwardCache, PayloadIsActivationsPlusBaseLogits) {
  EXPECT_EQ(cache_payload_size(ModelSpec::mnist()), 1176 + 400 + 120 + 84 + 10);
  EXPECT_EQ(cache_payload_size(ModelSpec::svhn()), 1790);
}

TEST(ForwardCache, SizesFor1024Samples) {
  const Index payload = cache_payload_size(ModelSpec::mnist());
  ForwardCache fp32(CacheMode::kFp32, 1024, payload);
  ForwardCache nf4(CacheMode::kNf4, 1024, payload);
  for (Index i = 0; i < 1024; ++i) {
    const auto p = payload_for(i, payload);
    fp32.put(i, p);
    nf4.put(i, p);
  }
  const auto a = fp32.report();
  const auto b = nf4.report();
  EXPECT_EQ(a.entries, 1024);
  EXPECT_EQ(a.bytes, 1024u * 1790u * 4u);
  EXPECT_NEAR(a.bytes / 1e6, 7.33, 7.33 * 0.01);
  EXPECT_EQ(nf4.entry_stride(), 28u * 36u);
  EXPECT_NEAR(b.bytes / 1e6, 1.02, 1.02 * 0.03);
  EXPECT_GE(b.compression_ratio, 7.0);
  EXPECT_LE(b.compression_ratio, 7.3);
}

TEST(ForwardCache, Fp32IsExact) {
  ForwardCache c(CacheMode::kFp32, 4, 100);
  const auto p = payload_for(2, 100);
  std::vector<float> out(100);
  EXPECT_FALSE(c.get(2, out));
  c.put(2, p);
  EXPECT_TRUE(c.contains(2));
  EXPECT_FALSE(c.contains(1));
  ASSERT_TRUE(c.get(2, out));
  EXPECT_EQ(out, p);
  const auto r = c.report();
  EXPECT_EQ(r.hits, 1);
  EXPECT_EQ(r.misses, 1);
}

TEST(ForwardCache, Nf4MatchesCodec) {
  ForwardCache c(CacheMode::kNf4, 2, 130);
  const auto p = payload_for(1, 130);
  c.put(0, p);
  std::vector<float> out(130), expect(130);
  ASSERT_TRUE(c.get(0, out));
  std::vector<Nf4Block> blocks(nf4_block_count(130));
  nf4_encode(p, blocks);
  nf4_decode(blocks, expect);
  EXPECT_EQ(out, expect);
}

TEST(ForwardCache, WriteOnce) {
  ForwardCache c(CacheMode::kFp32, 1, 3);
  c.put(0, std::vector<float>{1, 2, 3});
  c.put(0, std::vector<float>{4, 5, 6});
  std::vector<float> out(3);
  c.get(0, out);
  EXPECT_EQ(out, (std::vector<float>{1, 2, 3}));
  EXPECT_EQ(c.report().entries, 1);
}

TEST(ForwardCache, Errors) {
  EXPECT_THROW(ForwardCache(CacheMode::kOff, 4, 10), ConfigError);
  EXPECT_THROW(ForwardCache(CacheMode::kFp32, 4, 0), ShapeError);
  ForwardCache c(CacheMode::kFp32, 4, 10);
  std::vector<float> out(10), small(9);
  EXPECT_THROW(c.get(4, out), ShapeError);
  EXPECT_THROW(c.get(-1, out), ShapeError);
  EXPECT_THROW(c.get(0, small), ShapeError);
  EXPECT_THROW(c.put(0, small), ShapeError);
  std::vector<float> bad(10, 0.0f);
  bad[5] = std::nanf("");
  EXPECT_THROW(c.put(0, bad), NumericError);
  EXPECT_THROW(parse_cache_mode("fp16"), ConfigError);
}

TEST(ForwardCache, SpillRoundTrip) {
  for (CacheMode mode : {CacheMode::kFp32, CacheMode::kNf4}) {
    ForwardCache c(mode, 5, 70);
    c.put(1, payload_for(1, 70));
    c.put(4, payload_for(4, 70));
    const auto path = temp_path(std::string("spill_") + std::string(to_string(mode)));
    c.save(path);
    ForwardCache d = ForwardCache::load(path);
    EXPECT_EQ(d.mode(), mode);
    EXPECT_EQ(d.capacity(), 5);
    EXPECT_EQ(d.report().entries, 2);
    EXPECT_FALSE(d.contains(0));
    std::vector<float> a(70), b(70);
    for (Index i : {1, 4}) {
      ASSERT_TRUE(c.get(i, a));
      ASSERT_TRUE(d.get(i, b));
      EXPECT_EQ(a, b);
    }
    std::filesystem::remove(path);
  }
}

TEST(ForwardCache, SpillRejectsCorruptFiles) {
  const auto path = temp_path("spill_bad");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTACACHE";
  }
  EXPECT_THROW(ForwardCache::load(path), DataError);
  ForwardCache c(CacheMode::kFp32, 3, 8);
  c.put(0, payload_for(0, 8));
  c.save(path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
  EXPECT_THROW(ForwardCache::load(path), DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(ForwardCache::load(path), DataError);
}

TEST(ForwardCache, ConcurrentDisjointWriters) {
  const Index n = 400, payload = 50;
  ForwardCache c(CacheMode::kNf4, n, payload);
  {
    std::vector<std::jthread> pool;
    for (int t = 0; t < 4; ++t) {
      pool.emplace_back([&, t] {
        std::vector<float> out(static_cast<std::size_t>(payload));
        for (Index i = t; i < n; i += 4) {
          c.put(i, payload_for(i, payload));
          EXPECT_TRUE(c.get(i, out));
        }
      });
    }
  }
  EXPECT_EQ(c.report().entries, n);
  EXPECT_EQ(c.report().hits, n);
  ForwardCache serial(CacheMode::kNf4, n, payload);
  std::vector<float> a(static_cast<std::size_t>(payload)), b(static_cast<std::size_t>(payload));
  for (Index i = 0; i < n; ++i) {
    serial.put(i, payload_for(i, payload));
    c.get(i, a);
    serial.get(i, b);
    ASSERT_EQ(a, b) << i;
  }
}
