#include <gtest/gtest.h>

#include "instantft/engine.hpp"
#include "test_util.hpp"

using namespace instantft;
using instantft::testing::random_tensor;

namespace {

Dataset random_dataset(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset ds{"random", random_tensor<float>({n, 1, 28, 28}, rng, 0, 1), {}};
  for (Index i = 0; i < n; ++i) ds.labels.push_back(static_cast<std::uint8_t>(rng() % 10));
  return ds;
}

StrategyConfig instant(CacheMode mode, int epochs) {
  StrategyConfig c;
  c.method = Method::kInstantFt;
  c.cache_mode = mode;
  c.epochs = epochs;
  c.batch = 7;  // leaves a short final batch
  c.seed = 5;
  return c;
}

}  // namespace

TEST(ForwardCacheProtocol, BaseRunsOncePerSampleWithCache) {
  const auto base = init_model<float>(ModelSpec::mnist(), 1);
  const Dataset train = random_dataset(30, 1);
  for (CacheMode mode : {CacheMode::kFp32, CacheMode::kNf4}) {
    const auto r = finetune(base, instant(mode, 10), train);
    EXPECT_EQ(r.totals.base_forward_calls, 30) << to_string(mode);
    EXPECT_EQ(r.totals.cache_misses, 30);
    EXPECT_EQ(r.totals.cache_hits, 30 * 9);
    ASSERT_TRUE(r.cache.has_value());
    EXPECT_EQ(r.cache->entries, 30);
    EXPECT_EQ(r.cache->hits, 30 * 9);
    EXPECT_EQ(r.epochs.front().stats.base_forward_calls, 30);
    for (std::size_t e = 1; e < r.epochs.size(); ++e) EXPECT_EQ(r.epochs[e].stats.base_forward_calls, 0);
  }
}

TEST(ForwardCacheProtocol, BaseRunsEveryEpochWithoutCache) {
  const auto base = init_model<float>(ModelSpec::mnist(), 2);
  const Dataset train = random_dataset(30, 2);
  const auto r = finetune(base, instant(CacheMode::kOff, 10), train);
  EXPECT_EQ(r.totals.base_forward_calls, 300);
  EXPECT_EQ(r.totals.cache_hits + r.totals.cache_misses, 0);
  EXPECT_FALSE(r.cache.has_value());
}

TEST(ForwardCacheProtocol, Fp32CacheMatchesNoCacheBitForBit) {
  // The FP32 cache stores exactly what the base network produced.
  const auto base = init_model<float>(ModelSpec::mnist(), 3);
  const Dataset train = random_dataset(21, 3);
  const auto a = finetune(base, instant(CacheMode::kOff, 3), train);
  const auto b = finetune(base, instant(CacheMode::kFp32, 3), train);
  EXPECT_EQ(a.adapters, b.adapters);
}

TEST(ForwardCacheProtocol, Nf4CacheStaysClose) {
  const auto base = init_model<float>(ModelSpec::mnist(), 4);
  const Dataset train = random_dataset(21, 4);
  const auto a = finetune(base, instant(CacheMode::kFp32, 3), train);
  const auto b = finetune(base, instant(CacheMode::kNf4, 3), train);
  EXPECT_FALSE(a.adapters == b.adapters);
  for (std::size_t i = 0; i < a.adapters.size(); ++i) {
    const double scale = std::max(1e-3f, a.adapters[i].B.cwiseAbs().maxCoeff());
    EXPECT_LE((a.adapters[i].B - b.adapters[i].B).cwiseAbs().maxCoeff() / scale, 0.25) << i;
  }
}

TEST(InstantForward, ZeroBLeavesBaseLogits) {
  const auto base = init_model<float>(ModelSpec::mnist(), 5);
  std::mt19937_64 rng(5);
  const auto adapters = make_skip_adapters<float>(base.spec, 4, rng);
  const auto x = random_tensor<float>({1, 28, 28}, rng, 0, 1);
  const auto s = instantft_forward(base, adapters, x, nullptr, 0);
  EXPECT_EQ(s.logits, s.logits_hat);
  EXPECT_EQ(s.logits, forward_trace(base, x, {}).logits.vec());
}

TEST(InstantForward, LogitsAreBasePlusAdapterSum) {
  const auto base = init_model<float>(ModelSpec::mnist(), 6);
  std::mt19937_64 rng(6);
  auto adapters = make_skip_adapters<float>(base.spec, 4, rng);
  for (auto& a : adapters) a.B = random_tensor<float>({10, 4}, rng).matrix(10, 4);
  const auto x = random_tensor<float>({1, 28, 28}, rng, 0, 1);
  const auto s = instantft_forward(base, adapters, x, nullptr, 0);
  const auto t = forward_trace(base, x, {});
  Vec<float> expect = t.logits.vec();
  for (int i = 0; i < kNumTaps; ++i) expect += adapters[i].B * (adapters[i].A * t.taps[i].vec());
  EXPECT_LE((s.logits - expect).cwiseAbs().maxCoeff(), 1e-5f);
}

TEST(InstantForward, RejectsMiswiredAdapters) {
  const auto base = init_model<float>(ModelSpec::mnist(), 7);
  std::mt19937_64 rng(7);
  auto adapters = make_skip_adapters<float>(base.spec, 4, rng);
  const auto x = random_tensor<float>({1, 28, 28}, rng, 0, 1);
  auto missing = adapters;
  missing.pop_back();
  EXPECT_THROW(instantft_forward(base, missing, x, nullptr, 0), ShapeError);
  auto swapped = adapters;
  std::swap(swapped[1], swapped[2]);
  EXPECT_THROW(instantft_forward(base, swapped, x, nullptr, 0), ShapeError);
}

TEST(InstantBackward, NeedsSavedTensors) {
  const auto base = init_model<float>(ModelSpec::mnist(), 8);
  std::mt19937_64 rng(8);
  const auto adapters = make_skip_adapters<float>(base.spec, 4, rng);
  InstantSaved<float> empty;
  EXPECT_THROW(instantft_backward<float>(Vec<float>::Zero(10), empty, adapters), ShapeError);
}

TEST(InstantBackward, TouchesOnlyAdapters) {
  const auto base = init_model<float>(ModelSpec::mnist(), 9);
  std::mt19937_64 rng(9);
  const auto adapters = make_skip_adapters<float>(base.spec, 4, rng);
  const auto x = random_tensor<float>({1, 28, 28}, rng, 0, 1);
  const auto r = sample_gradients(base, Method::kInstantFt, adapters, x, 4);
  for (const auto& g : r.grads.layers) {
    EXPECT_EQ(g.dweight.size(), 0);
    EXPECT_EQ(g.dbias.size(), 0);
  }
  ASSERT_EQ(r.grads.adapters.size(), 5u);
  // B = 0 means dh = 0 and so dA = 0 on the first step; dB is non-zero.
  for (const auto& g : r.grads.adapters) {
    EXPECT_TRUE(g.dA.isZero());
    EXPECT_FALSE(g.dB.isZero());
  }
}

TEST(InstantBackward, SgdStepMovesAgainstGradient) {
  const auto base = init_model<float>(ModelSpec::mnist(), 10);
  std::mt19937_64 rng(10);
  auto adapters = make_skip_adapters<float>(base.spec, 4, rng);
  const auto x = random_tensor<float>({1, 28, 28}, rng, 0, 1);
  const float before = sample_gradients(base, Method::kInstantFt, adapters, x, 3).loss;
  for (int step = 0; step < 3; ++step) {
    const auto r = sample_gradients(base, Method::kInstantFt, adapters, x, 3);
    sgd_step(adapters, r.grads.adapters, 0.05f);
  }
  EXPECT_LT(sample_gradients(base, Method::kInstantFt, adapters, x, 3).loss, before);
}
