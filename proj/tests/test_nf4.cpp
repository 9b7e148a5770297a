#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "instantft/errors.hpp"
#include "instantft/nf4.hpp"

using namespace instantft;

namespace {

// Inverse standard-normal CDF by bisection on erfc.
double normal_quantile(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> codebook_oracle() {
  const double o = (1.0 - 1.0 / 30.0 + 1.0 - 1.0 / 32.0) / 2.0;
  std::vector<double> v;
  for (int i = 0; i < 8; ++i) v.push_back(normal_quantile(o + (0.5 - o) * i / 8.0));
  for (int i = 0; i < 7; ++i) v.push_back(-normal_quantile(o + (0.5 - o) * i / 7.0));
  v.push_back(0.0);
  const double top = normal_quantile(o);
  for (double& x : v) x /= top;
  std::sort(v.begin(), v.end());
  return v;
}

int brute_nearest(double x) {
  int best = 0;
  for (int i = 1; i < kNf4Levels; ++i) {
    if (std::abs(x - kNf4Codebook[i]) < std::abs(x - kNf4Codebook[best])) best = i;
  }
  return best;
}

}  // namespace

TEST(Nf4Codebook, MatchesNormalQuantiles) {
  const auto oracle = codebook_oracle();
  for (int i = 0; i < kNf4Levels; ++i) EXPECT_NEAR(kNf4Codebook[i], oracle[static_cast<std::size_t>(i)], 1e-6) << i;
  EXPECT_EQ(kNf4Codebook[kNf4ZeroCode], 0.0f);
  EXPECT_EQ(kNf4Codebook.front(), -1.0f);
  EXPECT_EQ(kNf4Codebook.back(), 1.0f);
  EXPECT_TRUE(std::is_sorted(kNf4Codebook.begin(), kNf4Codebook.end()));
}

TEST(Nf4Codec, NearestCodeAgreesWithBruteForce) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 20000; ++i) {
    const double x = u(rng);
    EXPECT_EQ(nf4_nearest_code(x), brute_nearest(x)) << x;
  }
  for (int i = 0; i < kNf4Levels; ++i) EXPECT_EQ(nf4_nearest_code(kNf4Codebook[i]), i);
}

TEST(Nf4Codec, MidpointGoesToLowerCode) {
  for (int i = 0; i + 1 < kNf4Levels; ++i) {
    const double mid = (static_cast<double>(kNf4Codebook[i]) + kNf4Codebook[i + 1]) / 2.0;
    EXPECT_EQ(nf4_nearest_code(mid), i);
  }
}

TEST(Nf4Codec, RoundTripErrorIsBoundedByHalfLargestGap) {
  double gap = 0.0;
  for (int i = 0; i + 1 < kNf4Levels; ++i) gap = std::max(gap, static_cast<double>(kNf4Codebook[i + 1] - kNf4Codebook[i]));
  std::mt19937_64 rng(2);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> vals(64), back(64);
  for (int trial = 0; trial < 200; ++trial) {
    for (float& v : vals) v = n(rng);
    const Nf4Block b = nf4_quantize_block(vals);
    nf4_dequantize_block(b, back);
    for (int i = 0; i < 64; ++i) EXPECT_LE(std::abs(back[i] - vals[i]), 0.5 * gap * b.scale + 1e-6);
    // The absmax element is exact.
    const auto it = std::max_element(vals.begin(), vals.end(), [](float a, float c) { return std::abs(a) < std::abs(c); });
    EXPECT_EQ(back[static_cast<std::size_t>(it - vals.begin())], *it);
  }
}

TEST(Nf4Codec, BlockLayout) {
  EXPECT_EQ(kNf4BlockBytes, 36u);
  Nf4Block b;
  b.set_code(0, 3);
  b.set_code(1, 12);
  EXPECT_EQ(b.codes[0], 0xC3);
  EXPECT_EQ(b.code(0), 3);
  EXPECT_EQ(b.code(1), 12);
  b.set_code(0, 15);
  EXPECT_EQ(b.code(1), 12);
}

TEST(Nf4Codec, ZeroBlockAndPadding) {
  std::vector<float> zeros(64, 0.0f), out(64, 1.0f);
  const Nf4Block z = nf4_quantize_block(zeros);
  EXPECT_EQ(z.scale, 0.0f);
  nf4_dequantize_block(z, out);
  for (float v : out) EXPECT_EQ(v, 0.0f);

  const std::vector<float> short_vals = {0.5f, -2.0f, 1.0f};
  const Nf4Block s = nf4_quantize_block(short_vals);
  for (int i = 3; i < 64; ++i) EXPECT_EQ(s.code(i), kNf4ZeroCode);
}

TEST(Nf4Codec, RejectsNonFiniteAndOversize) {
  std::vector<float> v(8, 1.0f);
  v[3] = std::nanf("");
  EXPECT_THROW(nf4_quantize_block(v), NumericError);
  v[3] = INFINITY;
  EXPECT_THROW(nf4_quantize_block(v), NumericError);
  EXPECT_THROW(nf4_quantize_block(std::vector<float>(65, 0.0f)), ShapeError);
}

TEST(Nf4Codec, MultiBlockEncodeDecode) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0.0f, 2.0f);
  std::vector<float> vals(150), back(150);
  for (float& v : vals) v = n(rng);
  std::vector<Nf4Block> blocks(nf4_block_count(vals.size()));
  EXPECT_EQ(blocks.size(), 3u);
  nf4_encode(vals, blocks);
  nf4_decode(blocks, back);
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const float scale = blocks[i / 64].scale;
    EXPECT_LE(std::abs(back[i] - vals[i]), 0.16f * scale);
  }
  std::vector<Nf4Block> wrong(2);
  EXPECT_THROW(nf4_encode(vals, wrong), ShapeError);
}
