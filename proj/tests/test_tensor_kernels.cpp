#include <gtest/gtest.h>

#include <limits>

#include "instantft/kernels.hpp"
#include "test_util.hpp"

using namespace instantft;
using instantft::testing::random_tensor;

namespace {

LayerParams<float> fc_params(Shape w, std::initializer_list<float> wv, std::initializer_list<float> bv) {
  const Index d_out = w[0];
  return {Tensor<float>(std::move(w), wv), Tensor<float>({d_out}, bv)};
}

// Naive oracles.
Tensor<double> naive_fc(const Tensor<double>& x, const LayerParams<double>& p) {
  const Index d_out = p.weight.dim(0), d_in = p.weight.dim(1);
  Tensor<double> y({d_out});
  for (Index o = 0; o < d_out; ++o) {
    double s = p.bias[o];
    for (Index j = 0; j < d_in; ++j) s += p.weight[o * d_in + j] * x[j];
    y[o] = s;
  }
  return y;
}

Tensor<double> naive_conv(const Tensor<double>& x, const LayerParams<double>& p, Index pad) {
  const Index co = p.weight.dim(0), ci = p.weight.dim(1), k = p.weight.dim(2);
  const Index h = x.dim(1), w = x.dim(2);
  const Index oh = h + 2 * pad - k + 1, ow = w + 2 * pad - k + 1;
  Tensor<double> y({co, oh, ow});
  for (Index o = 0; o < co; ++o)
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) {
        double s = p.bias[o];
        for (Index c = 0; c < ci; ++c)
          for (Index u = 0; u < k; ++u)
            for (Index v = 0; v < k; ++v) {
              const Index yy = i + u - pad, xx = j + v - pad;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              s += p.weight[((o * ci + c) * k + u) * k + v] * x[(c * h + yy) * w + xx];
            }
        y[(o * oh + i) * ow + j] = s;
      }
  return y;
}

}  // namespace

TEST(FcForward, Identity) {
  const auto p = fc_params({2, 2}, {1, 0, 0, 1}, {0, 0});
  const auto y = fc_forward(Tensor<float>({2}, {3, -1}), p);
  EXPECT_EQ(y, Tensor<float>({2}, {3, -1}));
}

TEST(FcForward, HandComputed) {
  const auto p = fc_params({2, 2}, {1, 2, 3, 4}, {1, 1});
  EXPECT_EQ(fc_forward(Tensor<float>({2}, {1, 1}), p), Tensor<float>({2}, {4, 8}));
}

TEST(FcForward, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(7);
  const LayerParams<float> p{random_tensor<float>({10, 84}, rng), random_tensor<float>({10}, rng)};
  const auto x = random_tensor<float>({84}, rng);
  const auto y = fc_forward(x, p);
  const auto ref = naive_fc(x.cast<double>(), p.cast<double>());
  for (Index i = 0; i < 10; ++i) EXPECT_NEAR(y[i], ref[i], 1e-5 * std::max(1.0, std::abs(ref[i])));
}

TEST(FcForward, ShapeMismatchThrows) {
  const auto p = fc_params({2, 2}, {1, 2, 3, 4}, {1, 1});
  EXPECT_THROW(fc_forward(Tensor<float>({3}), p), ShapeError);
}

TEST(FcForward, NonFiniteInputThrows) {
  const auto p = fc_params({2, 2}, {1, 2, 3, 4}, {1, 1});
  EXPECT_THROW(fc_forward(Tensor<float>({2}, {std::numeric_limits<float>::infinity(), 0}), p), NumericError);
}

TEST(FcBackward, ZeroUpstreamGivesZeros) {
  std::mt19937_64 rng(1);
  const LayerParams<float> p{random_tensor<float>({3, 5}, rng), random_tensor<float>({3}, rng)};
  const auto g = fc_backward(Tensor<float>({3}), random_tensor<float>({5}, rng), p, {});
  EXPECT_TRUE(g.dweight.vec().isZero());
  EXPECT_TRUE(g.dbias.vec().isZero());
  EXPECT_TRUE(g.dinput.vec().isZero());
}

TEST(FcBackward, HandComputed) {
  const auto p = fc_params({2, 2}, {1, 2, 3, 4}, {0, 0});
  const auto g = fc_backward(Tensor<float>({2}, {1, 0}), Tensor<float>({2}, {2, 3}), p, {});
  EXPECT_EQ(g.dweight, Tensor<float>({2, 2}, {2, 3, 0, 0}));
  EXPECT_EQ(g.dbias, Tensor<float>({2}, {1, 0}));
  EXPECT_EQ(g.dinput, Tensor<float>({2}, {1, 2}));
}

TEST(FcBackward, SkipsUnrequestedOutputs) {
  const auto p = fc_params({2, 2}, {1, 2, 3, 4}, {0, 0});
  const auto g = fc_backward(Tensor<float>({2}, {1, 0}), Tensor<float>({2}, {2, 3}), p, {false, true, false});
  EXPECT_EQ(g.dweight.size(), 0);
  EXPECT_EQ(g.dinput.size(), 0);
  EXPECT_EQ(g.dbias.size(), 2);
}

TEST(Conv2d, ZeroFilterGivesBias) {
  LayerParams<float> p{Tensor<float>({1, 1, 5, 5}), Tensor<float>({1}, {0.25f})};
  std::mt19937_64 rng(2);
  const auto y = conv2d_forward(random_tensor<float>({1, 5, 5}, rng), p, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], 0.25f);
}

TEST(Conv2d, DeltaInputReadsKernel) {
  // A unit impulse at (4, 4) of a 9x9 input: output (i, j) reads kernel (4 - i, 4 - j).
  std::mt19937_64 rng(3);
  LayerParams<float> p{random_tensor<float>({1, 1, 5, 5}, rng), Tensor<float>({1})};
  Tensor<float> x({1, 9, 9});
  x[4 * 9 + 4] = 1.0f;
  const auto y = conv2d_forward(x, p, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 5, 5}));
  EXPECT_EQ(y[1 * 5 + 3], p.weight[3 * 5 + 1]);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) EXPECT_EQ(y[i * 5 + j], p.weight[(4 - i) * 5 + (4 - j)]);
}

TEST(Conv2d, MatchesNaiveOracle) {
  std::mt19937_64 rng(4);
  const LayerParams<float> p{random_tensor<float>({6, 3, 5, 5}, rng), random_tensor<float>({6}, rng)};
  const auto x = random_tensor<float>({3, 8, 8}, rng);
  for (Index pad : {0, 2}) {
    const auto y = conv2d_forward(x, p, pad);
    const auto ref = naive_conv(x.cast<double>(), p.cast<double>(), pad);
    ASSERT_EQ(y.shape(), ref.shape());
    for (Index i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5 * std::max(1.0, std::abs(ref[i])));
  }
}

TEST(Conv2d, NonPositiveOutputThrows) {
  LayerParams<float> p{Tensor<float>({1, 1, 5, 5}), Tensor<float>({1})};
  EXPECT_THROW(conv2d_forward(Tensor<float>({1, 4, 4}), p, 0), ShapeError);
}

TEST(Conv2d, ZeroUpstreamGivesZeros) {
  std::mt19937_64 rng(5);
  const LayerParams<float> p{random_tensor<float>({2, 2, 5, 5}, rng), random_tensor<float>({2}, rng)};
  const auto g = conv2d_backward(Tensor<float>({2, 2, 2}), random_tensor<float>({2, 6, 6}, rng), p, 0, {});
  EXPECT_TRUE(g.dweight.vec().isZero());
  EXPECT_TRUE(g.dbias.vec().isZero());
  EXPECT_TRUE(g.dinput.vec().isZero());
}

TEST(Conv2d, ReducesToFcBitForBit) {
  std::mt19937_64 rng(6);
  const auto w = random_tensor<float>({4, 1, 5, 5}, rng);
  const auto b = random_tensor<float>({4}, rng);
  const LayerParams<float> conv{w, b};
  const LayerParams<float> fc{w.reshaped({4, 25}), b};
  const auto x = random_tensor<float>({1, 5, 5}, rng);
  const auto yc = conv2d_forward(x, conv, 0);
  const auto yf = fc_forward(x.flattened(), fc);
  EXPECT_EQ(yc.vec(), yf.vec());

  const auto dy = random_tensor<float>({4}, rng);
  const auto gc = conv2d_backward(dy.reshaped({4, 1, 1}), x, conv, 0, {});
  const auto gf = fc_backward(dy, x.flattened(), fc, {});
  EXPECT_EQ(gc.dweight.vec(), gf.dweight.vec());
  EXPECT_EQ(gc.dbias.vec(), gf.dbias.vec());
  EXPECT_EQ(gc.dinput.vec(), gf.dinput.vec());
}

TEST(MaxPool, WindowMaxAndArgmax) {
  const auto r = maxpool2x2_forward(Tensor<float>({1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(r.out[0], 4.0f);
  EXPECT_EQ(r.argmax[0], 3);  // (1, 1)
}

TEST(MaxPool, ConstantInputTiesGoToFirstElement) {
  Tensor<float> x({2, 4, 4});
  x.vec().setConstant(0.5f);
  const auto r = maxpool2x2_forward(x);
  EXPECT_TRUE((r.out.vec().array() == 0.5f).all());
  Tensor<float> dy(r.out.shape());
  dy.vec().setOnes();
  const auto dx = maxpool2x2_backward(dy, r.argmax, x.shape());
  for (Index c = 0; c < 2; ++c)
    for (Index i = 0; i < 4; ++i)
      for (Index j = 0; j < 4; ++j) {
        const float expect = (i % 2 == 0 && j % 2 == 0) ? 1.0f : 0.0f;
        EXPECT_EQ(dx[(c * 4 + i) * 4 + j], expect);
      }
}

TEST(MaxPool, OddDimsThrow) { EXPECT_THROW(maxpool2x2_forward(Tensor<float>({1, 3, 4})), ShapeError); }

TEST(Relu, ForwardAndBackward) {
  const Tensor<float> x({3}, {-1, 0, 2});
  EXPECT_EQ(relu_forward(x), Tensor<float>({3}, {0, 0, 2}));
  EXPECT_EQ(relu_backward(Tensor<float>({3}, {1, 1, 1}), x), Tensor<float>({3}, {0, 0, 1}));
}

TEST(SoftmaxXent, UniformLogits) {
  const auto r = softmax_xent(Tensor<float>({10}), 3);
  for (Index i = 0; i < 10; ++i) EXPECT_NEAR(r.probs[i], 0.1f, 1e-7);
  EXPECT_NEAR(r.dlogits[3], -0.9f, 1e-6);
  EXPECT_NEAR(r.dlogits[0], 0.1f, 1e-7);
  EXPECT_NEAR(r.loss, std::log(10.0f), 1e-6);
}

TEST(SoftmaxXent, LargeLogitsDoNotOverflow) {
  const auto r = softmax_xent(Tensor<float>({2}, {1000, 0}), 0);
  EXPECT_NEAR(r.probs[0], 1.0f, 1e-7);
  EXPECT_NEAR(r.probs[1], 0.0f, 1e-7);
  EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(SoftmaxXent, SumsToOne) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 100; ++t) {
    const auto p = softmax(random_tensor<float>({10}, rng, -50, 50));
    EXPECT_NEAR(p.vec().sum(), 1.0f, 1e-6);
  }
}

TEST(SoftmaxXent, LabelOutOfRangeThrows) {
  EXPECT_THROW(softmax_xent(Tensor<float>({10}), 10), ShapeError);
  EXPECT_THROW(softmax_xent(Tensor<float>({10}), -1), ShapeError);
  EXPECT_THROW(softmax_xent(Tensor<float>({1}), 0), ShapeError);
}

TEST(Argmax, TiesToSmallestIndex) {
  EXPECT_EQ(argmax(Tensor<float>({10})), 0);
  Tensor<float> onehot({10});
  onehot[7] = 1.0f;
  EXPECT_EQ(argmax(onehot), 7);
  EXPECT_EQ(argmax(Tensor<float>({4}, {1, 3, 3, 2})), 1);
}

TEST(Argmax, AgreesWithBruteForce) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 200; ++t) {
    const auto l = random_tensor<float>({10}, rng);
    int best = 0;
    for (int i = 1; i < 10; ++i)
      if (l[i] > l[best]) best = i;
    EXPECT_EQ(argmax(l), best);
  }
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor<float>({2, 2}, Vec<float>::Zero(3)), ShapeError);
  const Tensor<float> t({2, 3});
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
}

TEST(FlopCounter, KernelCountsFollowConvention) {
  std::mt19937_64 rng(10);
  FlopCounter f;
  const LayerParams<float> p{random_tensor<float>({10, 84}, rng), random_tensor<float>({10}, rng)};
  fc_forward(random_tensor<float>({84}, rng), p, &f);
  EXPECT_EQ(f.forward, 2 * 840 + 10);
  const LayerParams<float> c{random_tensor<float>({6, 1, 5, 5}, rng), random_tensor<float>({6}, rng)};
  f = {};
  conv2d_forward(random_tensor<float>({1, 28, 28}, rng), c, 2, &f);
  EXPECT_EQ(f.forward, 2 * 25 * 6 * 784 + 6 * 784);
  f = {};
  maxpool2x2_forward(random_tensor<float>({6, 28, 28}, rng), &f);
  EXPECT_EQ(f.forward, 3 * 6 * 14 * 14);
}
