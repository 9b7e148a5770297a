#pragma once

// LeNet-5-like backbone:
//   conv1(c_in->6, 5x5, pad p1) -> ReLU -> maxpool   => x^1 [6,14,14]
//   conv2(6->16, 5x5)           -> ReLU -> maxpool   => x^2 [16,5,5]
//   fc1(400->120)               -> ReLU              => x^3
//   fc2(120->84)                -> ReLU              => x^4
//   fc3(84->10)                                      => x^5 (logits)
// x^0 is the input image. Adapter taps read x^0..x^4 flattened.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>

#include "instantft/adapters.hpp"
#include "instantft/kernels.hpp"
#include "instantft/tensor.hpp"

namespace instantft {

enum class Variant : std::uint32_t { kMnist = 0, kSvhn = 1 };

inline constexpr int kNumLayers = 5;
inline constexpr int kNumTaps = 5;
inline constexpr Index kNumClasses = 10;

struct ModelSpec {
  Index in_channels = 1;
  Index in_height = 28;
  Index in_width = 28;
  Index conv1_padding = 2;

  static constexpr Index kKernel = 5;
  static constexpr Index kConv1Channels = 6;
  static constexpr Index kConv2Channels = 16;
  static constexpr Index kFc1 = 120;
  static constexpr Index kFc2 = 84;

  static ModelSpec mnist() { return {1, 28, 28, 2}; }
  static ModelSpec svhn() { return {3, 32, 32, 0}; }
  static ModelSpec for_variant(Variant v) { return v == Variant::kMnist ? mnist() : svhn(); }

  Shape input_shape() const { return {in_channels, in_height, in_width}; }
  Index input_size() const { return in_channels * in_height * in_width; }

  Shape conv1_out_shape() const {
    return {kConv1Channels, in_height + 2 * conv1_padding - kKernel + 1, in_width + 2 * conv1_padding - kKernel + 1};
  }
  Shape pool1_shape() const {
    const Shape c = conv1_out_shape();
    return {c[0], c[1] / 2, c[2] / 2};
  }
  Shape conv2_out_shape() const {
    const Shape p = pool1_shape();
    return {kConv2Channels, p[1] - kKernel + 1, p[2] - kKernel + 1};
  }
  Shape pool2_shape() const {
    const Shape c = conv2_out_shape();
    return {c[0], c[1] / 2, c[2] / 2};
  }

  // d_0..d_4: flattened sizes of x^0..x^4.
  std::array<Index, kNumTaps> tap_dims() const {
    return {input_size(), shape_numel(pool1_shape()), shape_numel(pool2_shape()), kFc1, kFc2};
  }
  // Output size of each layer before pooling/activation.
  std::array<Index, kNumLayers> layer_out_dims() const {
    return {shape_numel(conv1_out_shape()), shape_numel(conv2_out_shape()), kFc1, kFc2, kNumClasses};
  }
  std::array<Shape, kNumLayers> weight_shapes() const {
    return {Shape{kConv1Channels, in_channels, kKernel, kKernel},
            Shape{kConv2Channels, kConv1Channels, kKernel, kKernel},
            Shape{kFc1, shape_numel(pool2_shape())},
            Shape{kFc2, kFc1},
            Shape{kNumClasses, kFc2}};
  }
  Index layer_param_count(int layer) const {
    const Shape w = weight_shapes()[static_cast<std::size_t>(layer)];
    return shape_numel(w) + w[0];
  }
  Index param_count() const {
    Index n = 0;
    for (int i = 0; i < kNumLayers; ++i) n += layer_param_count(i);
    return n;
  }

  bool operator==(const ModelSpec&) const = default;
};

template <typename Scalar>
struct ModelState {
  ModelSpec spec;
  std::array<LayerParams<Scalar>, kNumLayers> layers;

  template <typename To>
  ModelState<To> cast() const {
    ModelState<To> m{spec, {}};
    for (int i = 0; i < kNumLayers; ++i) m.layers[i] = layers[i].template cast<To>();
    return m;
  }

  bool operator==(const ModelState&) const = default;
};

template <typename Scalar>
ModelState<Scalar> zero_model(const ModelSpec& spec) {
  ModelState<Scalar> m{spec, {}};
  const auto shapes = spec.weight_shapes();
  for (int i = 0; i < kNumLayers; ++i) {
    m.layers[i].weight = Tensor<Scalar>(shapes[i]);
    m.layers[i].bias = Tensor<Scalar>({shapes[i][0]});
  }
  return m;
}

// Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases.
template <typename Scalar>
ModelState<Scalar> init_model(const ModelSpec& spec, std::uint64_t seed) {
  ModelState<Scalar> m = zero_model<Scalar>(spec);
  std::mt19937_64 rng(seed);
  for (auto& layer : m.layers) {
    const Index receptive = layer.is_conv() ? layer.weight.dim(2) * layer.weight.dim(3) : 1;
    const Index fan_in = layer.fan_in();
    const Index fan_out = layer.out_features() * receptive;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index i = 0; i < layer.weight.size(); ++i) layer.weight[i] = static_cast<Scalar>(dist(rng));
  }
  return m;
}

// Per-layer LoRA adapters for the layered (LoRA-All / LoRA-Last) path.
// Entry k, when set, adds B A vec(x^k) to the pre-activation output of layer k+1.
template <typename Scalar>
using LayerAdapters = std::array<const Adapter<Scalar>*, kNumLayers>;

// Everything the layered backward pass needs from a forward pass.
template <typename Scalar>
struct ForwardTrace {
  Tensor<Scalar> input;                          // x^0 [c,h,w]
  std::array<Tensor<Scalar>, kNumLayers> pre;    // layer outputs before ReLU (adapter delta included)
  std::array<PoolResult<Scalar>, 2> pool;        // conv layers only
  std::array<Tensor<Scalar>, kNumTaps> taps;     // x^0..x^4 as consumed by the next layer
  std::array<Vec<Scalar>, kNumLayers> adapter_h; // A x for layers with an adapter
  Tensor<Scalar> logits;
};

namespace detail {

template <typename Scalar>
Eigen::Map<const Vec<Scalar>> flat(const Tensor<Scalar>& t) {
  return Eigen::Map<const Vec<Scalar>>(t.data(), t.size());
}

}  // namespace detail

template <typename Scalar>
ForwardTrace<Scalar> forward_trace(const ModelState<Scalar>& m, const Tensor<Scalar>& x0,
                                   const LayerAdapters<Scalar>& adapters = {}, FlopCounter* flops = nullptr) {
  ensure_shape(x0, m.spec.input_shape(), "forward_trace input");
  ForwardTrace<Scalar> t;
  t.input = x0;
  t.taps[0] = x0;
  for (int k = 0; k < kNumLayers; ++k) {
    const auto& p = m.layers[k];
    const Tensor<Scalar>& in = t.taps[k];
    Tensor<Scalar> out = p.is_conv() ? conv2d_forward(in, p, k == 0 ? m.spec.conv1_padding : 0, flops)
                                     : fc_forward(in, p, flops);
    if (const Adapter<Scalar>* a = adapters[k]) {
      AdapterForward<Scalar> af = adapter_forward(*a, detail::flat(in), flops);
      if (af.delta.size() != out.size()) throw ShapeError("forward_trace: adapter output size mismatch");
      out.vec() += af.delta;
      t.adapter_h[k] = std::move(af.h);
    }
    t.pre[k] = std::move(out);
    if (k == kNumLayers - 1) break;
    Tensor<Scalar> act = relu_forward(t.pre[k], flops);
    if (p.is_conv()) {
      t.pool[k] = maxpool2x2_forward(act, flops);
      t.taps[k + 1] = t.pool[k].out;
    } else {
      t.taps[k + 1] = std::move(act);
    }
  }
  t.logits = t.pre[kNumLayers - 1];
  return t;
}

struct TrainableMask {
  std::array<bool, kNumLayers> weight{};
  std::array<bool, kNumLayers> bias{};

  static TrainableMask all() {
    TrainableMask m;
    m.weight.fill(true);
    m.bias.fill(true);
    return m;
  }
};

template <typename Scalar>
struct ModelGrads {
  std::array<LayerGrads<Scalar>, kNumLayers> layers;
  std::array<std::optional<AdapterGrads<Scalar>>, kNumLayers> adapters;
  std::int64_t activation_grad_buffers = 0;  // dx^i tensors formed, i < L
};

// Backpropagates dlogits through the layered network. Only the gradients the
// mask/adapters make necessary are formed: activation gradients stop at the
// lowest layer that owns a trainable tensor.
template <typename Scalar>
ModelGrads<Scalar> backward_trace(const ModelState<Scalar>& m, const ForwardTrace<Scalar>& t,
                                  const Tensor<Scalar>& dlogits, const TrainableMask& mask,
                                  const LayerAdapters<Scalar>& adapters = {}, FlopCounter* flops = nullptr) {
  int lowest = kNumLayers;
  for (int k = 0; k < kNumLayers; ++k) {
    if (mask.weight[k] || mask.bias[k] || adapters[k]) {
      lowest = k;
      break;
    }
  }
  ModelGrads<Scalar> g;
  Tensor<Scalar> dpre = dlogits;
  for (int k = kNumLayers - 1; k >= lowest; --k) {
    const auto& p = m.layers[k];
    const bool need_dx = k > lowest;
    const GradRequest req{mask.weight[k], mask.bias[k], need_dx};
    LayerGrads<Scalar> lg = p.is_conv()
                                ? conv2d_backward(dpre, t.taps[k], p, k == 0 ? m.spec.conv1_padding : 0, req, flops)
                                : fc_backward(dpre, t.taps[k], p, req, flops);
    if (const Adapter<Scalar>* a = adapters[k]) {
      Vec<Scalar> dx;
      if (need_dx) dx = lg.dinput.vec();
      g.adapters[k] = adapter_backward<Scalar>(*a, detail::flat(dpre), detail::flat(t.taps[k]), t.adapter_h[k],
                                               need_dx ? &dx : nullptr, flops);
      if (need_dx) lg.dinput.vec() = dx;
    }
    if (need_dx) {
      ++g.activation_grad_buffers;
      // dx^k -> gradient at the pre-activation output of layer k-1.
      Tensor<Scalar> dact = lg.dinput;
      if (m.layers[k - 1].is_conv()) {
        dact = maxpool2x2_backward(dact.reshaped(t.pool[k - 1].out.shape()), t.pool[k - 1].argmax,
                                   t.pre[k - 1].shape());
      }
      dpre = relu_backward(dact.reshaped(t.pre[k - 1].shape()), t.pre[k - 1], flops);
    }
    lg.dinput = Tensor<Scalar>();
    g.layers[k] = std::move(lg);
  }
  return g;
}

// Frozen activations of one sample: x^1..x^4 (flattened) and base logits.
template <typename Scalar>
struct BaseActivations {
  std::array<Vec<Scalar>, kNumTaps - 1> taps;  // x^1..x^4
  Vec<Scalar> logits_hat;
};

template <typename Scalar>
BaseActivations<Scalar> base_forward(const ModelState<Scalar>& m, const Tensor<Scalar>& x0,
                                     FlopCounter* flops = nullptr) {
  ForwardTrace<Scalar> t = forward_trace(m, x0, {}, flops);
  BaseActivations<Scalar> b;
  for (int i = 1; i < kNumTaps; ++i) b.taps[i - 1] = t.taps[i].vec();
  b.logits_hat = t.logits.vec();
  return b;
}

}  // namespace instantft
