#pragma once

// Fine-tuning strategies over a frozen (or partially trainable) backbone.
//
//   FT-All     all {W, b}
//   FT-Last    (W^5, b^5)
//   FT-Bias    {b^1..b^5}; activation gradients still flow through every layer
//   LoRA-All   one adapter per layer, x^{k-1} -> pre-activation output of layer k
//   LoRA-Last  one adapter x^4 -> logits, no propagation below layer 5
//   InstantFT  five skip adapters x^i -> logits with an optional forward cache

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "instantft/data.hpp"
#include "instantft/forward_cache.hpp"
#include "instantft/instantft.hpp"
#include "instantft/model.hpp"

namespace instantft {

enum class Method : std::uint32_t { kFtAll, kFtLast, kFtBias, kLoraAll, kLoraLast, kInstantFt };
enum class Arithmetic : std::uint32_t { kFloat, kFixed };

inline constexpr Method kAllMethods[] = {Method::kFtAll,   Method::kFtLast,   Method::kFtBias,
                                         Method::kLoraAll, Method::kLoraLast, Method::kInstantFt};

std::string_view to_string(Method m);
Method parse_method(std::string_view s);
std::string_view to_string(Arithmetic a);
Arithmetic parse_arithmetic(std::string_view s);

struct StrategyConfig {
  Method method = Method::kInstantFt;
  Index rank = 4;
  double lr = 0.1;
  int epochs = 10;
  Index batch = 20;
  std::uint64_t seed = 1;
  CacheMode cache_mode = CacheMode::kOff;
  Arithmetic arithmetic = Arithmetic::kFloat;
  int threads = 1;
  bool eval_every_epoch = true;
};

// Throws ConfigError for invalid combinations (cache or fixed-point arithmetic
// with anything but InstantFT, non-positive rank/batch, negative lr/epochs).
void validate(const StrategyConfig& config);

TrainableMask trainable_mask(Method m);

// Adapters a method trains, freshly initialized (A Gaussian, B zero).
template <typename Scalar>
AdapterSet<Scalar> make_method_adapters(Method m, const ModelSpec& spec, Index rank, std::mt19937_64& rng) {
  const auto taps = spec.tap_dims();
  const auto outs = spec.layer_out_dims();
  AdapterSet<Scalar> set;
  switch (m) {
    case Method::kLoraAll:
      for (int k = 0; k < kNumLayers; ++k) set.push_back(make_adapter<Scalar>(k, k + 1, taps[k], outs[k], rank, rng));
      break;
    case Method::kLoraLast:
      set.push_back(make_adapter<Scalar>(kNumLayers - 1, kNumLayers, taps[4], outs[4], rank, rng));
      break;
    case Method::kInstantFt:
      set = make_skip_adapters<Scalar>(spec, rank, rng);
      break;
    default:
      break;
  }
  return set;
}

// Layer view of adapters whose destination is a layer's own output.
template <typename Scalar>
LayerAdapters<Scalar> layer_view(const AdapterSet<Scalar>& adapters) {
  LayerAdapters<Scalar> view{};
  for (const auto& a : adapters) {
    if (a.dst != a.src + 1) throw ShapeError("layer_view: adapter is not layer-local");
    view[static_cast<std::size_t>(a.dst - 1)] = &a;
  }
  return view;
}

template <typename Scalar>
struct StepGrads {
  std::array<LayerGrads<Scalar>, kNumLayers> layers;
  std::vector<AdapterGrads<Scalar>> adapters;
};

template <typename Scalar>
struct SampleResult {
  Scalar loss{};
  int predicted = 0;
  StepGrads<Scalar> grads;
  SampleStats stats;
};

template <typename Scalar>
Tensor<Scalar> model_logits(const ModelState<Scalar>& m, Method method, const AdapterSet<Scalar>& adapters,
                            const Tensor<Scalar>& x0, ForwardCache* cache = nullptr, Index index = 0,
                            SampleStats* stats = nullptr) {
  if (method == Method::kInstantFt) {
    InstantSaved<Scalar> s = instantft_forward(m, adapters, x0, cache, index, stats);
    return Tensor<Scalar>({kNumClasses}, s.logits);
  }
  return forward_trace(m, x0, layer_view(adapters), stats ? &stats->flops : nullptr).logits;
}

// Argmax of the adapted model's logits; ties to the smallest class.
template <typename Scalar>
int predict(const ModelState<Scalar>& m, Method method, const AdapterSet<Scalar>& adapters, const Tensor<Scalar>& x0) {
  return argmax(model_logits(m, method, adapters, x0));
}

// Loss, prediction and the gradients of every tensor the method trains, for
// one sample.
template <typename Scalar>
SampleResult<Scalar> sample_gradients(const ModelState<Scalar>& m, Method method, const AdapterSet<Scalar>& adapters,
                                      const Tensor<Scalar>& x0, int label, ForwardCache* cache = nullptr,
                                      Index index = 0) {
  SampleResult<Scalar> r;
  if (method == Method::kInstantFt) {
    InstantSaved<Scalar> s = instantft_forward(m, adapters, x0, cache, index, &r.stats);
    Tensor<Scalar> logits({kNumClasses}, s.logits);
    SoftmaxXent<Scalar> ce = softmax_xent(logits, label, &r.stats.flops);
    r.loss = ce.loss;
    r.predicted = argmax(logits);
    r.grads.adapters = instantft_backward(ce.dlogits.vec(), s, adapters, &r.stats);
    return r;
  }
  const LayerAdapters<Scalar> view = layer_view(adapters);
  ForwardTrace<Scalar> t;
  {
    PhaseTimer timer(r.stats.base_seconds);
    t = forward_trace(m, x0, view, &r.stats.flops);
  }
  ++r.stats.base_forward_calls;
  SoftmaxXent<Scalar> ce = softmax_xent(t.logits, label, &r.stats.flops);
  r.loss = ce.loss;
  r.predicted = argmax(t.logits);
  PhaseTimer timer(r.stats.backward_seconds);
  ModelGrads<Scalar> g = backward_trace(m, t, ce.dlogits, trainable_mask(method), view, &r.stats.flops);
  r.stats.activation_grad_buffers += g.activation_grad_buffers;
  r.grads.layers = std::move(g.layers);
  for (const auto& a : adapters) r.grads.adapters.push_back(std::move(*g.adapters[static_cast<std::size_t>(a.dst - 1)]));
  return r;
}

template <typename Scalar>
Scalar sample_loss(const ModelState<Scalar>& m, Method method, const AdapterSet<Scalar>& adapters,
                   const Tensor<Scalar>& x0, int label) {
  return softmax_xent(model_logits(m, method, adapters, x0), label).loss;
}

// acc += g, elementwise; empty accumulators adopt g.
template <typename Scalar>
void accumulate(StepGrads<Scalar>& acc, const StepGrads<Scalar>& g) {
  auto add = [](Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (b.size() == 0) return;
    if (a.size() == 0) {
      a = b;
    } else {
      a.vec() += b.vec();
    }
  };
  for (int k = 0; k < kNumLayers; ++k) {
    add(acc.layers[k].dweight, g.layers[k].dweight);
    add(acc.layers[k].dbias, g.layers[k].dbias);
  }
  if (acc.adapters.empty()) {
    acc.adapters = g.adapters;
  } else {
    for (std::size_t i = 0; i < g.adapters.size(); ++i) {
      acc.adapters[i].dA += g.adapters[i].dA;
      acc.adapters[i].dB += g.adapters[i].dB;
    }
  }
}

// p <- p - lr * (sum / batch) for every tensor present in `sum`. Returns the
// number of parameter entries written.
template <typename Scalar>
std::int64_t apply_sgd(ModelState<Scalar>& m, AdapterSet<Scalar>& adapters, const StepGrads<Scalar>& sum, Scalar lr,
                       Index batch) {
  const Scalar inv = Scalar(1) / static_cast<Scalar>(batch);
  std::int64_t written = 0;
  for (int k = 0; k < kNumLayers; ++k) {
    const auto& g = sum.layers[k];
    if (g.dweight.size()) {
      m.layers[k].weight.vec() -= lr * (g.dweight.vec() * inv);
      written += g.dweight.size();
    }
    if (g.dbias.size()) {
      m.layers[k].bias.vec() -= lr * (g.dbias.vec() * inv);
      written += g.dbias.size();
    }
  }
  for (std::size_t i = 0; i < sum.adapters.size(); ++i) {
    adapters[i].A -= lr * (sum.adapters[i].dA * inv);
    adapters[i].B -= lr * (sum.adapters[i].dB * inv);
    written += sum.adapters[i].dA.size() + sum.adapters[i].dB.size();
  }
  return written;
}

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double eval_accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN when not evaluated
  double seconds = 0.0;                                             // training wall-clock, eval excluded
  SampleStats stats;
};

struct FinetuneResult {
  ModelState<float> model;
  AdapterSet<float> adapters;
  std::vector<EpochMetrics> epochs;
  double initial_eval_accuracy = std::numeric_limits<double>::quiet_NaN();
  double final_eval_accuracy = std::numeric_limits<double>::quiet_NaN();
  SampleStats totals;
  std::optional<CacheReport> cache;
  double train_seconds = 0.0;
  std::int64_t params_written_first_step = 0;
};

// Runs one strategy for config.epochs epochs over `train`; evaluates on `eval`
// when given. Deterministic for a fixed seed at any thread count.
FinetuneResult finetune(const ModelState<float>& base, const StrategyConfig& config, const Dataset& train,
                        const Dataset* eval = nullptr);

// Accuracy of the adapted model. `frozen_cache` (FP32, capacity eval.size())
// memoizes the frozen trunk for methods that only change the last layer.
double evaluate(const ModelState<float>& m, Method method, const AdapterSet<float>& adapters, const Dataset& eval,
                ForwardCache* frozen_cache = nullptr, int threads = 1);

struct PretrainConfig {
  int epochs = 10;
  Index batch = 20;
  double lr = 0.1;
  std::uint64_t seed = 1;
  int threads = 1;
  std::function<void(int epoch, double loss, double train_accuracy)> on_epoch;  // optional progress hook
};

struct PretrainResult {
  ModelState<float> model;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_train_accuracy;
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
};

// Plain mini-batch SGD on every parameter (mean loss over the batch).
PretrainResult pretrain(const ModelState<float>& init, const Dataset& train, const PretrainConfig& config,
                        const Dataset* test = nullptr);

}  // namespace instantft
