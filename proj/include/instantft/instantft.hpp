#pragma once

// Skip-adapter fine-tuning: every tap x^0..x^4 feeds a rank-r adapter whose
// output is added straight onto the frozen network's logits,
//   logits = logits_hat + sum_i B_i A_i vec(x^i).
// The frozen activations x^1..x^4 and logits_hat come from the forward cache
// when present; only dlogits is ever formed as an activation gradient.

#include <array>
#include <chrono>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "instantft/adapters.hpp"
#include "instantft/forward_cache.hpp"
#include "instantft/model.hpp"

namespace instantft {

// Per-sample instrumentation, summed over a batch in sample order.
struct SampleStats {
  std::int64_t base_forward_calls = 0;
  std::int64_t cache_hits = 0;
  std::int64_t cache_misses = 0;
  std::int64_t activation_grad_buffers = 0;
  std::int64_t saturation_events = 0;
  double base_seconds = 0.0;
  double adapter_seconds = 0.0;
  double backward_seconds = 0.0;
  double cache_seconds = 0.0;
  FlopCounter flops;

  SampleStats& operator+=(const SampleStats& o) {
    base_forward_calls += o.base_forward_calls;
    cache_hits += o.cache_hits;
    cache_misses += o.cache_misses;
    activation_grad_buffers += o.activation_grad_buffers;
    saturation_events += o.saturation_events;
    base_seconds += o.base_seconds;
    adapter_seconds += o.adapter_seconds;
    backward_seconds += o.backward_seconds;
    cache_seconds += o.cache_seconds;
    flops += o.flops;
    return *this;
  }
};

class PhaseTimer {
 public:
  explicit PhaseTimer(double& sink) : sink_(sink), start_(std::chrono::steady_clock::now()) {}
  ~PhaseTimer() { sink_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }
  PhaseTimer(const PhaseTimer&) = delete;
  PhaseTimer& operator=(const PhaseTimer&) = delete;

 private:
  double& sink_;
  std::chrono::steady_clock::time_point start_;
};

// Cache payload layout: [x^1 | x^2 | x^3 | x^4 | logits_hat], 1790 floats for
// both dataset variants.
inline Index cache_payload_size(const ModelSpec& spec) {
  const auto d = spec.tap_dims();
  return d[1] + d[2] + d[3] + d[4] + kNumClasses;
}

template <typename Scalar>
std::vector<float> pack_payload(const BaseActivations<Scalar>& b) {
  std::vector<float> out;
  for (const auto& t : b.taps) {
    for (Index i = 0; i < t.size(); ++i) out.push_back(static_cast<float>(t[i]));
  }
  for (Index i = 0; i < b.logits_hat.size(); ++i) out.push_back(static_cast<float>(b.logits_hat[i]));
  return out;
}

template <typename Scalar>
BaseActivations<Scalar> unpack_payload(std::span<const float> payload, const ModelSpec& spec) {
  if (static_cast<Index>(payload.size()) != cache_payload_size(spec)) throw ShapeError("unpack_payload: size mismatch");
  const auto d = spec.tap_dims();
  BaseActivations<Scalar> b;
  Index off = 0;
  for (int i = 1; i < kNumTaps; ++i) {
    b.taps[i - 1] = Eigen::Map<const Vec<float>>(payload.data() + off, d[i]).template cast<Scalar>();
    off += d[i];
  }
  b.logits_hat = Eigen::Map<const Vec<float>>(payload.data() + off, kNumClasses).template cast<Scalar>();
  return b;
}

// Five adapters x^i -> logits, i = 0..4.
template <typename Scalar>
AdapterSet<Scalar> make_skip_adapters(const ModelSpec& spec, Index rank, std::mt19937_64& rng) {
  AdapterSet<Scalar> set;
  const auto d = spec.tap_dims();
  for (int i = 0; i < kNumTaps; ++i) set.push_back(make_adapter<Scalar>(i, kNumLayers, d[i], kNumClasses, rank, rng));
  return set;
}

template <typename Scalar>
void check_skip_adapters(const ModelSpec& spec, const AdapterSet<Scalar>& adapters) {
  if (adapters.size() != static_cast<std::size_t>(kNumTaps)) throw ShapeError("skip adapters: expected 5 adapters");
  const auto d = spec.tap_dims();
  for (int i = 0; i < kNumTaps; ++i) {
    const auto& a = adapters[static_cast<std::size_t>(i)];
    if (a.src != i || a.dst != kNumLayers || a.in_dim() != d[i] || a.out_dim() != kNumClasses ||
        a.B.cols() != a.rank()) {
      throw ShapeError("skip adapter " + std::to_string(i) + " is not wired x^" + std::to_string(i) + " -> logits");
    }
  }
}

// Tensors retained from the forward pass for the adapter backward pass.
template <typename Scalar>
struct InstantSaved {
  std::array<Vec<Scalar>, kNumTaps> taps;   // x^0..x^4 flattened
  std::array<Vec<Scalar>, kNumTaps> h;      // A_i x^i
  std::array<Vec<Scalar>, kNumTaps> delta;  // B_i h_i
  Vec<Scalar> logits_hat;
  Vec<Scalar> logits;
  bool cache_hit = false;
};

// Frozen activations for one sample: from the cache on a hit, otherwise by
// running the base network (and filling the cache when one is given).
template <typename Scalar>
BaseActivations<Scalar> frozen_activations(const ModelState<Scalar>& m, const Tensor<Scalar>& x0, ForwardCache* cache,
                                           Index index, SampleStats* stats, bool* hit = nullptr) {
  SampleStats local;
  SampleStats& st = stats ? *stats : local;
  if (cache) {
    std::vector<float> payload(static_cast<std::size_t>(cache_payload_size(m.spec)));
    bool found = false;
    {
      PhaseTimer t(st.cache_seconds);
      found = cache->get(index, payload);
    }
    if (found) {
      ++st.cache_hits;
      if (hit) *hit = true;
      PhaseTimer t(st.cache_seconds);
      return unpack_payload<Scalar>(payload, m.spec);
    }
    ++st.cache_misses;
  }
  if (hit) *hit = false;
  BaseActivations<Scalar> base;
  {
    PhaseTimer t(st.base_seconds);
    base = base_forward(m, x0, &st.flops);
    ++st.base_forward_calls;
  }
  if (cache) {
    PhaseTimer t(st.cache_seconds);
    cache->put(index, pack_payload(base));
  }
  return base;
}

template <typename Scalar>
InstantSaved<Scalar> instantft_forward(const ModelState<Scalar>& m, const AdapterSet<Scalar>& adapters,
                                       const Tensor<Scalar>& x0, ForwardCache* cache, Index index,
                                       SampleStats* stats = nullptr) {
  check_skip_adapters(m.spec, adapters);
  ensure_shape(x0, m.spec.input_shape(), "instantft_forward input");
  SampleStats local;
  SampleStats& st = stats ? *stats : local;
  InstantSaved<Scalar> s;
  BaseActivations<Scalar> base = frozen_activations(m, x0, cache, index, &st, &s.cache_hit);

  PhaseTimer t(st.adapter_seconds);
  s.taps[0] = x0.vec();
  for (int i = 1; i < kNumTaps; ++i) s.taps[i] = std::move(base.taps[i - 1]);
  s.logits_hat = std::move(base.logits_hat);
  s.logits = s.logits_hat;
  for (int i = 0; i < kNumTaps; ++i) {
    AdapterForward<Scalar> f = adapter_forward(adapters[static_cast<std::size_t>(i)], s.taps[i], &st.flops);
    s.logits += f.delta;
    s.h[i] = std::move(f.h);
    s.delta[i] = std::move(f.delta);
  }
  if (!s.logits.allFinite()) throw NumericError("instantft_forward: non-finite logits");
  return s;
}

// Adapter gradients from dlogits alone; no activation gradient is formed.
template <typename Scalar>
std::vector<AdapterGrads<Scalar>> instantft_backward(const Vec<Scalar>& dlogits, const InstantSaved<Scalar>& saved,
                                                     const AdapterSet<Scalar>& adapters, SampleStats* stats = nullptr) {
  if (adapters.size() != static_cast<std::size_t>(kNumTaps)) throw ShapeError("instantft_backward: expected 5 adapters");
  for (int i = 0; i < kNumTaps; ++i) {
    if (saved.taps[i].size() == 0 || saved.h[i].size() == 0) throw ShapeError("instantft_backward: missing saved tensors");
  }
  SampleStats local;
  SampleStats& st = stats ? *stats : local;
  PhaseTimer t(st.backward_seconds);
  std::vector<AdapterGrads<Scalar>> grads;
  grads.reserve(adapters.size());
  for (int i = 0; i < kNumTaps; ++i) {
    grads.push_back(adapter_backward<Scalar>(adapters[static_cast<std::size_t>(i)], dlogits, saved.taps[i], saved.h[i],
                                             nullptr, &st.flops));
  }
  return grads;
}

// A <- A - lr * dA, B <- B - lr * dB.
template <typename Scalar>
void sgd_step(AdapterSet<Scalar>& adapters, const std::vector<AdapterGrads<Scalar>>& grads, Scalar lr) {
  if (grads.size() != adapters.size()) throw ShapeError("sgd_step: gradient count mismatch");
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    adapters[i].A -= lr * grads[i].dA;
    adapters[i].B -= lr * grads[i].dB;
  }
}

}  // namespace instantft
