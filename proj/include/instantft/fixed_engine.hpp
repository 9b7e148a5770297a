#pragma once

// Fixed-point InstantFT: activations and saved tensors in Q8.16, adapter
// weights and gradients in Q4.12. The frozen base network runs in float and
// its taps are converted on entry.
//
// Per sample:
//   h_i = A_i x^i, delta_i = B_i h_i            (Q8.16, one rounding per dot)
//   logits = logits_hat + sum_i delta_i         (exact wide sum, one saturation)
//   p = lut_softmax(logits), dlogits = p - onehot  (Q4.12)
//   dB_i = dlogits h_i^T, dh_i = B_i^T dlogits, dA_i = dh_i x^i^T  (Q4.12)
// Per batch, gradients are summed exactly and each weight moves by
// round(lr * sum / batch) in Q4.12.

#include <array>
#include <span>
#include <vector>

#include "instantft/engine.hpp"
#include "instantft/fixed_point.hpp"
#include "instantft/lut_softmax.hpp"

namespace instantft {

struct FixedAdapter {
  int src = 0;
  Index rank = 0;
  Index in_dim = 0;
  Index out_dim = 0;
  std::vector<FixP> A;  // [rank, in_dim] row-major
  std::vector<FixP> B;  // [out_dim, rank] row-major

  static FixedAdapter from_float(const Adapter<float>& a, SaturationCounter* sat = nullptr);
  Adapter<float> to_float() const;
  bool operator==(const FixedAdapter&) const = default;
};

using FixedAdapterSet = std::vector<FixedAdapter>;

FixedAdapterSet to_fixed(const AdapterSet<float>& adapters, SaturationCounter* sat = nullptr);
AdapterSet<float> to_float(const FixedAdapterSet& adapters);

struct FixedInputs {
  std::array<std::vector<FixA>, kNumTaps> taps;  // x^0..x^4
  std::vector<FixA> logits_hat;
};

FixedInputs to_fixed_inputs(std::span<const float> x0, const BaseActivations<float>& base,
                            SaturationCounter* sat = nullptr);

// Everything one sample produces, kept for inspection.
struct FixedTrace {
  std::array<std::vector<FixA>, kNumTaps> h;
  std::array<std::vector<FixA>, kNumTaps> delta;
  std::vector<FixA> logits;
  std::vector<FixA> probs;
  std::vector<FixP> dlogits;
  std::array<std::vector<FixP>, kNumTaps> dh;
  std::array<std::vector<FixP>, kNumTaps> dA;
  std::array<std::vector<FixP>, kNumTaps> dB;
};

inline constexpr std::array<int, kNumTaps> kAdapterOrder = {0, 1, 2, 3, 4};

// Logits only (no softmax or backward).
std::vector<FixA> fixed_logits(const FixedAdapterSet& adapters, const FixedInputs& in,
                               SaturationCounter* sat = nullptr);

// Forward and backward for one sample; adapters are visited in `order`.
FixedTrace fixed_sample_step(const FixedAdapterSet& adapters, const FixedInputs& in, int label,
                             const SoftmaxLut& lut, std::span<const int> order = kAdapterOrder,
                             SaturationCounter* sat = nullptr);

// Exact raw sums of per-sample Q4.12 gradients.
struct FixedGradSums {
  std::array<std::vector<std::int64_t>, kNumTaps> dA;
  std::array<std::vector<std::int64_t>, kNumTaps> dB;

  void add(const FixedTrace& t);
};

// w <- w - round(lr * sum / batch), saturating. Returns the entries written.
std::int64_t fixed_apply_update(FixedAdapterSet& adapters, const FixedGradSums& sums, FixP lr, Index batch,
                                SaturationCounter* sat = nullptr);

double fixed_evaluate(const ModelState<float>& m, const FixedAdapterSet& adapters, const Dataset& eval,
                      ForwardCache* frozen_cache = nullptr, int threads = 1);

// InstantFT training with fixed-point adapters; same seeds and batching as
// the float path. Adapters in the result are converted back to float.
FinetuneResult fixed_finetune(const ModelState<float>& base, const StrategyConfig& config, const Dataset& train,
                              const Dataset* eval = nullptr);

}  // namespace instantft
