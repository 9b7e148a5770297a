#pragma once

// Static parameter / FLOP / memory accounting per (method, variant).
//
// FLOPs follow the kernel convention in kernels.hpp. Memory (FP32, bytes):
//   parameters (base + adapters) + trainable-parameter gradients
//   + one sample's activations (input, pre-pool conv outputs, pooled maps, fc outputs, logits)
//   + for methods that propagate dx: a gradient buffer per non-input activation and
//     int32 pool argmax masks
//   + per adapter: h and dh (2r floats); otherwise-unbuffered methods keep dlogits.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "instantft/engine.hpp"
#include "instantft/model.hpp"

namespace instantft {

// kExecuted counts what the engine runs. kTable additionally charges the
// InstantFT backward pass with the A^T dh accumulation into x^1..x^4 that a
// layered LoRA backward would perform; it is never executed.
enum class FlopConvention { kExecuted, kTable };

struct CostLine {
  std::string item;
  std::int64_t params = 0;
  std::int64_t fwd_flops = 0;
  std::int64_t bwd_flops = 0;
  std::int64_t memory_bytes = 0;
};

struct CostReport {
  Method method = Method::kFtAll;
  Variant variant = Variant::kMnist;
  std::int64_t trainable_params = 0;
  std::int64_t fwd_flops = 0;
  std::int64_t bwd_flops = 0;
  std::int64_t memory_bytes = 0;
  std::vector<CostLine> breakdown;  // totals are the column sums
};

CostReport cost_report(Method method, Variant variant, Index rank = 4,
                       FlopConvention convention = FlopConvention::kTable);

std::int64_t count_params(Method method, Variant variant, Index rank = 4);

struct FlopCount {
  std::int64_t fwd = 0;
  std::int64_t bwd = 0;
};
FlopCount count_flops(Method method, Variant variant, Index rank = 4,
                      FlopConvention convention = FlopConvention::kTable);

std::int64_t estimate_memory(Method method, Variant variant, Index rank = 4);

// Published reference cells (FLOPs in units of 1e6, memory in KB = 1000 B).
struct ReferenceCell {
  std::int64_t params;
  double fwd_mflops;
  double bwd_mflops;
  double memory_kb;
};
ReferenceCell reference_cell(Method method, Variant variant);

struct CostRow {
  CostReport ours;
  CostReport executed;  // same cell under the executed convention
  ReferenceCell reference;
  double fwd_delta_pct = 0.0;
  double bwd_delta_pct = 0.0;
  double mem_delta_pct = 0.0;
};

struct CostTable {
  std::vector<CostRow> rows;
  bool params_exact = true;  // every parameter cell matches the reference
};

CostTable build_cost_table(const std::vector<Variant>& variants, const std::vector<Method>& methods, Index rank = 4);

// Human-readable grid with reference values and deltas.
std::string format_cost_table(const CostTable& t);

// CSV with header
//   method,variant,params,fwd_flops,bwd_flops,bwd_flops_executed,mem_bytes,
//   ref_params,ref_fwd_mflops,ref_bwd_mflops,ref_mem_kb,
//   delta_pct_fwd,delta_pct_bwd,delta_pct_mem
std::string cost_table_csv(const CostTable& t);

struct CostCsvRow {
  std::string method;
  std::string variant;
  std::int64_t params = 0;
  std::int64_t fwd_flops = 0;
  std::int64_t bwd_flops = 0;
  std::int64_t bwd_flops_executed = 0;
  std::int64_t mem_bytes = 0;
};
std::vector<CostCsvRow> parse_cost_csv(const std::string& csv);

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);

}  // namespace instantft
