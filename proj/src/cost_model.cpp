#include "instantft/cost_model.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace instantft {

std::string_view to_string(Variant v) { return v == Variant::kMnist ? "mnist" : "svhn"; }

Variant parse_variant(std::string_view s) {
  if (s == "mnist") return Variant::kMnist;
  if (s == "svhn") return Variant::kSvhn;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected mnist|svhn)");
}

namespace {

constexpr std::int64_t kFloatBytes = 4;
constexpr std::int64_t kMaskBytes = 4;
const char* const kLayerNames[kNumLayers] = {"conv1", "conv2", "fc1", "fc2", "fc3"};

// Geometry of layer k as the kernels see it.
struct LayerGeom {
  std::int64_t c_out = 0;
  std::int64_t fan_in = 0;     // c_in * k * k for conv, d_in for fc
  std::int64_t positions = 0;  // output spatial positions (1 for fc)
  std::int64_t out = 0;        // c_out * positions (pre-pool output elements)
  bool relu = false;
  std::int64_t pooled = 0;     // pooled output elements (0 when no pool)
};

LayerGeom geometry(const ModelSpec& s, int k) {
  const Shape w = s.weight_shapes()[static_cast<std::size_t>(k)];
  LayerGeom g;
  g.c_out = w[0];
  g.fan_in = shape_numel(w) / w[0];
  g.out = s.layer_out_dims()[static_cast<std::size_t>(k)];
  g.positions = g.out / g.c_out;
  g.relu = k < kNumLayers - 1;
  if (k == 0) g.pooled = shape_numel(s.pool1_shape());
  if (k == 1) g.pooled = shape_numel(s.pool2_shape());
  return g;
}

struct AdapterGeom {
  int src;
  std::string name;
  std::int64_t in;
  std::int64_t out;
  int layer;  // layer whose output the adapter feeds
};

std::vector<AdapterGeom> adapters_for(Method m, const ModelSpec& s) {
  const auto taps = s.tap_dims();
  const auto outs = s.layer_out_dims();
  std::vector<AdapterGeom> v;
  switch (m) {
    case Method::kLoraAll:
      for (int k = 0; k < kNumLayers; ++k) {
        v.push_back({k, "lora " + std::string(kLayerNames[k]), taps[static_cast<std::size_t>(k)],
                     outs[static_cast<std::size_t>(k)], k});
      }
      break;
    case Method::kLoraLast:
      v.push_back({4, "lora fc3", taps[4], outs[4], 4});
      break;
    case Method::kInstantFt:
      for (int i = 0; i < kNumTaps; ++i) {
        v.push_back({i, "skip x" + std::to_string(i) + "->logits", taps[static_cast<std::size_t>(i)], kNumClasses, 4});
      }
      break;
    default:
      break;
  }
  return v;
}

bool propagates_dx(Method m) { return m == Method::kFtAll || m == Method::kFtBias || m == Method::kLoraAll; }

}  // namespace

CostReport cost_report(Method method, Variant variant, Index rank, FlopConvention convention) {
  if (rank <= 0) throw ConfigError("rank must be positive");
  const ModelSpec s = ModelSpec::for_variant(variant);
  const TrainableMask mask = trainable_mask(method);
  const auto adapters = adapters_for(method, s);
  const std::int64_t r = rank;

  // Lowest layer owning a trainable tensor, as in the layered backward pass.
  int lowest = kNumLayers;
  if (method != Method::kInstantFt) {
    for (int k = 0; k < kNumLayers && lowest == kNumLayers; ++k) {
      bool adapter = false;
      for (const auto& a : adapters) adapter = adapter || a.layer == k;
      if (mask.weight[k] || mask.bias[k] || adapter) lowest = k;
    }
  }

  CostReport rep;
  rep.method = method;
  rep.variant = variant;

  for (int k = 0; k < kNumLayers; ++k) {
    const LayerGeom g = geometry(s, k);
    CostLine line;
    line.item = kLayerNames[k];
    const std::int64_t w = g.c_out * g.fan_in;
    const std::int64_t b = g.c_out;
    line.fwd_flops = 2 * g.fan_in * g.out + g.out + (g.relu ? g.out : 0) + 3 * g.pooled;
    if (mask.weight[k]) line.params += w;
    if (mask.bias[k]) line.params += b;
    if (method != Method::kInstantFt && k >= lowest) {
      if (mask.weight[k]) line.bwd_flops += 2 * g.fan_in * g.out;
      if (mask.bias[k]) line.bwd_flops += g.out;
      if (k > lowest) {
        line.bwd_flops += 2 * g.fan_in * g.out;                    // dx
        line.bwd_flops += geometry(s, k - 1).out;                  // ReLU backward below
      }
    }
    line.memory_bytes = (w + b + line.params) * kFloatBytes;  // weights + gradients of trainable ones
    rep.breakdown.push_back(line);
  }

  for (const auto& a : adapters) {
    CostLine line;
    line.item = a.name;
    line.params = r * (a.in + a.out);
    line.fwd_flops = 2 * r * (a.in + a.out);
    line.bwd_flops = 4 * a.out * r + 2 * r * a.in;
    const bool executed_dx = method != Method::kInstantFt && a.layer > lowest;
    const bool table_dx = method == Method::kInstantFt && convention == FlopConvention::kTable && a.src > 0;
    if (executed_dx || table_dx) line.bwd_flops += 2 * r * a.in;
    line.memory_bytes = (2 * line.params + 2 * r) * kFloatBytes;  // A, B, their gradients, h, dh
    rep.breakdown.push_back(line);
  }

  CostLine ce;
  ce.item = "softmax-ce";
  ce.bwd_flops = kNumClasses;
  rep.breakdown.push_back(ce);

  std::int64_t act = s.input_size();
  std::int64_t masks = 0;
  for (int k = 0; k < kNumLayers; ++k) {
    const LayerGeom g = geometry(s, k);
    act += g.out + g.pooled;
    masks += g.pooled;
  }
  CostLine acts;
  acts.item = "activations";
  acts.memory_bytes = act * kFloatBytes;
  rep.breakdown.push_back(acts);

  if (propagates_dx(method)) {
    CostLine dx;
    dx.item = "activation gradients";
    dx.memory_bytes = (act - s.input_size()) * kFloatBytes;
    rep.breakdown.push_back(dx);
    CostLine pm;
    pm.item = "pool masks";
    pm.memory_bytes = masks * kMaskBytes;
    rep.breakdown.push_back(pm);
  } else {
    CostLine dl;
    dl.item = "dlogits";
    dl.memory_bytes = kNumClasses * kFloatBytes;
    rep.breakdown.push_back(dl);
  }

  for (const auto& l : rep.breakdown) {
    rep.trainable_params += l.params;
    rep.fwd_flops += l.fwd_flops;
    rep.bwd_flops += l.bwd_flops;
    rep.memory_bytes += l.memory_bytes;
  }
  return rep;
}

std::int64_t count_params(Method method, Variant variant, Index rank) {
  return cost_report(method, variant, rank).trainable_params;
}

FlopCount count_flops(Method method, Variant variant, Index rank, FlopConvention convention) {
  const CostReport r = cost_report(method, variant, rank, convention);
  return {r.fwd_flops, r.bwd_flops};
}

std::int64_t estimate_memory(Method method, Variant variant, Index rank) {
  return cost_report(method, variant, rank).memory_bytes;
}

ReferenceCell reference_cell(Method method, Variant variant) {
  const bool mnist = variant == Variant::kMnist;
  switch (method) {
    case Method::kFtAll:
      return mnist ? ReferenceCell{61706, 0.851, 1.444, 567.8} : ReferenceCell{62006, 1.321, 1.914, 579.4};
    case Method::kFtLast:
      return mnist ? ReferenceCell{850, 0.851, 0.002, 285.8} : ReferenceCell{850, 1.321, 0.002, 296.1};
    case Method::kFtBias:
      return mnist ? ReferenceCell{236, 0.851, 0.611, 322.0} : ReferenceCell{236, 1.321, 0.611, 332.3};
    case Method::kLoraAll:
      return mnist ? ReferenceCell{36328, 0.923, 0.743, 611.8} : ReferenceCell{45480, 1.412, 0.762, 695.4};
    case Method::kLoraLast:
      return mnist ? ReferenceCell{376, 0.852, 0.001, 285.4} : ReferenceCell{376, 1.322, 0.001, 295.8};
    case Method::kInstantFt:
      return mnist ? ReferenceCell{10456, 0.872, 0.036, 366.2} : ReferenceCell{19608, 1.360, 0.054, 449.8};
  }
  throw ConfigError("unknown method");
}

namespace {
double delta_pct(double ours, double ref) { return ref == 0.0 ? 0.0 : 100.0 * (ours - ref) / ref; }
}  // namespace

CostTable build_cost_table(const std::vector<Variant>& variants, const std::vector<Method>& methods, Index rank) {
  CostTable t;
  for (Variant v : variants) {
    for (Method m : methods) {
      CostRow row;
      row.ours = cost_report(m, v, rank, FlopConvention::kTable);
      row.executed = cost_report(m, v, rank, FlopConvention::kExecuted);
      row.reference = reference_cell(m, v);
      row.fwd_delta_pct = delta_pct(row.ours.fwd_flops / 1e6, row.reference.fwd_mflops);
      row.bwd_delta_pct = delta_pct(row.ours.bwd_flops / 1e6, row.reference.bwd_mflops);
      row.mem_delta_pct = delta_pct(row.ours.memory_bytes / 1e3, row.reference.memory_kb);
      if (rank == 4 && row.ours.trainable_params != row.reference.params) t.params_exact = false;
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

std::string format_cost_table(const CostTable& t) {
  std::ostringstream os;
  os << std::fixed;
  os << std::left << std::setw(8) << "variant" << std::setw(11) << "method" << std::right << std::setw(8) << "params"
     << std::setw(8) << "(ref)" << std::setw(11) << "fwd MFLOP" << std::setw(8) << "(ref)" << std::setw(8) << "d%"
     << std::setw(11) << "bwd MFLOP" << std::setw(8) << "(ref)" << std::setw(9) << "d%" << std::setw(11) << "bwd exec"
     << std::setw(10) << "mem KB" << std::setw(8) << "(ref)" << std::setw(7) << "d%" << '\n';
  for (const auto& r : t.rows) {
    os << std::left << std::setw(8) << to_string(r.ours.variant) << std::setw(11) << to_string(r.ours.method)
       << std::right << std::setw(8) << r.ours.trainable_params << std::setw(8) << r.reference.params
       << std::setprecision(4) << std::setw(11) << r.ours.fwd_flops / 1e6 << std::setprecision(3) << std::setw(8)
       << r.reference.fwd_mflops << std::setprecision(1) << std::setw(8) << r.fwd_delta_pct << std::setprecision(4)
       << std::setw(11) << r.ours.bwd_flops / 1e6 << std::setprecision(3) << std::setw(8) << r.reference.bwd_mflops
       << std::setprecision(1) << std::setw(9) << r.bwd_delta_pct << std::setprecision(4) << std::setw(11)
       << r.executed.bwd_flops / 1e6 << std::setprecision(1) << std::setw(10) << r.ours.memory_bytes / 1e3
       << std::setw(8) << r.reference.memory_kb << std::setw(7) << r.mem_delta_pct << '\n';
  }
  os << (t.params_exact ? "trainable parameters: all cells match\n" : "trainable parameters: MISMATCH\n");
  return os.str();
}

std::string cost_table_csv(const CostTable& t) {
  std::ostringstream os;
  os << "method,variant,params,fwd_flops,bwd_flops,bwd_flops_executed,mem_bytes,ref_params,ref_fwd_mflops,"
        "ref_bwd_mflops,ref_mem_kb,delta_pct_fwd,delta_pct_bwd,delta_pct_mem\n";
  os << std::setprecision(6);
  for (const auto& r : t.rows) {
    os << to_string(r.ours.method) << ',' << to_string(r.ours.variant) << ',' << r.ours.trainable_params << ','
       << r.ours.fwd_flops << ',' << r.ours.bwd_flops << ',' << r.executed.bwd_flops << ',' << r.ours.memory_bytes
       << ',' << r.reference.params << ',' << r.reference.fwd_mflops << ',' << r.reference.bwd_mflops << ','
       << r.reference.memory_kb << ',' << r.fwd_delta_pct << ',' << r.bwd_delta_pct << ',' << r.mem_delta_pct << '\n';
  }
  return os.str();
}

std::vector<CostCsvRow> parse_cost_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line) || line.rfind("method,variant,params,", 0) != 0) throw DataError("cost CSV: bad header");
  std::vector<CostCsvRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 14) throw DataError("cost CSV: expected 14 fields, got " + std::to_string(f.size()));
    CostCsvRow r;
    r.method = f[0];
    r.variant = f[1];
    r.params = std::stoll(f[2]);
    r.fwd_flops = std::stoll(f[3]);
    r.bwd_flops = std::stoll(f[4]);
    r.bwd_flops_executed = std::stoll(f[5]);
    r.mem_bytes = std::stoll(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace instantft
