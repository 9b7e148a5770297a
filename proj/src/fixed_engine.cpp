#include "instantft/fixed_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "instantft/parallel.hpp"

namespace instantft {

FixedAdapter FixedAdapter::from_float(const Adapter<float>& a, SaturationCounter* sat) {
  FixedAdapter f;
  f.src = a.src;
  f.rank = a.rank();
  f.in_dim = a.in_dim();
  f.out_dim = a.out_dim();
  f.A.reserve(static_cast<std::size_t>(a.A.size()));
  for (Index i = 0; i < a.A.size(); ++i) f.A.push_back(fx_convert<Q4_12>(a.A.data()[i], sat));
  f.B.reserve(static_cast<std::size_t>(a.B.size()));
  for (Index i = 0; i < a.B.size(); ++i) f.B.push_back(fx_convert<Q4_12>(a.B.data()[i], sat));
  return f;
}

Adapter<float> FixedAdapter::to_float() const {
  Adapter<float> a{src, kNumLayers, Mat<float>(rank, in_dim), Mat<float>(out_dim, rank)};
  for (Index i = 0; i < a.A.size(); ++i) a.A.data()[i] = A[static_cast<std::size_t>(i)].to_float();
  for (Index i = 0; i < a.B.size(); ++i) a.B.data()[i] = B[static_cast<std::size_t>(i)].to_float();
  return a;
}

FixedAdapterSet to_fixed(const AdapterSet<float>& adapters, SaturationCounter* sat) {
  FixedAdapterSet out;
  for (const auto& a : adapters) out.push_back(FixedAdapter::from_float(a, sat));
  return out;
}

AdapterSet<float> to_float(const FixedAdapterSet& adapters) {
  AdapterSet<float> out;
  for (const auto& a : adapters) out.push_back(a.to_float());
  return out;
}

namespace {

std::vector<FixA> convert_all(std::span<const float> v, SaturationCounter* sat) {
  std::vector<FixA> out;
  out.reserve(v.size());
  for (float x : v) out.push_back(fx_convert<Q8_16>(x, sat));
  return out;
}

std::span<const float> as_span(const Vec<float>& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

void check(const FixedAdapterSet& adapters, const FixedInputs& in) {
  if (adapters.size() != static_cast<std::size_t>(kNumTaps)) throw ShapeError("fixed engine: expected 5 adapters");
  for (int i = 0; i < kNumTaps; ++i) {
    const auto& a = adapters[static_cast<std::size_t>(i)];
    if (a.src != i || static_cast<Index>(in.taps[i].size()) != a.in_dim || a.out_dim != kNumClasses) {
      throw ShapeError("fixed engine: adapter " + std::to_string(i) + " does not match its tap");
    }
  }
  if (in.logits_hat.size() != static_cast<std::size_t>(kNumClasses)) throw ShapeError("fixed engine: bad logits_hat");
}

struct AdapterOut {
  std::vector<FixA> h;
  std::vector<FixA> delta;
};

AdapterOut adapter_fwd(const FixedAdapter& a, std::span<const FixA> x, SaturationCounter* sat) {
  AdapterOut o;
  o.h.resize(static_cast<std::size_t>(a.rank));
  const auto in = static_cast<std::size_t>(a.in_dim);
  for (Index r = 0; r < a.rank; ++r) {
    o.h[static_cast<std::size_t>(r)] =
        fx_dot<Q8_16, Q4_12, Q8_16>(std::span<const FixP>(a.A).subspan(static_cast<std::size_t>(r) * in, in), x, sat);
  }
  o.delta.resize(static_cast<std::size_t>(a.out_dim));
  const auto rk = static_cast<std::size_t>(a.rank);
  for (Index k = 0; k < a.out_dim; ++k) {
    o.delta[static_cast<std::size_t>(k)] = fx_dot<Q8_16, Q4_12, Q8_16>(
        std::span<const FixP>(a.B).subspan(static_cast<std::size_t>(k) * rk, rk), o.h, sat);
  }
  return o;
}

std::vector<FixA> sum_logits(const FixedInputs& in, const std::array<std::vector<FixA>, kNumTaps>& delta,
                             SaturationCounter* sat) {
  std::vector<FixA> logits(static_cast<std::size_t>(kNumClasses));
  for (std::size_t k = 0; k < logits.size(); ++k) {
    __int128 acc = in.logits_hat[k].raw();
    for (const auto& d : delta) acc += d[k].raw();
    logits[k] = FixA::saturate(acc, sat);
  }
  return logits;
}

void check_order(std::span<const int> order) {
  std::array<bool, kNumTaps> seen{};
  if (order.size() != static_cast<std::size_t>(kNumTaps)) throw ShapeError("adapter order must list 5 adapters");
  for (int i : order) {
    if (i < 0 || i >= kNumTaps || seen[static_cast<std::size_t>(i)]) throw ShapeError("adapter order is not a permutation");
    seen[static_cast<std::size_t>(i)] = true;
  }
}

}  // namespace

FixedInputs to_fixed_inputs(std::span<const float> x0, const BaseActivations<float>& base, SaturationCounter* sat) {
  FixedInputs in;
  in.taps[0] = convert_all(x0, sat);
  for (int i = 1; i < kNumTaps; ++i) in.taps[i] = convert_all(as_span(base.taps[i - 1]), sat);
  in.logits_hat = convert_all(as_span(base.logits_hat), sat);
  return in;
}

std::vector<FixA> fixed_logits(const FixedAdapterSet& adapters, const FixedInputs& in, SaturationCounter* sat) {
  check(adapters, in);
  std::array<std::vector<FixA>, kNumTaps> delta;
  for (int i = 0; i < kNumTaps; ++i) delta[i] = adapter_fwd(adapters[static_cast<std::size_t>(i)], in.taps[i], sat).delta;
  return sum_logits(in, delta, sat);
}

FixedTrace fixed_sample_step(const FixedAdapterSet& adapters, const FixedInputs& in, int label, const SoftmaxLut& lut,
                             std::span<const int> order, SaturationCounter* sat) {
  check(adapters, in);
  check_order(order);
  if (label < 0 || label >= kNumClasses) throw ShapeError("fixed_sample_step: label out of range");
  FixedTrace t;
  for (int i : order) {
    AdapterOut o = adapter_fwd(adapters[static_cast<std::size_t>(i)], in.taps[i], sat);
    t.h[i] = std::move(o.h);
    t.delta[i] = std::move(o.delta);
  }
  t.logits = sum_logits(in, t.delta, sat);
  t.probs = lut.softmax(t.logits, sat);

  t.dlogits.resize(t.probs.size());
  const FixA one = FixA::from_raw(std::int64_t{1} << Q8_16::kFracBits);
  for (std::size_t k = 0; k < t.probs.size(); ++k) {
    const FixA g = static_cast<int>(k) == label ? fx_sub(t.probs[k], one, sat) : t.probs[k];
    t.dlogits[k] = fx_convert<Q4_12>(g, sat);
  }

  for (int i : order) {
    const auto& a = adapters[static_cast<std::size_t>(i)];
    const auto rk = static_cast<std::size_t>(a.rank);
    const auto out = static_cast<std::size_t>(a.out_dim);
    const auto& x = in.taps[i];
    const auto& h = t.h[i];
    auto& dB = t.dB[i];
    auto& dh = t.dh[i];
    auto& dA = t.dA[i];
    dB.resize(out * rk);
    for (std::size_t k = 0; k < out; ++k) {
      for (std::size_t r = 0; r < rk; ++r) dB[k * rk + r] = fx_mul<Q4_12>(t.dlogits[k], h[r], sat);
    }
    dh.resize(rk);
    for (std::size_t r = 0; r < rk; ++r) {
      __int128 acc = 0;
      for (std::size_t k = 0; k < out; ++k) acc += __int128{a.B[k * rk + r].raw()} * t.dlogits[k].raw();
      dh[r] = FixP::saturate(rne_shift(acc, Q4_12::kFracBits), sat);
    }
    dA.resize(rk * x.size());
    for (std::size_t r = 0; r < rk; ++r) {
      for (std::size_t j = 0; j < x.size(); ++j) dA[r * x.size() + j] = fx_mul<Q4_12>(dh[r], x[j], sat);
    }
  }
  return t;
}

void FixedGradSums::add(const FixedTrace& t) {
  auto acc = [](std::vector<std::int64_t>& s, const std::vector<FixP>& g) {
    if (s.empty()) s.assign(g.size(), 0);
    if (s.size() != g.size()) throw ShapeError("FixedGradSums: gradient size mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i].raw();
  };
  for (int i = 0; i < kNumTaps; ++i) {
    acc(dA[i], t.dA[i]);
    acc(dB[i], t.dB[i]);
  }
}

std::int64_t fixed_apply_update(FixedAdapterSet& adapters, const FixedGradSums& sums, FixP lr, Index batch,
                                SaturationCounter* sat) {
  if (batch <= 0) throw ConfigError("fixed_apply_update: batch must be positive");
  if (adapters.size() != static_cast<std::size_t>(kNumTaps)) throw ShapeError("fixed_apply_update: expected 5 adapters");
  // lr (Q4.12) * sum (Q4.12) has 24 fractional bits; divide by batch * 2^12.
  const __int128 den = __int128{batch} << Q4_12::kFracBits;
  std::int64_t written = 0;
  auto step = [&](std::vector<FixP>& w, const std::vector<std::int64_t>& s) {
    if (s.empty()) return;
    if (s.size() != w.size()) throw ShapeError("fixed_apply_update: gradient size mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      const __int128 delta = rne_div(__int128{lr.raw()} * s[i], den);
      w[i] = FixP::saturate(__int128{w[i].raw()} - delta, sat);
    }
    written += static_cast<std::int64_t>(w.size());
  };
  for (int i = 0; i < kNumTaps; ++i) {
    step(adapters[static_cast<std::size_t>(i)].A, sums.dA[i]);
    step(adapters[static_cast<std::size_t>(i)].B, sums.dB[i]);
  }
  return written;
}

double fixed_evaluate(const ModelState<float>& m, const FixedAdapterSet& adapters, const Dataset& eval,
                      ForwardCache* frozen_cache, int threads) {
  if (eval.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  std::vector<char> correct(static_cast<std::size_t>(eval.size()), 0);
  parallel_for(eval.size(), threads, [&](Index i) {
    const Tensor<float> x = eval.sample(i);
    const BaseActivations<float> base = frozen_activations(m, x, frozen_cache, i, nullptr);
    const FixedInputs in = to_fixed_inputs(x.span(), base);
    const std::vector<FixA> logits = fixed_logits(adapters, in);
    const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
    correct[static_cast<std::size_t>(i)] = best == eval.label(i) ? 1 : 0;
  });
  Index hits = 0;
  for (char c : correct) hits += c;
  return static_cast<double>(hits) / static_cast<double>(eval.size());
}

namespace {

struct FixedSampleOut {
  FixedTrace trace;
  double loss = 0.0;
  int predicted = 0;
  SampleStats stats;
};

void count_adapter_flops(const FixedAdapterSet& adapters, FlopCounter& flops) {
  for (const auto& a : adapters) {
    flops.forward += 2 * a.rank * (a.in_dim + a.out_dim);
    flops.backward += 4 * a.out_dim * a.rank + 2 * a.rank * a.in_dim;
  }
  flops.backward += kNumClasses;  // softmax-CE gradient
}

}  // namespace

FinetuneResult fixed_finetune(const ModelState<float>& base, const StrategyConfig& config, const Dataset& train,
                              const Dataset* eval) {
  validate(config);
  if (config.method != Method::kInstantFt) throw ConfigError("fixed-point arithmetic is only valid for instantft");
  if (train.size() == 0) throw ConfigError("fine-tuning dataset is empty");

  FinetuneResult res;
  res.model = base;
  std::mt19937_64 rng(config.seed);
  SaturationCounter init_sat;
  FixedAdapterSet adapters = to_fixed(make_method_adapters<float>(config.method, base.spec, config.rank, rng), &init_sat);
  res.totals.saturation_events += init_sat.events;
  SaturationCounter lr_sat;
  const FixP lr = fx_convert<Q4_12>(config.lr, &lr_sat);
  res.totals.saturation_events += lr_sat.events;
  const SoftmaxLut lut;

  const Index payload = cache_payload_size(base.spec);
  std::optional<ForwardCache> cache;
  if (config.cache_mode != CacheMode::kOff) cache.emplace(config.cache_mode, train.size(), payload);
  std::optional<ForwardCache> eval_cache;
  if (eval) eval_cache.emplace(CacheMode::kFp32, eval->size(), payload);
  ForwardCache* eval_cache_ptr = eval_cache ? &*eval_cache : nullptr;

  if (eval) res.initial_eval_accuracy = fixed_evaluate(base, adapters, *eval, eval_cache_ptr, config.threads);
  res.final_eval_accuracy = res.initial_eval_accuracy;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochMetrics em;
    em.epoch = epoch + 1;
    double loss = 0.0;
    Index correct = 0;
    std::int64_t first_written = -1;
    for (const auto& idx : batch_indices(train.size(), config.batch, config.seed, epoch)) {
      const Index n = static_cast<Index>(idx.size());
      std::vector<FixedSampleOut> outs(static_cast<std::size_t>(n));
      parallel_for(n, config.threads, [&](Index i) {
        const Index s = idx[static_cast<std::size_t>(i)];
        FixedSampleOut& o = outs[static_cast<std::size_t>(i)];
        const Tensor<float> x = train.sample(s);
        const BaseActivations<float> b = frozen_activations(base, x, cache ? &*cache : nullptr, s, &o.stats);
        SaturationCounter sat;
        {
          PhaseTimer t(o.stats.adapter_seconds);
          const FixedInputs in = to_fixed_inputs(x.span(), b, &sat);
          o.trace = fixed_sample_step(adapters, in, train.label(s), lut, kAdapterOrder, &sat);
        }
        o.stats.saturation_events += sat.events;
        count_adapter_flops(adapters, o.stats.flops);
        const double p = std::max(o.trace.probs[static_cast<std::size_t>(train.label(s))].to_double(), FixA::lsb());
        o.loss = -std::log(p);
        o.predicted = static_cast<int>(std::max_element(o.trace.logits.begin(), o.trace.logits.end()) -
                                       o.trace.logits.begin());
      });
      FixedGradSums sums;
      for (std::size_t i = 0; i < outs.size(); ++i) {
        sums.add(outs[i].trace);
        loss += outs[i].loss;
        correct += outs[i].predicted == train.label(idx[i]) ? 1 : 0;
        em.stats += outs[i].stats;
      }
      SaturationCounter sat;
      const std::int64_t written = fixed_apply_update(adapters, sums, lr, n, &sat);
      em.stats.saturation_events += sat.events;
      if (first_written < 0) first_written = written;
    }
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    em.train_loss = loss / static_cast<double>(train.size());
    em.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    if (epoch == 0) res.params_written_first_step = first_written;
    if (eval && (config.eval_every_epoch || epoch + 1 == config.epochs)) {
      em.eval_accuracy = fixed_evaluate(base, adapters, *eval, eval_cache_ptr, config.threads);
      res.final_eval_accuracy = em.eval_accuracy;
    }
    res.train_seconds += em.seconds;
    res.totals += em.stats;
    res.epochs.push_back(em);
  }
  res.adapters = to_float(adapters);
  if (cache) res.cache = cache->report();
  return res;
}

}  // namespace instantft
