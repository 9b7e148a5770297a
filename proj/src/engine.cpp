#include "instantft/engine.hpp"

#include <chrono>
#include <string>

#include "instantft/fixed_engine.hpp"
#include "instantft/parallel.hpp"

namespace instantft {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kFtAll:
      return "ft-all";
    case Method::kFtLast:
      return "ft-last";
    case Method::kFtBias:
      return "ft-bias";
    case Method::kLoraAll:
      return "lora-all";
    case Method::kLoraLast:
      return "lora-last";
    case Method::kInstantFt:
      return "instantft";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  for (Method m : kAllMethods) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown method '" + std::string(s) +
                    "' (expected ft-all|ft-last|ft-bias|lora-all|lora-last|instantft)");
}

std::string_view to_string(Arithmetic a) { return a == Arithmetic::kFloat ? "float" : "fixed"; }

Arithmetic parse_arithmetic(std::string_view s) {
  if (s == "float") return Arithmetic::kFloat;
  if (s == "fixed") return Arithmetic::kFixed;
  throw ConfigError("unknown arithmetic '" + std::string(s) + "' (expected float|fixed)");
}

void validate(const StrategyConfig& c) {
  if (c.cache_mode != CacheMode::kOff && c.method != Method::kInstantFt) {
    throw ConfigError("forward cache is only valid for instantft, not " + std::string(to_string(c.method)));
  }
  if (c.arithmetic == Arithmetic::kFixed && c.method != Method::kInstantFt) {
    throw ConfigError("fixed-point arithmetic is only valid for instantft");
  }
  if (c.rank <= 0) throw ConfigError("rank must be positive");
  if (c.batch <= 0) throw ConfigError("batch must be positive");
  if (c.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (c.threads <= 0) throw ConfigError("threads must be positive");
}

TrainableMask trainable_mask(Method m) {
  TrainableMask mask;
  switch (m) {
    case Method::kFtAll:
      return TrainableMask::all();
    case Method::kFtLast:
      mask.weight[kNumLayers - 1] = true;
      mask.bias[kNumLayers - 1] = true;
      break;
    case Method::kFtBias:
      mask.bias.fill(true);
      break;
    default:
      break;
  }
  return mask;
}

namespace {

bool uses_frozen_trunk(Method m) {
  return m == Method::kFtLast || m == Method::kLoraLast || m == Method::kInstantFt;
}

struct EpochOutcome {
  double loss = 0.0;
  Index correct = 0;
  SampleStats stats;
  std::int64_t first_step_written = -1;
};

// One epoch of mini-batch SGD. Per-sample gradients are reduced in batch
// order, so the result is independent of the worker count.
EpochOutcome run_epoch(ModelState<float>& model, AdapterSet<float>& adapters, Method method, const Dataset& train,
                       ForwardCache* cache, float lr, Index batch, std::uint64_t seed, int epoch, int threads) {
  EpochOutcome out;
  for (const auto& idx : batch_indices(train.size(), batch, seed, epoch)) {
    const Index n = static_cast<Index>(idx.size());
    std::vector<SampleResult<float>> results(static_cast<std::size_t>(n));
    parallel_for(n, threads, [&](Index i) {
      const Index s = idx[static_cast<std::size_t>(i)];
      results[static_cast<std::size_t>(i)] =
          sample_gradients(model, method, adapters, train.sample(s), train.label(s), cache, s);
    });
    StepGrads<float> sum;
    for (std::size_t i = 0; i < results.size(); ++i) {
      accumulate(sum, results[i].grads);
      out.loss += results[i].loss;
      out.correct += results[i].predicted == train.label(idx[i]) ? 1 : 0;
      out.stats += results[i].stats;
    }
    const std::int64_t written = apply_sgd(model, adapters, sum, lr, n);
    if (out.first_step_written < 0) out.first_step_written = written;
  }
  return out;
}

}  // namespace

double evaluate(const ModelState<float>& m, Method method, const AdapterSet<float>& adapters, const Dataset& eval,
                ForwardCache* frozen_cache, int threads) {
  if (eval.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  std::vector<char> correct(static_cast<std::size_t>(eval.size()), 0);
  const bool cached = frozen_cache && uses_frozen_trunk(method);
  parallel_for(eval.size(), threads, [&](Index i) {
    const Tensor<float> x = eval.sample(i);
    Tensor<float> logits;
    if (cached && method == Method::kInstantFt) {
      logits = model_logits(m, method, adapters, x, frozen_cache, i);
    } else if (cached) {
      const BaseActivations<float> b = frozen_activations(m, x, frozen_cache, i, nullptr);
      const Tensor<float> x4({b.taps[3].size()}, b.taps[3]);
      logits = fc_forward(x4, m.layers[kNumLayers - 1]);
      if (method == Method::kLoraLast) logits.vec() += adapter_forward(adapters.front(), x4.vec()).delta;
    } else {
      logits = model_logits(m, method, adapters, x);
    }
    correct[static_cast<std::size_t>(i)] = argmax(logits) == eval.label(i) ? 1 : 0;
  });
  Index hits = 0;
  for (char c : correct) hits += c;
  return static_cast<double>(hits) / static_cast<double>(eval.size());
}

FinetuneResult finetune(const ModelState<float>& base, const StrategyConfig& config, const Dataset& train,
                        const Dataset* eval) {
  validate(config);
  if (train.size() == 0) throw ConfigError("fine-tuning dataset is empty");
  if (config.arithmetic == Arithmetic::kFixed) return fixed_finetune(base, config, train, eval);

  FinetuneResult res;
  res.model = base;
  std::mt19937_64 rng(config.seed);
  res.adapters = make_method_adapters<float>(config.method, base.spec, config.rank, rng);

  const Index payload = cache_payload_size(base.spec);
  std::optional<ForwardCache> cache;
  if (config.cache_mode != CacheMode::kOff) cache.emplace(config.cache_mode, train.size(), payload);
  std::optional<ForwardCache> eval_cache;
  if (eval && uses_frozen_trunk(config.method)) eval_cache.emplace(CacheMode::kFp32, eval->size(), payload);
  ForwardCache* eval_cache_ptr = eval_cache ? &*eval_cache : nullptr;

  if (eval) res.initial_eval_accuracy = evaluate(res.model, config.method, res.adapters, *eval, eval_cache_ptr, config.threads);
  res.final_eval_accuracy = res.initial_eval_accuracy;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochOutcome o = run_epoch(res.model, res.adapters, config.method, train, cache ? &*cache : nullptr,
                               static_cast<float>(config.lr), config.batch, config.seed, epoch, config.threads);
    EpochMetrics em;
    em.epoch = epoch + 1;
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    em.train_loss = o.loss / static_cast<double>(train.size());
    em.train_accuracy = static_cast<double>(o.correct) / static_cast<double>(train.size());
    em.stats = o.stats;
    if (epoch == 0) res.params_written_first_step = o.first_step_written;
    if (eval && (config.eval_every_epoch || epoch + 1 == config.epochs)) {
      em.eval_accuracy = evaluate(res.model, config.method, res.adapters, *eval, eval_cache_ptr, config.threads);
      res.final_eval_accuracy = em.eval_accuracy;
    }
    res.train_seconds += em.seconds;
    res.totals += em.stats;
    res.epochs.push_back(em);
  }
  if (cache) res.cache = cache->report();
  return res;
}

PretrainResult pretrain(const ModelState<float>& init, const Dataset& train, const PretrainConfig& config,
                        const Dataset* test) {
  if (train.size() == 0) throw ConfigError("pretraining dataset is empty");
  if (config.batch <= 0) throw ConfigError("batch must be positive");
  if (!(config.lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (init.spec.input_shape() != train.sample_shape()) throw ShapeError("dataset does not match the model input shape");
  PretrainResult res;
  res.model = init;
  AdapterSet<float> none;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochOutcome o = run_epoch(res.model, none, Method::kFtAll, train, nullptr, static_cast<float>(config.lr),
                               config.batch, config.seed, epoch, config.threads);
    res.epoch_loss.push_back(o.loss / static_cast<double>(train.size()));
    res.epoch_train_accuracy.push_back(static_cast<double>(o.correct) / static_cast<double>(train.size()));
    if (config.on_epoch) config.on_epoch(epoch + 1, res.epoch_loss.back(), res.epoch_train_accuracy.back());
  }
  if (test) res.test_accuracy = evaluate(res.model, Method::kFtAll, none, *test, nullptr, config.threads);
  return res;
}

}  // namespace instantft
