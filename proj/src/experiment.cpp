#include "instantft/experiment.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "instantft/checkpoint.hpp"

namespace instantft {

namespace {
// Keeps the split permutation independent of the shuffling and init streams.
constexpr std::uint64_t kSplitSalt = 0x5eed5a1177ULL;

// Empty for NaN (not evaluated).
std::string nan_blank(double v) {
  if (std::isnan(v)) return {};
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}
}  // namespace

std::filesystem::path resolve_data_root(const ExperimentConfig& c) {
  if (!c.data_root.empty()) return c.data_root;
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
  return kDefaultDataRoot;
}

Dataset load_split(const std::filesystem::path& root, const std::string& dataset, bool train) {
  const std::string prefix = train ? "train" : "t10k";
  const auto dir = root / dataset;
  Dataset ds = load_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"));
  ds.name = dataset + "-" + prefix;
  return ds;
}

RotatedSplits make_rotated_splits(const Dataset& source, double degrees, Index samples, Index eval_samples,
                                  std::uint64_t seed) {
  if (samples <= 0 || eval_samples < 0 || samples + eval_samples > source.size()) {
    throw ConfigError("requested " + std::to_string(samples) + " + " + std::to_string(eval_samples) +
                      " samples from a set of " + std::to_string(source.size()));
  }
  const std::vector<Index> perm = permutation(source.size(), seed ^ kSplitSalt);
  const std::span<const Index> all(perm);
  RotatedSplits s;
  s.train = rotate_dataset(source, degrees, all.subspan(0, static_cast<std::size_t>(samples)));
  s.eval = rotate_dataset(source, degrees,
                          all.subspan(static_cast<std::size_t>(samples), static_cast<std::size_t>(eval_samples)));
  return s;
}

ModelState<float> load_or_pretrain(const std::filesystem::path& path, const ExperimentConfig& c, const Dataset& train,
                                   const Dataset* test, PretrainResult* result) {
  if (!path.empty() && std::filesystem::exists(path)) return load_model(path);
  PretrainConfig pc;
  pc.epochs = c.pretrain_epochs;
  pc.batch = c.pretrain_batch;
  pc.lr = c.pretrain_lr;
  pc.seed = c.seed;
  pc.threads = c.threads;
  PretrainResult r = pretrain(init_model<float>(ModelSpec::for_variant(c.variant()), c.seed), train, pc, test);
  if (!path.empty()) save_model(path, r.model);
  ModelState<float> m = r.model;
  if (result) *result = std::move(r);
  return m;
}

RunRecord run_finetune(const ModelState<float>& base, const ExperimentConfig& c, const Dataset& source, Method method,
                       double angle, std::uint64_t seed) {
  const RotatedSplits s = make_rotated_splits(source, angle, c.samples, c.eval_samples, seed);
  const StrategyConfig sc = c.strategy(method, seed);
  RunRecord r;
  r.key = {method, angle, seed, sc.cache_mode, sc.arithmetic};
  r.result = finetune(base, sc, s.train, c.eval_samples > 0 ? &s.eval : nullptr);
  return r;
}

std::vector<Summary> summarize(const std::vector<RunRecord>& records) {
  std::vector<Summary> out;
  std::vector<std::vector<const RunRecord*>> groups;
  for (const auto& r : records) {
    std::size_t g = 0;
    for (; g < out.size(); ++g) {
      const Summary& s = out[g];
      if (s.method == r.key.method && s.angle == r.key.angle && s.cache_mode == r.key.cache_mode &&
          s.arithmetic == r.key.arithmetic) {
        break;
      }
    }
    if (g == out.size()) {
      out.push_back({r.key.method, r.key.angle, r.key.cache_mode, r.key.arithmetic});
      groups.emplace_back();
    }
    groups[g].push_back(&r);
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    Summary& s = out[g];
    s.runs = static_cast<int>(groups[g].size());
    for (const RunRecord* r : groups[g]) {
      s.mean_accuracy += r->result.final_eval_accuracy;
      s.mean_initial_accuracy += r->result.initial_eval_accuracy;
      s.mean_seconds += r->result.train_seconds;
    }
    s.mean_accuracy /= s.runs;
    s.mean_initial_accuracy /= s.runs;
    s.mean_seconds /= s.runs;
    double var = 0.0;
    for (const RunRecord* r : groups[g]) var += std::pow(r->result.final_eval_accuracy - s.mean_accuracy, 2);
    s.std_accuracy = s.runs > 1 ? std::sqrt(var / (s.runs - 1)) : 0.0;
  }
  return out;
}

std::string finetune_csv(const ExperimentConfig& c, const std::vector<RunRecord>& records) {
  std::ostringstream os;
  os.precision(10);
  os << "kind,method,angle,samples,seed,cache_mode,arithmetic,epoch,loss,train_acc,eval_acc,"
        "base_forward_calls,cache_hits,cache_misses,saturation_events,fwd_flops,bwd_flops,"
        "time_ms,base_ms,adapter_ms,backward_ms,cache_ms\n";
  for (const auto& r : records) {
    for (const auto& e : r.result.epochs) {
      const auto& st = e.stats;
      os << "epoch," << to_string(r.key.method) << ',' << r.key.angle << ',' << c.samples << ',' << r.key.seed << ','
         << to_string(r.key.cache_mode) << ',' << to_string(r.key.arithmetic) << ',' << e.epoch << ',' << e.train_loss
         << ',' << e.train_accuracy << ',' << nan_blank(e.eval_accuracy) << ',' << st.base_forward_calls << ','
         << st.cache_hits << ',' << st.cache_misses << ',' << st.saturation_events << ',' << st.flops.forward << ','
         << st.flops.backward << ',' << e.seconds * 1e3 << ',' << st.base_seconds * 1e3 << ','
         << st.adapter_seconds * 1e3 << ',' << st.backward_seconds * 1e3 << ',' << st.cache_seconds * 1e3 << '\n';
    }
    const auto& t = r.result.totals;
    os << "run," << to_string(r.key.method) << ',' << r.key.angle << ',' << c.samples << ',' << r.key.seed << ','
       << to_string(r.key.cache_mode) << ',' << to_string(r.key.arithmetic) << ',' << r.result.epochs.size() << ','
       << (r.result.epochs.empty() ? std::string() : nan_blank(r.result.epochs.back().train_loss)) << ",,"
       << nan_blank(r.result.final_eval_accuracy) << ',' << t.base_forward_calls << ',' << t.cache_hits << ','
       << t.cache_misses << ',' << t.saturation_events << ',' << t.flops.forward << ',' << t.flops.backward << ','
       << r.result.train_seconds * 1e3 << ',' << t.base_seconds * 1e3 << ',' << t.adapter_seconds * 1e3 << ','
       << t.backward_seconds * 1e3 << ',' << t.cache_seconds * 1e3 << '\n';
  }
  return os.str();
}

std::string summary_csv(const ExperimentConfig& c, const std::vector<RunRecord>& records) {
  std::ostringstream os;
  os.precision(10);
  os << "method,angle,samples,cache_mode,arithmetic,runs,mean_acc,std_acc,mean_initial_acc,mean_time_ms\n";
  for (const auto& s : summarize(records)) {
    os << to_string(s.method) << ',' << s.angle << ',' << c.samples << ',' << to_string(s.cache_mode) << ','
       << to_string(s.arithmetic) << ',' << s.runs << ',' << s.mean_accuracy << ',' << s.std_accuracy << ','
       << s.mean_initial_accuracy << ',' << s.mean_seconds * 1e3 << '\n';
  }
  return os.str();
}

}  // namespace instantft
