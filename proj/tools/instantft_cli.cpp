// instantft: pretraining, fine-tuning, benchmarking and cost tables.
//
//   instantft pretrain    [--config f] [--seed n] [--threads n] [--out dir] [--set key=value]...
//   instantft finetune    ...
//   instantft bench       ...
//   instantft costs       ...
//   instantft cache-stats ...
//
// Settings come from the config file first, then --set overrides, then the
// dedicated flags. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 acceptance check failed, 1 anything else.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "instantft/checkpoint.hpp"
#include "instantft/config.hpp"
#include "instantft/cost_model.hpp"
#include "instantft/experiment.hpp"
#include "instantft/nf4.hpp"

namespace fs = std::filesystem;
using namespace instantft;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitAcceptance = 4;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "experiment config file (key = value lines)");
  cmd->add_option("--seed", o.seed, "first seed");
  cmd->add_option("--threads", o.threads, "worker threads");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--set", o.sets, "override a config key, e.g. --set methods=instantft,lora-all");
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.seed = *o.seed;
  if (o.threads) c.threads = *o.threads;
  if (!o.out.empty()) c.out = o.out;
  validate(c);
  return c;
}

fs::path checkpoint_path(const ExperimentConfig& c) {
  return c.checkpoint.empty() ? fs::path(c.out) / (c.dataset + "_base.ckpt") : fs::path(c.checkpoint);
}

ModelState<float> require_checkpoint(const ExperimentConfig& c) {
  const fs::path p = checkpoint_path(c);
  if (!fs::exists(p)) throw DataError("base checkpoint " + p.string() + " not found; run `instantft pretrain` first");
  ModelState<float> m = load_model(p);
  if (m.spec != ModelSpec::for_variant(c.variant())) throw DataError("checkpoint does not match dataset " + c.dataset);
  return m;
}

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v;
  return os.str();
}

int cmd_pretrain(const ExperimentConfig& c) {
  const fs::path root = resolve_data_root(c);
  const Dataset train = load_split(root, c.dataset, true);
  const Dataset test = load_split(root, c.dataset, false);
  PretrainConfig pc;
  pc.epochs = c.pretrain_epochs;
  pc.batch = c.pretrain_batch;
  pc.lr = c.pretrain_lr;
  pc.seed = c.seed;
  pc.threads = c.threads;
  pc.on_epoch = [](int e, double loss, double acc) {
    std::cerr << "epoch " << e << "  loss " << loss << "  train acc " << pct(acc) << "%" << std::endl;
  };
  std::cerr << "pretraining on " << train.size() << " samples for " << pc.epochs << " epochs\n";
  const PretrainResult r = pretrain(init_model<float>(ModelSpec::for_variant(c.variant()), c.seed), train, pc, &test);
  const fs::path ckpt = checkpoint_path(c);
  save_model(ckpt, r.model);
  std::ostringstream csv;
  csv.precision(10);
  csv << "epoch,loss,train_acc\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    csv << e + 1 << ',' << r.epoch_loss[e] << ',' << r.epoch_train_accuracy[e] << '\n';
  }
  csv << "test,," << r.test_accuracy << '\n';
  write_file_atomic(fs::path(c.out) / "pretrain.csv", csv.str());
  std::cout << "test accuracy " << pct(r.test_accuracy) << "%\ncheckpoint " << ckpt.string() << '\n';
  return 0;
}

int cmd_finetune(const ExperimentConfig& c) {
  const ModelState<float> base = require_checkpoint(c);
  const Dataset source = load_split(resolve_data_root(c), c.dataset, false);
  std::vector<RunRecord> records;
  for (double angle : c.angles) {
    for (Method m : c.methods) {
      for (int s = 0; s < c.seeds; ++s) {
        const std::uint64_t seed = c.seed + static_cast<std::uint64_t>(s);
        records.push_back(run_finetune(base, c, source, m, angle, seed));
        const auto& r = records.back().result;
        std::cerr << to_string(m) << " angle " << angle << " seed " << seed << ": acc " << pct(r.final_eval_accuracy)
                  << "% (" << std::fixed << std::setprecision(2) << r.train_seconds << std::defaultfloat << " s)\n";
      }
    }
  }
  write_file_atomic(fs::path(c.out) / "finetune.csv", finetune_csv(c, records));
  write_file_atomic(fs::path(c.out) / "summary.csv", summary_csv(c, records));
  std::cout << std::left << std::setw(11) << "method" << std::setw(7) << "angle" << std::setw(7) << "cache"
            << std::setw(7) << "arith" << std::right << std::setw(6) << "runs" << std::setw(10) << "no-ft %"
            << std::setw(10) << "acc %" << std::setw(8) << "std" << std::setw(10) << "time s" << '\n';
  for (const auto& s : summarize(records)) {
    std::cout << std::left << std::setw(11) << to_string(s.method) << std::setw(7) << s.angle << std::setw(7)
              << to_string(s.cache_mode) << std::setw(7) << to_string(s.arithmetic) << std::right << std::setw(6)
              << s.runs << std::setw(10) << pct(s.mean_initial_accuracy) << std::setw(10) << pct(s.mean_accuracy)
              << std::setw(8) << pct(s.std_accuracy) << std::setw(10) << std::fixed << std::setprecision(3)
              << s.mean_seconds << std::defaultfloat << '\n';
  }
  return 0;
}

int cmd_bench(const ExperimentConfig& c) {
  const ModelState<float> base = require_checkpoint(c);
  const Dataset source = load_split(resolve_data_root(c), c.dataset, false);
  const double angle = c.angles.front();
  ExperimentConfig bc = c;
  bc.eval_samples = 0;  // time training only

  struct Case {
    std::string label;
    Method method;
    CacheMode cache;
  };
  const std::vector<Case> cases = {{"instantft-fp32", Method::kInstantFt, CacheMode::kFp32},
                                   {"instantft-nf4", Method::kInstantFt, CacheMode::kNf4},
                                   {"instantft-nocache", Method::kInstantFt, CacheMode::kOff},
                                   {"lora-all", Method::kLoraAll, CacheMode::kOff},
                                   {"ft-last", Method::kFtLast, CacheMode::kOff}};
  std::vector<std::pair<std::string, FinetuneResult>> results;
  for (const auto& k : cases) {
    bc.cache_mode = k.cache;
    results.emplace_back(k.label, run_finetune(base, bc, source, k.method, angle, c.seed).result);
  }

  // Inference-only baseline: one frozen forward pass per sample per epoch.
  const RotatedSplits splits = make_rotated_splits(source, angle, c.samples, 0, c.seed);
  const auto t0 = std::chrono::steady_clock::now();
  std::int64_t calls = 0;
  for (int e = 0; e < c.epochs; ++e) {
    for (Index i = 0; i < splits.train.size(); ++i) {
      volatile int p = predict(base, Method::kFtAll, AdapterSet<float>{}, splits.train.sample(i));
      (void)p;
      ++calls;
    }
  }
  const double infer_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const double lora = results[3].second.train_seconds;
  std::ostringstream csv;
  csv.precision(10);
  csv << "label,method,cache_mode,epochs,samples,threads,train_seconds,base_forward_calls,speedup_vs_lora_all\n";
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& r = results[i].second;
    csv << cases[i].label << ',' << to_string(cases[i].method) << ',' << to_string(cases[i].cache) << ',' << c.epochs
        << ',' << c.samples << ',' << c.threads << ',' << r.train_seconds << ',' << r.totals.base_forward_calls << ','
        << lora / r.train_seconds << '\n';
    std::cout << std::left << std::setw(20) << cases[i].label << std::right << std::fixed << std::setprecision(3)
              << std::setw(10) << r.train_seconds << " s  base forwards " << std::setw(7)
              << r.totals.base_forward_calls << "  speedup vs lora-all " << std::setprecision(2)
              << lora / r.train_seconds << "x\n"
              << std::defaultfloat;
  }
  csv << "inference-only,,off," << c.epochs << ',' << c.samples << ',' << c.threads << ',' << infer_s << ',' << calls
      << ',' << lora / infer_s << '\n';
  write_file_atomic(fs::path(c.out) / "bench.csv", csv.str());
  const double fp32 = results[0].second.train_seconds;
  std::cout << "inference only      " << std::fixed << std::setprecision(3) << infer_s << " s\n"
            << "nf4 overhead vs fp32 cache: " << std::setprecision(1)
            << 100.0 * (results[1].second.train_seconds / fp32 - 1.0) << "%\n"
            << "cache speedup (off / fp32): " << std::setprecision(2) << results[2].second.train_seconds / fp32
            << "x\n";
  return 0;
}

int cmd_costs(const ExperimentConfig& c) {
  const std::vector<Method> methods(std::begin(kAllMethods), std::end(kAllMethods));
  const CostTable t = build_cost_table({Variant::kMnist, Variant::kSvhn}, methods, c.rank);
  std::cout << format_cost_table(t);
  write_file_atomic(fs::path(c.out) / "costs.csv", cost_table_csv(t));
  return t.params_exact ? 0 : kExitAcceptance;
}

int cmd_cache_stats(const ExperimentConfig& c) {
  ModelState<float> base;
  if (fs::exists(checkpoint_path(c))) {
    base = require_checkpoint(c);
  } else {
    std::cerr << "no checkpoint at " << checkpoint_path(c).string() << "; using an untrained model\n";
    base = init_model<float>(ModelSpec::for_variant(c.variant()), c.seed);
  }
  const Dataset source = load_split(resolve_data_root(c), c.dataset, false);
  const RotatedSplits s = make_rotated_splits(source, c.angles.front(), c.samples, 0, c.seed);
  const Index payload = cache_payload_size(base.spec);

  std::ostringstream csv;
  csv.precision(10);
  csv << "cache_mode,entries,bytes,megabytes,bytes_per_entry,compression_ratio,max_abs_error,mean_abs_error\n";
  for (CacheMode mode : {CacheMode::kFp32, CacheMode::kNf4}) {
    ForwardCache cache(mode, s.train.size(), payload);
    double max_err = 0.0;
    double sum_err = 0.0;
    std::vector<float> back(static_cast<std::size_t>(payload));
    for (Index i = 0; i < s.train.size(); ++i) {
      const std::vector<float> p = pack_payload(base_forward(base, s.train.sample(i)));
      cache.put(i, p);
      cache.get(i, back);
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double e = std::abs(static_cast<double>(p[j]) - back[j]);
        max_err = std::max(max_err, e);
        sum_err += e;
      }
    }
    const CacheReport r = cache.report();
    const double mean_err = sum_err / static_cast<double>(s.train.size() * payload);
    csv << to_string(mode) << ',' << r.entries << ',' << r.bytes << ',' << r.bytes / 1e6 << ','
        << cache.entry_stride() << ',' << r.compression_ratio << ',' << max_err << ',' << mean_err << '\n';
    std::cout << std::left << std::setw(6) << to_string(mode) << std::right << std::setw(6) << r.entries
              << " entries  " << std::fixed << std::setprecision(3) << std::setw(8) << r.bytes / 1e6 << " MB  "
              << std::setw(5) << cache.entry_stride() << " B/entry  ratio " << std::setprecision(3)
              << r.compression_ratio << "  max |err| " << std::setprecision(5) << max_err << std::defaultfloat
              << '\n';
    cache.save(fs::path(c.out) / ("cache_" + std::string(to_string(mode)) + ".bin"));
  }
  write_file_atomic(fs::path(c.out) / "cache_stats.csv", csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"InstantFT fine-tuning experiments"};
  app.require_subcommand(1);
  CommonOptions opts;
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const ExperimentConfig&);
  };
  const Command commands[] = {
      {"pretrain", "train the base network and write a checkpoint", cmd_pretrain},
      {"finetune", "run fine-tuning strategies on rotated data", cmd_finetune},
      {"bench", "time InstantFT against baselines", cmd_bench},
      {"costs", "parameter / FLOP / memory table", cmd_costs},
      {"cache-stats", "forward cache sizes and NF4 error", cmd_cache_stats},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    add_common(sub, opts);
    subs.emplace_back(sub, &cmd);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  try {
    for (const auto& [sub, cmd] : subs) {
      if (sub->parsed()) return cmd->run(resolve(opts));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
