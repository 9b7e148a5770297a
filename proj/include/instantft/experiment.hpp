#pragma once

// Experiment plumbing shared by the command-line tool and the acceptance
// suite: dataset discovery, rotated fine-tuning splits, run records and CSV.

#include <filesystem>
#include <string>
#include <vector>

#include "instantft/config.hpp"
#include "instantft/data.hpp"
#include "instantft/engine.hpp"

namespace instantft {

inline constexpr const char* kDataRootEnv = "INSTANTFT_DATA";
inline constexpr const char* kDefaultDataRoot = "/root/data";

// config.data_root, else $INSTANTFT_DATA, else /root/data.
std::filesystem::path resolve_data_root(const ExperimentConfig& c);

// <root>/<dataset>/{train,t10k}-{images-idx3,labels-idx1}-ubyte. Throws IdxError.
Dataset load_split(const std::filesystem::path& root, const std::string& dataset, bool train);

struct RotatedSplits {
  Dataset train;  // |D| samples used for fine-tuning
  Dataset eval;   // disjoint held-out samples, same rotation
};

// Both sets are drawn without replacement from one seeded permutation of
// `source` and rotated by `degrees`.
RotatedSplits make_rotated_splits(const Dataset& source, double degrees, Index samples, Index eval_samples,
                                  std::uint64_t seed);

// Loads `path` when it exists, otherwise pretrains on `train` and writes it.
ModelState<float> load_or_pretrain(const std::filesystem::path& path, const ExperimentConfig& c, const Dataset& train,
                                   const Dataset* test, PretrainResult* result = nullptr);

struct RunKey {
  Method method = Method::kInstantFt;
  double angle = 0.0;
  std::uint64_t seed = 0;
  CacheMode cache_mode = CacheMode::kOff;
  Arithmetic arithmetic = Arithmetic::kFloat;
};

struct RunRecord {
  RunKey key;
  FinetuneResult result;
};

// One fine-tuning run: splits, strategy and evaluation for (method, angle, seed).
RunRecord run_finetune(const ModelState<float>& base, const ExperimentConfig& c, const Dataset& source,
                       Method method, double angle, std::uint64_t seed);

struct Summary {
  Method method;
  double angle;
  CacheMode cache_mode;
  Arithmetic arithmetic;
  int runs = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_initial_accuracy = 0.0;
  double mean_seconds = 0.0;
};

// Groups records by (method, angle, cache, arithmetic) in first-seen order.
std::vector<Summary> summarize(const std::vector<RunRecord>& records);

// One row per epoch (kind=epoch) and per run (kind=run, totals). Columns:
//   kind,method,angle,samples,seed,cache_mode,arithmetic,epoch,loss,train_acc,eval_acc,
//   base_forward_calls,cache_hits,cache_misses,saturation_events,fwd_flops,bwd_flops,
//   time_ms,base_ms,adapter_ms,backward_ms,cache_ms
// Timing columns are the only ones that vary between identical runs.
std::string finetune_csv(const ExperimentConfig& c, const std::vector<RunRecord>& records);

// One row per summarize() group:
//   method,angle,samples,cache_mode,arithmetic,runs,mean_acc,std_acc,mean_initial_acc,mean_time_ms
std::string summary_csv(const ExperimentConfig& c, const std::vector<RunRecord>& records);

}  // namespace instantft
