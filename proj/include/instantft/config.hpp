#pragma once

// Experiment configuration: a text file of `key = value` lines; `#` starts a
// comment, blank lines are ignored, list values are comma separated.
//
//   dataset          mnist | fmnist | svhn          (default mnist)
//   data_root        dataset root, overrides $INSTANTFT_DATA
//   checkpoint       pretrained base model path
//   methods          list of ft-all, ft-last, ft-bias, lora-all, lora-last, instantft
//   angles           rotation angles in degrees, each one of 0, 15, ..., 90
//   samples          fine-tuning set size |D|        (1024)
//   eval_samples     held-out evaluation set size    (1024)
//   rank lr epochs batch                             (4, 0.1, 10, 20)
//   seed             first seed                      (1)
//   seeds            number of seeds, seed .. seed+seeds-1   (10)
//   cache_mode       off | fp32 | nf4, InstantFT runs only   (fp32)
//   arithmetic       float | fixed, InstantFT runs only      (float)
//   threads          worker cap                      (1)
//   out              output directory                (out)
//   eval_every_epoch true | false                    (false)
//   pretrain_epochs pretrain_lr pretrain_batch       (10, 0.1, 20)
//
// Command-line flags are applied after the file and take precedence.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "instantft/engine.hpp"

namespace instantft {

struct ExperimentConfig {
  std::string dataset = "mnist";
  std::string data_root;
  std::string checkpoint;
  std::vector<Method> methods = {Method::kInstantFt};
  std::vector<double> angles = {90.0};
  Index samples = 1024;
  Index eval_samples = 1024;
  Index rank = 4;
  double lr = 0.1;
  int epochs = 10;
  Index batch = 20;
  std::uint64_t seed = 1;
  int seeds = 10;
  CacheMode cache_mode = CacheMode::kFp32;
  Arithmetic arithmetic = Arithmetic::kFloat;
  int threads = 1;
  std::string out = "out";
  bool eval_every_epoch = false;
  int pretrain_epochs = 10;
  double pretrain_lr = 0.1;
  Index pretrain_batch = 20;

  Variant variant() const;
  // Strategy settings for one method and seed; cache and arithmetic apply to InstantFT only.
  StrategyConfig strategy(Method method, std::uint64_t run_seed) const;
};

ExperimentConfig parse_config(std::string_view text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

// Sets one key; throws ConfigError on an unknown key or bad value.
void set_config_value(ExperimentConfig& c, std::string_view key, std::string_view value);

// Throws ConfigError unless every field is in range and combinations are valid.
void validate(const ExperimentConfig& c);

// Canonical `key = value` rendering; parse_config(render_config(c)) == c.
std::string render_config(const ExperimentConfig& c);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace instantft
