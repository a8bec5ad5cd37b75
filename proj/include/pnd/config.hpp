#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pnd/fpr.hpp"
#include "pnd/losses.hpp"
#include "pnd/rpn.hpp"
#include "pnd/trainer.hpp"

namespace pnd {

// Ranges the phantom generator draws from, one draw per scan.
struct PhantomSettings {
  int size_min = 64;
  int size_max = 96;
  double spacing = 0.7;
  int nodules_min = 1;
  int nodules_max = 3;
  double diameter_min = 6.0;
  double diameter_max = 20.0;
  double contrast = 0.5;
  double noise_sigma = 0.05;
  double background_mean = 0.15;

  void validate() const;
};

struct EvalSettings {
  int train_count = 40;
  int heldout_count = 10;
  std::string model_name = "ours";
};

struct StageSchedule {
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<int> batch_size;
};

struct RunConfig {
  OptimizerConfig train;
  FocalLossConfig focal;
  RpnConfig stage1;
  StageSchedule stage1_schedule;
  FprConfig stage2;
  StageSchedule stage2_schedule;
  PhantomSettings phantom;
  EvalSettings eval;

  // [train] values with the stage's overrides applied.
  OptimizerConfig optimizer_for_stage(int stage) const;
  void validate() const;
};

// `key = value` lines under [train], [stage1], [stage2], [phantom], [eval].
// '#' starts a comment. Unknown sections or keys and malformed values raise
// ConfigError naming the line.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);

// Applies "section.key=value".
void apply_config_override(RunConfig& config, std::string_view assignment);

// One line per accepted key with its default, for --help.
std::string describe_config_keys();

}  // namespace pnd
