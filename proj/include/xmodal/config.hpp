#ifndef XMODAL_CONFIG_HPP_
#define XMODAL_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "xmodal/data.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/network.hpp"

namespace xmodal {

struct OptimizerSettings {
  double lr_specific = 0.01;
  double lr_shared = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double decay_factor = 0.1;
  int decay_every_epochs = 7;
};

/// Switch set of the ablation table. use_parts=false collapses the part
/// split to a single band.
struct AblationSwitches {
  bool use_relation = true;
  bool relation_only = false;
  bool use_multi_level = true;
  bool use_parts = true;
  MetricLoss loss = MetricLoss::kCq;
};

struct RunConfig {
  SynthDatasetSpec data;
  std::uint64_t eval_sample_seed = 2;
  std::size_t eval_images_per_identity = 8;
  MTMFEConfig model;
  LossConfig loss;
  OptimizerSettings optim;
  AblationSwitches ablation;
  std::size_t n_ids = 8;
  std::size_t k = 4;
  int epochs = 15;
  std::size_t batches_per_epoch = 50;
  double flip_probability = 0.5;
  // Leading epochs trained on the identification terms alone. Stands in
  // for starting from a discriminative (pretrained) backbone; 0 runs the
  // full objective from the first step.
  int id_warmup_epochs = 0;
  std::uint64_t seed = 1;
  EvalMode eval_mode = EvalMode::kSingleShot;
  QueryDirection eval_direction = QueryDirection::kIrToRgb;
  std::size_t eval_shots = 4;
  std::size_t eval_redraws = 10;
  std::size_t ablation_seeds = 5;
  std::string ablation_rows = "all";

  /// Model config with image shape and identity count taken from the data
  /// spec and the ablation switches applied.
  MTMFEConfig resolved_model() const;
  SynthDatasetSpec train_spec() const { return data; }
  SynthDatasetSpec eval_spec() const;
  EvalOptions eval_options() const;
  void validate() const;
};

/// Flat `key = value` text; `#` starts a comment. Unknown keys and
/// malformed values raise ConfigError naming the key.
RunConfig parse_run_config(std::istream& is, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);
/// Every key with its resolved value, parseable by parse_run_config.
std::string format_run_config(const RunConfig& config);

}  // namespace xmodal

#endif  // XMODAL_CONFIG_HPP_
