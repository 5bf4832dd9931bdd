#pragma once

// RunConfig: every hyperparameter of a run, stored as a flat `key = value`
// text file. Lines starting with '#' are comments.

#include "pcdepth/model_config.hpp"
#include "pcdepth/objective.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pcdepth {

struct OptimConfig {
  double lr = 2e-4;  // peak of the one-cycle schedule
  int steps = 2000;
  int batch = 1;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  int checkpoint_every = 0;  // 0: only the final checkpoint

  bool operator==(const OptimConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  objective::DepthPriors priors;
  objective::LossConfig loss;  // loss.stages mirrors model.refine_iters
  OptimConfig optim;
  std::uint64_t seed = 0;  // sample order
  std::string train_manifest;
  std::string eval_manifest;
  std::string output_dir = "run";
  std::optional<double> max_eval_depth;

  bool operator==(const RunConfig&) const = default;

  // Keeps derived fields consistent (loss stages follow refine_iters).
  void sync();
  // Throws std::invalid_argument on the first inconsistency.
  void validate() const;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Named starting points: "default" (full-size), "tiny" (desk-scale training)
// and "micro" (gradient checking).
RunConfig preset(const std::string& name);

std::string serialize(const RunConfig& cfg);
RunConfig parse_config(const std::string& text, const RunConfig& base = {});
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);
// Accepts "key=value" strings.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

std::vector<std::string> config_keys();

}  // namespace pcdepth
