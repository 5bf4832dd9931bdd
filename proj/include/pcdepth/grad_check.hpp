#pragma once

// Central finite-difference check of end-to-end loss gradients.

#include "pcdepth/config.hpp"
#include "pcdepth/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pcdepth::grad_check {

struct Options {
  int entries_per_tensor = 0;  // sampled entries per parameter tensor; 0 = all
  double step = 4e-3;
  // Relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

struct TensorResult {
  std::string name;
  int checked = 0;
  double max_rel_error = 0;
  double max_abs_error = 0;
};

struct Report {
  std::vector<TensorResult> tensors;
  double max_rel_error = 0;
  std::string worst;  // tensor holding the largest error
  int checked = 0;
  bool passed = false;
};

double relative_error(double analytic, double numeric, double floor);

// Checks d(multi-stage loss)/d(parameter) on one sample.
Report check_model(const model::PCDepthNet& net, const RunConfig& cfg, const model::Inputs& inputs,
                   const objective::GroundTruth& gt, const Options& options);

// Micro configuration on a 16x16 synthetic sample.
Report run(const Options& options = {});

}  // namespace pcdepth::grad_check
