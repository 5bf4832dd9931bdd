#pragma once

// AdamW with a one-cycle (cosine) learning-rate schedule.

#include "pcdepth/config.hpp"
#include "pcdepth/nn.hpp"

#include <cstdint>
#include <vector>

namespace pcdepth::optim {

// Learning rate at `step` (0-based) of `total`: cosine warm-up from
// lr/div_factor to lr over pct_start of the run, then cosine annealing down
// to lr/(div_factor*final_div_factor).
double one_cycle_lr(int step, int total, const OptimConfig& cfg);

struct AdamState {
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m, v;  // one buffer per parameter, store order

  bool operator==(const AdamState&) const = default;
};

// Global L2 norm of all parameter gradients.
double grad_norm(const nn::ParamStore& store);

class AdamW {
 public:
  AdamW(nn::ParamStore& store, const OptimConfig& cfg);

  // One update with learning rate lr; gradients are multiplied by
  // grad_scale first. Weight decay applies to tensors of rank >= 2 only.
  // Parameters are rounded to float32 afterwards.
  void step(double lr, double grad_scale = 1.0);

  const AdamState& state() const { return state_; }
  void set_state(AdamState s);

 private:
  nn::ParamStore* store_;
  OptimConfig cfg_;
  AdamState state_;
};

}  // namespace pcdepth::optim
