#include "pcdepth/grad_check.hpp"

#include "pcdepth/harness.hpp"
#include "pcdepth/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace pcdepth::grad_check {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace {

double loss_value(const model::PCDepthNet& net, const RunConfig& cfg, const model::Inputs& inputs,
                  const objective::GroundTruth& gt) {
  ag::NoGradGuard guard;
  const auto out = net.forward(inputs);
  return objective::multi_stage_loss(out.depth.stages, gt, cfg.priors, cfg.loss).total.item();
}

}  // namespace

Report check_model(const model::PCDepthNet& net, const RunConfig& cfg, const model::Inputs& inputs,
                   const objective::GroundTruth& gt, const Options& options) {
  // The parameter values are mutated in place and restored; the store is
  // logically unchanged on return.
  auto& store = const_cast<nn::ParamStore&>(net.params());
  store.zero_grad();
  {
    const auto out = net.forward(inputs);
    objective::multi_stage_loss(out.depth.stages, gt, cfg.priors, cfg.loss).total.backward();
  }

  Report report;
  std::mt19937_64 rng(options.seed);
  for (const auto& e : store.entries()) {
    ag::Var p = e.var;
    const std::vector<double> analytic = p.grad();
    std::vector<std::size_t> idx(p.numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (options.entries_per_tensor > 0 && idx.size() > static_cast<std::size_t>(options.entries_per_tensor)) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(options.entries_per_tensor));
      std::sort(idx.begin(), idx.end());
    }
    TensorResult tr;
    tr.name = e.name;
    for (std::size_t k : idx) {
      auto& w = p.mutable_value();
      const double orig = w[k];
      auto at = [&](double offset) {
        w[k] = orig + offset;
        return loss_value(net, cfg, inputs, gt);
      };
      const double h = options.step;
      // Sixth-order central stencil: a larger step keeps rounding noise in the
      // loss from dominating small gradients.
      const double numeric =
          (45.0 * (at(h) - at(-h)) - 9.0 * (at(2 * h) - at(-2 * h)) + (at(3 * h) - at(-3 * h))) / (60.0 * h);
      w[k] = orig;
      tr.max_rel_error = std::max(tr.max_rel_error, relative_error(analytic[k], numeric, options.floor));
      tr.max_abs_error = std::max(tr.max_abs_error, std::abs(analytic[k] - numeric));
      ++tr.checked;
    }
    report.checked += tr.checked;
    if (tr.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = tr.max_rel_error;
      report.worst = tr.name;
    }
    report.tensors.push_back(tr);
  }
  store.zero_grad();
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

Report run(const Options& options) {
  RunConfig cfg = preset("micro");
  synthdata::SceneSpec spec;
  spec.seed = options.seed;
  spec.height = 16;
  spec.width = 16;
  spec.n_objects = 1;
  const auto sample = synthdata::make_sample(spec, 0);
  const model::PCDepthNet net(cfg.model);
  const auto inputs = model::prepare_inputs(sample.image, harness::voxelize_for_model(sample.events, cfg.model.time_bins));
  return check_model(net, cfg, inputs, sample.gt, options);
}

}  // namespace pcdepth::grad_check
