#include "pcdepth/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

namespace pcdepth::objective {

void DepthPriors::validate() const {
  if (!(d_min > 0) || !(d_max > d_min))
    throw std::invalid_argument("depth priors must satisfy 0 < d_min < d_max (got d_min=" + std::to_string(d_min) +
                                ", d_max=" + std::to_string(d_max) + ")");
}

void LossConfig::validate() const {
  if (!(alpha > 0)) throw std::invalid_argument("loss alpha must be positive");
  if (!(lambda >= 0 && lambda <= 1)) throw std::invalid_argument("loss lambda must lie in [0, 1]");
  if (!(gamma > 0 && gamma <= 1)) throw std::invalid_argument("loss gamma must lie in (0, 1]");
  if (stages < 1) throw std::invalid_argument("loss needs at least one stage");
}

std::size_t GroundTruth::valid_count() const {
  return static_cast<std::size_t>(std::count_if(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; }));
}

GroundTruth GroundTruth::dense(int height, int width, std::vector<double> depth) {
  GroundTruth gt;
  gt.height = height;
  gt.width = width;
  gt.valid.assign(depth.size(), 1);
  gt.depth = std::move(depth);
  return gt;
}

double denormalize(double dhat, const DepthPriors& priors) {
  priors.validate();
  if (dhat == 1.0) return priors.d_max;
  return priors.d_max * std::exp(priors.log_slope() * (dhat - 1.0));
}

std::vector<double> denormalize(std::span<const double> dhat, const DepthPriors& priors) {
  std::vector<double> out(dhat.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = denormalize(dhat[i], priors);
  return out;
}

double normalize(double depth, const DepthPriors& priors) {
  priors.validate();
  if (!(depth > 0)) throw std::domain_error("normalize: nonpositive depth " + std::to_string(depth));
  if (depth >= priors.d_max) return 1.0;
  return std::clamp(1.0 + std::log(depth / priors.d_max) / priors.log_slope(), 0.0, 1.0);
}

std::vector<double> normalize(std::span<const double> depth, const DepthPriors& priors) {
  std::vector<double> out(depth.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = normalize(depth[i], priors);
  return out;
}

double log_depth(double dhat, const DepthPriors& priors) {
  return std::log(priors.d_max) + priors.log_slope() * (dhat - 1.0);
}

SilogValue silog_from_log_errors(std::span<const double> delta, double alpha, double lambda) {
  if (delta.empty()) throw EmptySupervision();
  const double n = static_cast<double>(delta.size());
  SilogValue out;
  double s = 0;
  for (double d : delta) s += d;
  out.mean = s / n;
  double v = 0;
  for (double d : delta) v += (d - out.mean) * (d - out.mean);
  out.variance = v / n;
  const double q = out.variance + lambda * out.mean * out.mean;
  const double root = std::sqrt(q);
  out.loss = alpha * root;
  out.grad.assign(delta.size(), 0.0);
  if (root > 0) {
    // dQ/d delta_i = 2 (delta_i - E) / n + 2 lambda E / n
    const double c = alpha / (2.0 * root);
    for (std::size_t i = 0; i < delta.size(); ++i)
      out.grad[i] = c * (2.0 * (delta[i] - out.mean) + 2.0 * lambda * out.mean) / n;
  }
  return out;
}

double silog(std::span<const double> prediction, const GroundTruth& gt, const LossConfig& cfg) {
  if (prediction.size() != gt.depth.size()) throw std::invalid_argument("silog: prediction and ground truth differ in size");
  std::vector<double> delta;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    if (!gt.valid[i]) continue;
    delta.push_back(std::log(prediction[i]) - std::log(gt.depth[i]));
  }
  return silog_from_log_errors(delta, cfg.alpha, cfg.lambda).loss;
}

std::vector<double> stage_weights(int stages, double gamma) {
  if (stages < 1) throw std::invalid_argument("stage_weights: need at least one stage");
  std::vector<double> w(static_cast<std::size_t>(stages));
  // Rounded to 15 significant digits so that decimal gammas give the decimal
  // powers (0.8^3 == 0.512) rather than a value one ulp away.
  for (int j = 1; j <= stages; ++j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.15g", std::pow(gamma, stages - j));
    w[static_cast<std::size_t>(j - 1)] = std::strtod(buf, nullptr);
  }
  return w;
}

double multi_stage_loss(const std::vector<std::vector<double>>& stages, const GroundTruth& gt, const LossConfig& cfg) {
  if (static_cast<int>(stages.size()) != cfg.stages)
    throw std::invalid_argument("multi_stage_loss: expected " + std::to_string(cfg.stages) + " stages, got " +
                                std::to_string(stages.size()));
  const auto w = stage_weights(cfg.stages, cfg.gamma);
  double total = 0;
  for (std::size_t j = 0; j < stages.size(); ++j) total += w[j] * silog(stages[j], gt, cfg);
  return total;
}

ag::Var silog_normalized(const ag::Var& dhat, const GroundTruth& gt, const DepthPriors& priors,
                         const LossConfig& cfg) {
  if (dhat.numel() != gt.depth.size())
    throw std::invalid_argument("silog: prediction " + ag::shape_str(dhat.shape()) + " does not match ground truth " +
                                std::to_string(gt.height) + "x" + std::to_string(gt.width));
  std::vector<double> delta;
  std::vector<std::size_t> where;
  const auto& v = dhat.value();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!gt.valid[i]) continue;
    delta.push_back(log_depth(v[i], priors) - std::log(gt.depth[i]));
    where.push_back(i);
  }
  const SilogValue s = silog_from_log_errors(delta, cfg.alpha, cfg.lambda);
  std::vector<double> grad(v.size(), 0.0);
  for (std::size_t k = 0; k < where.size(); ++k) grad[where[k]] = s.grad[k] * priors.log_slope();
  return ag::custom_scalar(dhat, s.loss, std::move(grad));
}

StageLoss multi_stage_loss(const std::vector<ag::Var>& stages, const GroundTruth& gt, const DepthPriors& priors,
                           const LossConfig& cfg) {
  if (static_cast<int>(stages.size()) != cfg.stages)
    throw std::invalid_argument("multi_stage_loss: expected " + std::to_string(cfg.stages) + " stages, got " +
                                std::to_string(stages.size()));
  StageLoss out;
  out.weights = stage_weights(cfg.stages, cfg.gamma);
  for (std::size_t j = 0; j < stages.size(); ++j) {
    const ag::Var s = silog_normalized(stages[j], gt, priors, cfg);
    out.silog.push_back(s.item());
    const ag::Var weighted = ag::scale(s, out.weights[j]);
    out.total = out.total.defined() ? ag::add(out.total, weighted) : weighted;
  }
  return out;
}

}  // namespace pcdepth::objective
