#pragma once

// Normalised log depth <-> metric depth, and the multi-stage scale-invariant
// log loss over sparse ground truth.

#include "pcdepth/autograd.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace pcdepth::objective {

struct DepthPriors {
  double d_min = 2.0;   // metres
  double d_max = 80.0;  // metres

  void validate() const;
  // d_max / d_min: slope of log depth w.r.t. the normalised value.
  double log_slope() const { return d_max / d_min; }
  bool operator==(const DepthPriors&) const = default;
};

struct LossConfig {
  double alpha = 10.0;
  double lambda = 0.15;
  double gamma = 0.8;
  int stages = 4;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

struct GroundTruth {
  int height = 0;
  int width = 0;
  std::vector<double> depth;        // metres
  std::vector<std::uint8_t> valid;  // nonzero where supervised

  std::size_t valid_count() const;
  // Dense ground truth with every pixel valid.
  static GroundTruth dense(int height, int width, std::vector<double> depth);
};

class EmptySupervision : public std::runtime_error {
 public:
  EmptySupervision() : std::runtime_error("empty supervision") {}
};

// d = d_max * exp((d_max / d_min) * (dhat - 1))
double denormalize(double dhat, const DepthPriors& priors);
std::vector<double> denormalize(std::span<const double> dhat, const DepthPriors& priors);

// Inverse of denormalize, clamped to [0, 1]. Throws on nonpositive depth.
double normalize(double depth, const DepthPriors& priors);
std::vector<double> normalize(std::span<const double> depth, const DepthPriors& priors);

// log(denormalize(dhat)) without the round trip through exp.
double log_depth(double dhat, const DepthPriors& priors);

struct SilogValue {
  double loss = 0;      // alpha * sqrt(V + lambda * E^2)
  double variance = 0;  // V(delta), population form
  double mean = 0;      // E(delta)
  std::vector<double> grad;  // d loss / d delta_i for each supplied delta
};

// delta holds log errors of the supervised pixels only.
SilogValue silog_from_log_errors(std::span<const double> delta, double alpha, double lambda);

// Metric prediction vs ground truth over valid pixels.
double silog(std::span<const double> prediction, const GroundTruth& gt, const LossConfig& cfg);

// gamma^(G2 - j) for j = 1..G2; the final stage has weight exactly 1.
std::vector<double> stage_weights(int stages, double gamma);

// Metric predictions per stage.
double multi_stage_loss(const std::vector<std::vector<double>>& stages, const GroundTruth& gt, const LossConfig& cfg);

// ---- differentiable forms over normalised predictions --------------------

// dhat: [1, H, W] normalised log depth.
ag::Var silog_normalized(const ag::Var& dhat, const GroundTruth& gt, const DepthPriors& priors,
                         const LossConfig& cfg);

struct StageLoss {
  ag::Var total;
  std::vector<double> silog;     // unweighted per-stage values
  std::vector<double> weights;
};

StageLoss multi_stage_loss(const std::vector<ag::Var>& stages, const GroundTruth& gt, const DepthPriors& priors,
                           const LossConfig& cfg);

}  // namespace pcdepth::objective
