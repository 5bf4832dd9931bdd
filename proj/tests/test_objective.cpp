#include "pcdepth/objective.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pcdepth;
using namespace pcdepth::objective;

namespace {

// Direct two-pass evaluation of alpha * sqrt(V + lambda * E^2) over valid pixels.
double silog_oracle(const std::vector<double>& pred, const GroundTruth& gt, double alpha = 10, double lambda = 0.15) {
  std::vector<double> d;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (gt.valid[i]) d.push_back(std::log(pred[i]) - std::log(gt.depth[i]));
  double e = 0;
  for (double x : d) e += x;
  e /= static_cast<double>(d.size());
  double v = 0;
  for (double x : d) v += (x - e) * (x - e);
  v /= static_cast<double>(d.size());
  return alpha * std::sqrt(v + lambda * e * e);
}

GroundTruth random_gt(Rng& rng, int h, int w, double invalid_fraction) {
  std::vector<double> depth(static_cast<std::size_t>(h * w));
  for (auto& d : depth) d = rng.uniform(2.5, 70.0);
  auto gt = GroundTruth::dense(h, w, depth);
  for (auto& v : gt.valid) v = rng.uniform(0, 1) < invalid_fraction ? 0 : 1;
  gt.valid[0] = 1;
  return gt;
}

}  // namespace

TEST(Denormalize, HandValues) {
  const DepthPriors p;
  EXPECT_EQ(denormalize(1.0, p), 80.0);
  EXPECT_NEAR(denormalize(0.975, p), 80.0 / std::exp(1.0), 1e-12);
  EXPECT_NEAR(denormalize(0.975, p), 29.430, 5e-4);
}

TEST(Denormalize, Monotone) {
  const DepthPriors p;
  double prev = 0;
  for (int i = 0; i <= 1000; ++i) {
    const double d = denormalize(i / 1000.0, p);
    EXPECT_GT(d, prev);
    prev = d;
  }
}

TEST(Denormalize, InvalidPriorsAreRejected) {
  EXPECT_THROW(denormalize(0.5, DepthPriors{5.0, 5.0}), std::invalid_argument);
  EXPECT_THROW(denormalize(0.5, DepthPriors{0.0, 5.0}), std::invalid_argument);
}

TEST(Normalize, InverseClampAndErrors) {
  const DepthPriors p;
  EXPECT_EQ(normalize(80.0, p), 1.0);
  EXPECT_EQ(normalize(500.0, p), 1.0);
  EXPECT_EQ(normalize(1e-30, p), 0.0);
  EXPECT_THROW(normalize(0.0, p), std::domain_error);
  EXPECT_THROW(normalize(-1.0, p), std::domain_error);
  Rng rng(1);
  const double lo = p.d_max * std::exp(-p.d_max / p.d_min);
  for (int i = 0; i < 1000; ++i) {
    const double d = std::exp(rng.uniform(std::log(lo), std::log(p.d_max)));
    EXPECT_NEAR(denormalize(normalize(d, p), p) / d, 1.0, 1e-9);
  }
}

TEST(Silog, ZeroOnExactPrediction) {
  const auto gt = GroundTruth::dense(1, 3, {3.0, 7.0, 11.0});
  EXPECT_EQ(silog(gt.depth, gt, LossConfig{}), 0.0);
}

TEST(Silog, HandCase) {
  const auto gt = GroundTruth::dense(1, 2, {1.0, 1.0});
  const std::vector<double> pred = {std::exp(1.0), std::exp(1.0)};
  EXPECT_NEAR(silog(pred, gt, LossConfig{}), 10 * std::sqrt(0.15), 1e-12);
  EXPECT_NEAR(silog(pred, gt, LossConfig{}), 3.8730, 1e-4);
}

TEST(Silog, MatchesTwoPassOracle) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto gt = random_gt(rng, 4, 5, 0.3);
    std::vector<double> pred(20);
    for (auto& x : pred) x = rng.uniform(2.0, 80.0);
    EXPECT_NEAR(silog(pred, gt, LossConfig{}), silog_oracle(pred, gt), 1e-12);
  }
}

TEST(Silog, ScaleShiftOnlyMovesTheMeanTerm) {
  Rng rng(3);
  const auto gt = random_gt(rng, 3, 3, 0.0);
  std::vector<double> pred(9);
  for (auto& x : pred) x = rng.uniform(2.0, 80.0);
  std::vector<double> d;
  for (std::size_t i = 0; i < 9; ++i) d.push_back(std::log(pred[i] / gt.depth[i]));
  const auto base = silog_from_log_errors(d, 10, 0.15);
  for (double c : {0.5, 2.0, 7.0}) {
    std::vector<double> scaled = pred;
    for (auto& x : scaled) x *= c;
    const double expect = 10 * std::sqrt(base.variance + 0.15 * std::pow(base.mean + std::log(c), 2));
    EXPECT_NEAR(silog(scaled, gt, LossConfig{}), expect, 1e-10);
    std::vector<double> ds;
    for (std::size_t i = 0; i < 9; ++i) ds.push_back(std::log(scaled[i] / gt.depth[i]));
    EXPECT_NEAR(silog_from_log_errors(ds, 10, 0.15).variance, base.variance, 1e-12);
  }
}

TEST(Silog, NonnegativeOnRandomInputs) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> d(static_cast<std::size_t>(rng.uniform_int(1, 10)));
    for (auto& x : d) x = rng.normal(0, 2);
    EXPECT_GE(silog_from_log_errors(d, 10, rng.uniform(0, 1)).loss, 0.0);
  }
}

TEST(Silog, EmptySupervision) {
  auto gt = GroundTruth::dense(1, 2, {1.0, 2.0});
  gt.valid = {0, 0};
  try {
    silog(std::vector<double>{1.0, 2.0}, gt, LossConfig{});
    FAIL();
  } catch (const EmptySupervision& e) {
    EXPECT_STREQ(e.what(), "empty supervision");
  }
}

TEST(StageWeights, GeometricSchedule) {
  const auto w = stage_weights(4, 0.8);
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(w[0], 0.512);
  EXPECT_EQ(w[1], 0.64);
  EXPECT_EQ(w[2], 0.8);
  EXPECT_EQ(w[3], 1.0);
  EXPECT_NEAR(w[0] + w[1] + w[2] + w[3], 2.952, 1e-12);
  EXPECT_EQ(stage_weights(1, 0.8), std::vector<double>{1.0});
}

TEST(MultiStageLoss, IdenticalStagesAndSingleStage) {
  Rng rng(5);
  const auto gt = random_gt(rng, 3, 4, 0.2);
  std::vector<double> pred(12);
  for (auto& x : pred) x = rng.uniform(2.0, 80.0);
  const double s = silog(pred, gt, LossConfig{});
  EXPECT_NEAR(multi_stage_loss({pred, pred, pred, pred}, gt, LossConfig{}), 2.952 * s, 1e-12);
  LossConfig one;
  one.stages = 1;
  EXPECT_EQ(multi_stage_loss({pred}, gt, one), s);
  EXPECT_THROW(multi_stage_loss({pred, pred}, gt, LossConfig{}), std::invalid_argument);
}

TEST(MultiStageLoss, NormalizedFormAgreesWithMetricForm) {
  Rng rng(6);
  const DepthPriors priors;
  const auto gt = random_gt(rng, 3, 4, 0.2);
  std::vector<ag::Var> stages;
  std::vector<std::vector<double>> metric;
  for (int j = 0; j < 4; ++j) {
    std::vector<double> dhat(12);
    for (auto& x : dhat) x = rng.uniform(0.93, 1.0);
    stages.push_back(ag::Var::constant({1, 3, 4}, dhat));
    metric.push_back(denormalize(dhat, priors));
  }
  const auto sl = multi_stage_loss(stages, gt, priors, LossConfig{});
  EXPECT_NEAR(sl.total.item(), multi_stage_loss(metric, gt, LossConfig{}), 1e-10);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(sl.silog[static_cast<std::size_t>(j)], silog_oracle(metric[static_cast<std::size_t>(j)], gt), 1e-10);
}

TEST(MultiStageLoss, InvalidPixelsDoNotAffectLoss) {
  Rng rng(7);
  const DepthPriors priors;
  const auto gt = random_gt(rng, 4, 4, 0.4);
  std::vector<double> dhat(16);
  for (auto& x : dhat) x = rng.uniform(0.93, 1.0);
  LossConfig one;
  one.stages = 1;
  const double base = multi_stage_loss({ag::Var::constant({1, 4, 4}, dhat)}, gt, priors, one).total.item();
  for (std::size_t i = 0; i < 16; ++i) {
    if (gt.valid[i]) continue;
    auto flipped = dhat;
    flipped[i] = 1.0 - flipped[i];
    const double l = multi_stage_loss({ag::Var::constant({1, 4, 4}, flipped)}, gt, priors, one).total.item();
    EXPECT_EQ(l, base);
  }
}

TEST(MultiStageLoss, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  const DepthPriors priors;
  const auto gt = random_gt(rng, 3, 3, 0.3);
  std::vector<ag::Var> stages;
  for (int j = 0; j < 4; ++j) {
    std::vector<double> dhat(9);
    for (auto& x : dhat) x = rng.uniform(0.93, 1.0);
    stages.push_back(ag::Var::parameter({1, 3, 3}, dhat));
  }
  const double err = testutil::max_grad_error(
      [&] { return multi_stage_loss(stages, gt, priors, LossConfig{}).total; }, stages, 1e-6);
  EXPECT_LT(err, 1e-4);
}
