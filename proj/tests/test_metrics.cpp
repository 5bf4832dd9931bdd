#include "pcdepth/metrics.hpp"

#include "pcdepth/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pcdepth;
using namespace pcdepth::metrics;
using objective::GroundTruth;

namespace {

struct Oracle {
  double a[3] = {0, 0, 0};
  double rel = 0, rms = 0, rmslog = 0;
};

Oracle loop_oracle(const std::vector<double>& pred, const GroundTruth& gt) {
  Oracle o;
  int n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!gt.valid[i]) continue;
    ++n;
    const double d = pred[i], g = gt.depth[i];
    const double ratio = std::max(d / g, g / d);
    if (ratio < 1.25) o.a[0] += 1;
    if (ratio < 1.25 * 1.25) o.a[1] += 1;
    if (ratio < 1.25 * 1.25 * 1.25) o.a[2] += 1;
    o.rel += std::abs(d - g) / g;
    o.rms += (d - g) * (d - g);
    o.rmslog += (std::log(d) - std::log(g)) * (std::log(d) - std::log(g));
  }
  for (double& a : o.a) a /= n;
  o.rel /= n;
  o.rms = std::sqrt(o.rms / n);
  o.rmslog = std::sqrt(o.rmslog / n);
  return o;
}

}  // namespace

TEST(Metrics, PerfectPrediction) {
  const auto gt = GroundTruth::dense(1, 3, {1.0, 5.0, 40.0});
  const auto r = evaluate(gt.depth, gt);
  EXPECT_EQ(r.a1, 1.0);
  EXPECT_EQ(r.a2, 1.0);
  EXPECT_EQ(r.a3, 1.0);
  EXPECT_EQ(r.rel, 0.0);
  EXPECT_EQ(r.rms, 0.0);
  EXPECT_EQ(r.rmslog, 0.0);
  EXPECT_EQ(r.n_valid, 3u);
}

TEST(Metrics, DoubleDepthHandCase) {
  const auto r = evaluate(std::vector<double>{2.0}, GroundTruth::dense(1, 1, {1.0}));
  EXPECT_DOUBLE_EQ(r.rel, 1.0);
  EXPECT_DOUBLE_EQ(r.rms, 1.0);
  EXPECT_NEAR(r.rmslog, 0.6931, 1e-4);
  EXPECT_EQ(r.a1, 0.0);
  EXPECT_EQ(r.a2, 0.0);
  EXPECT_EQ(r.a3, 0.0);
}

TEST(Metrics, SmallErrorHandCase) {
  const auto r = evaluate(std::vector<double>{1.2}, GroundTruth::dense(1, 1, {1.0}));
  EXPECT_EQ(r.a1, 1.0);
  EXPECT_EQ(r.a3, 1.0);
  EXPECT_NEAR(r.rel, 0.2, 1e-12);
}

TEST(Metrics, ThresholdIsStrict) {
  const auto r = evaluate(std::vector<double>{1.25}, GroundTruth::dense(1, 1, {1.0}));
  EXPECT_EQ(r.a1, 0.0);
  EXPECT_EQ(r.a2, 1.0);
}

TEST(Metrics, MatchesLoopOracleOnRandomMaps) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> depth(64), pred(64);
    for (auto& d : depth) d = rng.uniform(1.0, 50.0);
    for (std::size_t i = 0; i < 64; ++i) pred[i] = depth[i] * std::exp(rng.normal(0, 0.3));
    auto gt = GroundTruth::dense(8, 8, depth);
    for (auto& v : gt.valid) v = rng.uniform(0, 1) < 0.8;
    gt.valid[5] = 1;
    const auto r = evaluate(pred, gt);
    const auto o = loop_oracle(pred, gt);
    EXPECT_NEAR(r.a1, o.a[0], 1e-9);
    EXPECT_NEAR(r.a2, o.a[1], 1e-9);
    EXPECT_NEAR(r.a3, o.a[2], 1e-9);
    EXPECT_NEAR(r.rel, o.rel, 1e-9);
    EXPECT_NEAR(r.rms, o.rms, 1e-9);
    EXPECT_NEAR(r.rmslog, o.rmslog, 1e-9);
    EXPECT_LE(r.a1, r.a2);
    EXPECT_LE(r.a2, r.a3);
  }
}

TEST(Metrics, InlierRatiosSymmetricUnderSwap) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> a(16), b(16);
    for (std::size_t i = 0; i < 16; ++i) {
      a[i] = rng.uniform(1, 20);
      b[i] = a[i] * std::exp(rng.normal(0, 0.4));
    }
    const auto ab = evaluate(a, GroundTruth::dense(4, 4, b));
    const auto ba = evaluate(b, GroundTruth::dense(4, 4, a));
    EXPECT_EQ(ab.a1, ba.a1);
    EXPECT_EQ(ab.a2, ba.a2);
    EXPECT_EQ(ab.a3, ba.a3);
  }
}

TEST(Metrics, MaxDepthExcludesFarPixels) {
  const auto gt = GroundTruth::dense(1, 2, {10.0, 100.0});
  EvalOptions opt;
  opt.max_depth = 50.0;
  const auto r = evaluate(std::vector<double>{10.0, 1.0}, gt, opt);
  EXPECT_EQ(r.n_valid, 1u);
  EXPECT_EQ(r.a1, 1.0);
}

TEST(Metrics, EmptyMaskIsAnError) {
  auto gt = GroundTruth::dense(1, 2, {1.0, 1.0});
  gt.valid = {0, 0};
  EXPECT_THROW(evaluate(std::vector<double>{1.0, 1.0}, gt), objective::EmptySupervision);
}

TEST(Aggregate, PixelWeightedRms) {
  const auto a = evaluate(std::vector<double>{3.0}, GroundTruth::dense(1, 1, {3.0}));
  const auto b = evaluate(std::vector<double>{5.0}, GroundTruth::dense(1, 1, {3.0}));
  const auto r = aggregate({a, b});
  EXPECT_NEAR(r.rms, std::sqrt(2.0), 1e-12);
  EXPECT_EQ(r.n_valid, 2u);
}

TEST(Aggregate, SingleAndRepeatedReports) {
  Rng rng(3);
  std::vector<double> depth(9), pred(9);
  for (std::size_t i = 0; i < 9; ++i) {
    depth[i] = rng.uniform(1, 10);
    pred[i] = depth[i] * std::exp(rng.normal(0, 0.3));
  }
  const auto r = evaluate(pred, GroundTruth::dense(3, 3, depth));
  for (const auto& agg : {aggregate({r}), aggregate({r, r})}) {
    EXPECT_NEAR(agg.a1, r.a1, 1e-15);
    EXPECT_NEAR(agg.rel, r.rel, 1e-15);
    EXPECT_NEAR(agg.rms, r.rms, 1e-15);
    EXPECT_NEAR(agg.rmslog, r.rmslog, 1e-15);
  }
  EXPECT_THROW(aggregate({}), std::invalid_argument);
}

TEST(Aggregate, PixelWeightingDiffersFromImageWeighting) {
  // One image with three perfect pixels, one with a single bad pixel.
  const auto a = evaluate(std::vector<double>{1.0, 1.0, 1.0}, GroundTruth::dense(1, 3, {1.0, 1.0, 1.0}));
  const auto b = evaluate(std::vector<double>{2.0}, GroundTruth::dense(1, 1, {1.0}));
  EXPECT_NEAR(aggregate({a, b}).rel, 0.25, 1e-15);
  EXPECT_NEAR(aggregate({a, b}).a1, 0.75, 1e-15);
}

TEST(Formatting, CsvHeaderAndColumns) {
  EXPECT_EQ(csv_header(), "split,a1,a2,a3,rel,rms,rmslog,n_valid");
  const auto r = evaluate(std::vector<double>{1.0}, GroundTruth::dense(1, 1, {1.0}));
  const auto row = csv_row("day", r);
  EXPECT_EQ(row.substr(0, 4), "day,");
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 7);
}
