#include "pcdepth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace pcdepth::metrics {

namespace {

void finish(MetricReport& r) {
  const double n = static_cast<double>(r.n_valid);
  r.a1 = r.sums.inliers[0] / n;
  r.a2 = r.sums.inliers[1] / n;
  r.a3 = r.sums.inliers[2] / n;
  r.rel = r.sums.abs_rel / n;
  r.rms = std::sqrt(r.sums.sq / n);
  r.rmslog = std::sqrt(r.sums.sq_log / n);
}

}  // namespace

MetricReport evaluate(std::span<const double> prediction, const objective::GroundTruth& gt,
                      const EvalOptions& options) {
  if (prediction.size() != gt.depth.size() || gt.valid.size() != gt.depth.size())
    throw std::invalid_argument("evaluate: prediction and ground truth differ in size");
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  MetricReport r;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    if (!gt.valid[i]) continue;
    const double g = gt.depth[i], d = prediction[i];
    if (options.max_depth && g > *options.max_depth) continue;
    if (!(d > 0) || !(g > 0)) throw std::domain_error("evaluate: nonpositive depth at pixel " + std::to_string(i));
    const double ratio = std::max(d / g, g / d);
    r.sums.inliers[0] += ratio < t1;
    r.sums.inliers[1] += ratio < t2;
    r.sums.inliers[2] += ratio < t3;
    r.sums.abs_rel += std::abs(d - g) / g;
    r.sums.sq += (d - g) * (d - g);
    const double dl = std::log(d) - std::log(g);
    r.sums.sq_log += dl * dl;
    ++r.n_valid;
  }
  if (r.n_valid == 0) throw objective::EmptySupervision();
  finish(r);
  return r;
}

MetricReport aggregate(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
  MetricReport r;
  for (const auto& x : reports) {
    for (int i = 0; i < 3; ++i) r.sums.inliers[i] += x.sums.inliers[i];
    r.sums.abs_rel += x.sums.abs_rel;
    r.sums.sq += x.sums.sq;
    r.sums.sq_log += x.sums.sq_log;
    r.n_valid += x.n_valid;
  }
  if (r.n_valid == 0) throw objective::EmptySupervision();
  finish(r);
  return r;
}

std::string header_row() {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%8s %8s %8s %8s %8s %8s", "a1", "a2", "a3", "REL", "RMS", "RMSlog");
  return buf;
}

std::string format_row(const MetricReport& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%8.4f %8.4f %8.4f %8.4f %8.4f %8.4f", r.a1, r.a2, r.a3, r.rel, r.rms, r.rmslog);
  return buf;
}

std::string csv_header() { return "split,a1,a2,a3,rel,rms,rmslog,n_valid"; }

std::string csv_row(const std::string& label, const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%zu", label.c_str(), r.a1, r.a2, r.a3, r.rel,
                r.rms, r.rmslog, r.n_valid);
  return buf;
}

}  // namespace pcdepth::metrics
