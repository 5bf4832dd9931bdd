#pragma once

// Standard depth metrics over valid pixels, reported in the usual column
// order a1 a2 a3 REL RMS RMSlog.

#include "pcdepth/objective.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pcdepth::metrics {

struct MetricReport {
  double a1 = 0, a2 = 0, a3 = 0;
  double rel = 0, rms = 0, rmslog = 0;
  std::size_t n_valid = 0;

  // Per-pixel sums kept so that reports can be merged pixel-weighted.
  struct Moments {
    double inliers[3] = {0, 0, 0};
    double abs_rel = 0;
    double sq = 0;
    double sq_log = 0;
  } sums;
};

struct EvalOptions {
  // Pixels whose ground truth exceeds this are excluded.
  std::optional<double> max_depth;
};

// Throws objective::EmptySupervision when no pixel is valid.
MetricReport evaluate(std::span<const double> prediction, const objective::GroundTruth& gt,
                      const EvalOptions& options = {});

// Pixel-weighted combination; throws on an empty list.
MetricReport aggregate(const std::vector<MetricReport>& reports);

std::string header_row();
std::string format_row(const MetricReport& r);
std::string csv_header();
std::string csv_row(const std::string& label, const MetricReport& r);

}  // namespace pcdepth::metrics
