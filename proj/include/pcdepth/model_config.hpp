#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace pcdepth {

enum class FusionStyle { score, add };
enum class ScoreGranularity { token, element };

std::string to_string(FusionStyle f);
std::string to_string(ScoreGranularity g);
FusionStyle parse_fusion_style(const std::string& s);
ScoreGranularity parse_score_granularity(const std::string& s);

struct ModelConfig {
  int time_bins = 3;  // voxel grid channels B
  int image_channels = 3;
  std::array<int, 3> widths{32, 64, 96};  // extractor stage widths
  int feature_channels = 64;              // per-level pyramid channels
  int token_count = 32;                   // N
  int token_dim = 128;                    // C
  int heads = 1;
  int discretize_iters = 4;  // G1
  int refine_iters = 4;      // G2
  int hidden_channels = 64;  // GRU state channels
  int gru_layers = 2;
  int prediction_scale = 8;  // 4, 8 or 16
  double initial_depth = 0.5;  // normalised depth the stage head starts from
  FusionStyle fusion = FusionStyle::score;
  ScoreGranularity score_granularity = ScoreGranularity::element;
  std::uint64_t seed = 0;  // parameter and token initialisation

  bool operator==(const ModelConfig&) const = default;

  // Throws std::invalid_argument describing the first inconsistency.
  void validate() const;
};

}  // namespace pcdepth
