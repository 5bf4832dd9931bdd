#include "pcdepth/model_config.hpp"

#include <stdexcept>

namespace pcdepth {

std::string to_string(FusionStyle f) { return f == FusionStyle::score ? "score" : "add"; }

std::string to_string(ScoreGranularity g) { return g == ScoreGranularity::token ? "token" : "element"; }

FusionStyle parse_fusion_style(const std::string& s) {
  if (s == "score") return FusionStyle::score;
  if (s == "add") return FusionStyle::add;
  throw std::invalid_argument("fusion must be 'score' or 'add' (got '" + s + "')");
}

ScoreGranularity parse_score_granularity(const std::string& s) {
  if (s == "token") return ScoreGranularity::token;
  if (s == "element") return ScoreGranularity::element;
  throw std::invalid_argument("score_granularity must be 'token' or 'element' (got '" + s + "')");
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
  };
  need(time_bins >= 2, "time_bins must be at least 2");
  need(image_channels >= 1, "image_channels must be positive");
  for (int w : widths) need(w > 0, "extractor widths must be positive");
  need(feature_channels > 0, "feature_channels must be positive");
  need(token_count > 0, "token_count must be positive");
  need(token_dim > 0, "token_dim must be positive");
  need(heads > 0 && token_dim % heads == 0, "token_dim must be divisible by heads");
  need(discretize_iters >= 1, "discretize_iters must be at least 1");
  need(refine_iters >= 1, "refine_iters must be at least 1");
  need(hidden_channels > 0, "hidden_channels must be positive");
  need(gru_layers >= 1, "gru_layers must be at least 1");
  need(prediction_scale == 4 || prediction_scale == 8 || prediction_scale == 16,
       "prediction_scale must be 4, 8 or 16");
  need(initial_depth > 0 && initial_depth < 1, "initial_depth must lie in (0, 1)");
}

}  // namespace pcdepth
