#include "pcdepth/model.hpp"

#include <cmath>
#include <stdexcept>

namespace pcdepth::model {

Inputs prepare_inputs(const Image& image, const eventrep::VoxelGrid& grid) {
  if (image.height != grid.sensor.height || image.width != grid.sensor.width)
    throw std::invalid_argument("sensor size mismatch: image " + std::to_string(image.height) + "x" +
                                std::to_string(image.width) + ", events " + std::to_string(grid.sensor.height) + "x" +
                                std::to_string(grid.sensor.width));
  backbone::check_input_size(image.height, image.width);
  std::vector<double> img(image.data.size());
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = 2.0 * image.data[i] - 1.0;

  double sq = 0;
  std::size_t nz = 0;
  for (double v : grid.data) {
    if (v != 0) {
      sq += v * v;
      ++nz;
    }
  }
  std::vector<double> vox = grid.data;
  if (nz > 0) {
    const double inv = 1.0 / std::sqrt(sq / static_cast<double>(nz));
    for (auto& v : vox) v *= inv;
  }
  return {Var::constant({image.channels, image.height, image.width}, std::move(img)),
          Var::constant({grid.time_bins, grid.sensor.height, grid.sensor.width}, std::move(vox))};
}

PCDepthNet::PCDepthNet(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(cfg_.seed, 1));
  image_encoder_ = backbone::FeatureExtractor(store_, "image_encoder", cfg_.image_channels, cfg_.widths,
                                              cfg_.feature_channels, rng);
  event_encoder_ = backbone::FeatureExtractor(store_, "event_encoder", cfg_.time_bins, cfg_.widths,
                                              cfg_.feature_channels, rng);
  decoder_ = backbone::PixelDecoder(store_, "decoder", cfg_.feature_channels, cfg_.token_dim, rng);
  tokens_ = cvrl::ComplementaryTokens(store_, "cvrl", cfg_, rng);
  estimator_ = estimator::RefinedEstimator(store_, "estimator", cfg_.token_dim, cfg_.token_dim,
                                           cfg_.hidden_channels, cfg_.gru_layers, cfg_.prediction_scale, rng,
                                           cfg_.initial_depth);
}

ForwardOutput PCDepthNet::forward(const Inputs& inputs) const {
  if (inputs.image.dim(0) != cfg_.image_channels || inputs.voxels.dim(0) != cfg_.time_bins)
    throw std::invalid_argument("forward: expected " + std::to_string(cfg_.image_channels) + " image channels and " +
                                std::to_string(cfg_.time_bins) + " time bins");
  const auto f_img = image_encoder_(inputs.image);
  const auto f_evt = event_encoder_(inputs.voxels);
  const auto emb = decoder_(f_img, f_evt);
  ForwardOutput out;
  out.tokens = tokens_(f_img, f_evt, cfg_.discretize_iters);
  out.depth = estimator_(emb, out.tokens.tokens, cfg_.refine_iters);
  return out;
}

double mean_event_score(const ForwardOutput& out) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& pair : out.tokens.scores) {
    for (double v : pair.events.value()) s += v;
    n += pair.events.numel();
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

std::vector<std::vector<double>> token_attention_maps(const ForwardOutput& out) {
  if (out.tokens.image_weights.empty()) return {};
  const Var& wi = out.tokens.image_weights.back()[0];
  const Var& we = out.tokens.event_weights.back()[0];
  const int n = wi.dim(0), m = wi.dim(1);
  std::vector<std::vector<double>> maps(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(m)));
  for (int t = 0; t < n; ++t)
    for (int p = 0; p < m; ++p) {
      const std::size_t k = static_cast<std::size_t>(t) * m + p;
      maps[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] = 0.5 * (wi.value()[k] + we.value()[k]);
    }
  return maps;
}

}  // namespace pcdepth::model
