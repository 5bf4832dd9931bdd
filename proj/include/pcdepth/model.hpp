#pragma once

// End-to-end network: dual extractors -> pixel decoder -> complementary token
// learning -> refined estimator.

#include "pcdepth/backbone.hpp"
#include "pcdepth/cvrl.hpp"
#include "pcdepth/estimator.hpp"
#include "pcdepth/eventrep.hpp"
#include "pcdepth/model_config.hpp"
#include "pcdepth/raster_io.hpp"

namespace pcdepth::model {

using ag::Var;

struct Inputs {
  Var image;   // [3, H, W], mapped to [-1, 1]
  Var voxels;  // [B, H, W], scaled by the RMS of the nonzero entries
};

Inputs prepare_inputs(const Image& image, const eventrep::VoxelGrid& grid);

struct ForwardOutput {
  estimator::DepthPrediction depth;
  cvrl::ComplementaryTokens::Output tokens;
};

class PCDepthNet {
 public:
  explicit PCDepthNet(const ModelConfig& cfg);
  PCDepthNet(const PCDepthNet&) = delete;
  PCDepthNet& operator=(const PCDepthNet&) = delete;

  ForwardOutput forward(const Inputs& inputs) const;
  ForwardOutput forward(const Image& image, const eventrep::VoxelGrid& grid) const {
    return forward(prepare_inputs(image, grid));
  }

  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  nn::ParamStore store_;
  backbone::FeatureExtractor image_encoder_, event_encoder_;
  backbone::PixelDecoder decoder_;
  cvrl::ComplementaryTokens tokens_;
  estimator::RefinedEstimator estimator_;
};

// Mean of the event-modality score over all iterations and elements.
double mean_event_score(const ForwardOutput& out);

// Final-iteration transposed-attention pixel weights at the finest level,
// averaged over the two modalities: N maps of size (H/4) x (W/4).
std::vector<std::vector<double>> token_attention_maps(const ForwardOutput& out);

}  // namespace pcdepth::model
