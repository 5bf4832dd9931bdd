#pragma once

// Refined depth estimator: pixel embeddings are collapsed to one prediction
// scale, tokens are projected back through cross-attention and a
// convolutional GRU refines the hidden state over G2 stages. Each stage emits
// a normalised log-depth map, convex-upsampled to full resolution.

#include "pcdepth/backbone.hpp"
#include "pcdepth/cvrl.hpp"
#include "pcdepth/nn.hpp"

#include <vector>

namespace pcdepth::estimator {

using ag::Var;

struct HiddenState {
  Var h;  // [C_h, H/s, W/s]
};

struct StagePrediction {
  Var coarse;  // [1, h, w] in [0, 1]
  Var mask;    // [9 * s * s, h, w] convex-combination logits
};

struct DepthPrediction {
  std::vector<Var> stages;  // [1, H, W] normalised log depth, one per stage
  std::vector<Var> coarse;  // [1, H/s, W/s]
};

// Brings the three embedding levels to 1/scale: finer levels are
// pixel-unshuffled, coarser ones bilinearly upsampled, then concatenated.
Var gather_to_scale(const backbone::PixelEmbeddings& embeddings, int scale);

class Collapse {
 public:
  Collapse() = default;
  Collapse(nn::ParamStore& store, const std::string& prefix, int embed_dim, int hidden, int scale, Rng& rng);

  // P_0: [hidden, H/scale, W/scale]
  Var operator()(const backbone::PixelEmbeddings& embeddings) const;

 private:
  nn::Conv2d proj_;
  int scale_ = 8;
};

class TokenProjector {
 public:
  struct Result {
    Var features;  // [C, h, w]
    Var weights;   // [h*w, N]; rows sum to 1
  };

  TokenProjector() = default;
  TokenProjector(nn::ParamStore& store, const std::string& prefix, int hidden, int token_dim, Rng& rng);

  Result operator()(const HiddenState& state, const cvrl::TokenSet& tokens) const;

 private:
  nn::Conv2d to_q_;
  nn::LayerNorm norm_;
  nn::Linear to_k_, to_v_;
};

// h' = (1 - z) h + z tanh(W_q [r h, x]),  z, r = sigmoid(W [h, x])
class ConvGru {
 public:
  ConvGru() = default;
  ConvGru(nn::ParamStore& store, const std::string& prefix, int hidden, int input, Rng& rng);

  HiddenState operator()(const HiddenState& state, const Var& input) const;

 private:
  nn::Conv2d gate_z_, gate_r_, candidate_;
};

class StageHead {
 public:
  StageHead() = default;
  // The depth output starts near `initial_depth` (normalised) for any input
  // with small features.
  StageHead(nn::ParamStore& store, const std::string& prefix, int hidden, int scale, Rng& rng,
            double initial_depth = 0.5);

  StagePrediction operator()(const HiddenState& state) const;
  int scale() const { return scale_; }

 private:
  nn::Conv2d depth1_, depth2_, mask1_, mask2_;
  int scale_ = 8;
};

class RefinedEstimator {
 public:
  RefinedEstimator() = default;
  RefinedEstimator(nn::ParamStore& store, const std::string& prefix, int embed_dim, int token_dim, int hidden,
                   int gru_layers, int scale, Rng& rng, double initial_depth = 0.5);

  DepthPrediction operator()(const backbone::PixelEmbeddings& embeddings, const cvrl::TokenSet& tokens,
                             int stages) const;

  int scale() const { return head_.scale(); }

 private:
  Collapse collapse_;
  TokenProjector projector_;
  std::vector<ConvGru> cells_;
  StageHead head_;
};

}  // namespace pcdepth::estimator
