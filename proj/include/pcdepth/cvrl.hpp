#pragma once

// Complementary visual representation learning: each modality's feature
// pyramid is discretised into N tokens by iterative multi-scale transposed
// attention, and the two token sets are merged by learned score maps.

#include "pcdepth/backbone.hpp"
#include "pcdepth/model_config.hpp"
#include "pcdepth/nn.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace pcdepth::cvrl {

using ag::Var;

// [N, C] token matrix.
struct TokenSet {
  Var tokens;

  int count() const { return tokens.dim(0); }
  int dim() const { return tokens.dim(1); }
};

// Per-element modality weights; image + events == 1 everywhere.
struct ScorePair {
  Var image;
  Var events;
};

// I.i.d. standard normal [n, c] matrix, reproducible per seed.
TokenSet init_tokens(int n, int c, std::uint64_t seed);

struct TransposedAttention {
  Var output;      // [N, Cv]
  Var weights;     // [heads*N, M]; each row sums to 1 over pixels
  Var assignment;  // [heads*N, M]; each column (per head) sums to 1 over tokens
};

// Tokens compete for pixels: softmax over the token axis of QK^T/sqrt(d),
// then each token's pixel weights are renormalised to sum to one and used to
// average V. q: [N, C], k: [M, C], v: [M, Cv].
TransposedAttention transposed_attention(const Var& q, const Var& k, const Var& v, int heads = 1);

struct Attention {
  Var output;   // [Nq, Cv]
  Var weights;  // [heads*Nq, Nk]; rows sum to 1 over keys
};

// Standard scaled dot-product attention, softmax over keys.
Attention attention(const Var& q, const Var& k, const Var& v, int heads = 1);

// One discretisation iteration for one modality:
//   VR += mean_i transAttn(VR, F^i);  VR += MLP(VR)
class Discretizer {
 public:
  struct Step {
    TokenSet tokens;
    std::array<Var, 3> weights;  // per-level pixel weights
  };

  Discretizer() = default;
  Discretizer(nn::ParamStore& store, const std::string& prefix, int feature_channels, int token_dim, int heads,
              Rng& rng);

  Step operator()(const backbone::FeaturePyramid& pyramid, const TokenSet& tokens) const;

 private:
  nn::LayerNorm norm_in_;
  nn::Linear to_q_;
  std::array<nn::Linear, 3> to_k_, to_v_;
  nn::LayerNorm norm_mlp_;
  nn::Mlp mlp_;
  int heads_ = 1;
};

// Residual cross-attention: query set attends to the other set.
class CrossAttention {
 public:
  CrossAttention() = default;
  CrossAttention(nn::ParamStore& store, const std::string& prefix, int dim, int heads, Rng& rng);

  Var operator()(const Var& query, const Var& context) const;

 private:
  nn::LayerNorm norm_q_, norm_kv_;
  nn::Linear to_q_, to_k_, to_v_;
  int heads_ = 1;
};

class ScoreFusion {
 public:
  struct Result {
    TokenSet fused;
    ScorePair scores;
    TokenSet enhanced_image;
    TokenSet enhanced_events;
  };

  ScoreFusion() = default;
  ScoreFusion(nn::ParamStore& store, const std::string& prefix, int dim, int heads, FusionStyle style,
              ScoreGranularity granularity, Rng& rng);

  // With FusionStyle::add the scores are constant 0.5 and fused is the plain
  // sum of the enhanced sets.
  Result operator()(const TokenSet& image, const TokenSet& events) const;

 private:
  CrossAttention image_from_events_, events_from_image_;
  nn::Linear trunk_;
  nn::Linear head_image_, head_events_;
  FusionStyle style_ = FusionStyle::score;
  ScoreGranularity granularity_ = ScoreGranularity::element;
};

class ComplementaryTokens {
 public:
  struct Output {
    TokenSet tokens;
    std::vector<ScorePair> scores;                      // one per iteration
    std::vector<std::array<Var, 3>> image_weights;      // per iteration, per level
    std::vector<std::array<Var, 3>> event_weights;
  };

  ComplementaryTokens() = default;
  ComplementaryTokens(nn::ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);

  // Both branches start every iteration from the previous fused set.
  Output operator()(const backbone::FeaturePyramid& image, const backbone::FeaturePyramid& events,
                    int iterations) const;

  const Var& initial_tokens() const { return initial_; }

 private:
  Var initial_;
  Discretizer image_, events_;
  ScoreFusion fusion_;
};

}  // namespace pcdepth::cvrl
