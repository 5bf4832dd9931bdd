#include "pcdepth/estimator.hpp"

#include <cmath>
#include <stdexcept>

namespace pcdepth::estimator {

namespace {

constexpr std::array<int, 3> kLevelScales{4, 8, 16};

void check_scale(int scale) {
  if (scale != 4 && scale != 8 && scale != 16)
    throw std::invalid_argument("prediction scale must be 4, 8 or 16, got " + std::to_string(scale));
}

int collapsed_channels(int embed_dim, int scale) {
  int c = 0;
  for (int l : kLevelScales) c += l < scale ? embed_dim * (scale / l) * (scale / l) : embed_dim;
  return c;
}

}  // namespace

Var gather_to_scale(const backbone::PixelEmbeddings& embeddings, int scale) {
  check_scale(scale);
  std::vector<Var> parts;
  for (std::size_t i = 0; i < 3; ++i) {
    const Var& lvl = embeddings.levels[i];
    if (!lvl.defined()) throw std::invalid_argument("collapse: expected 3 embedding levels");
    const int l = kLevelScales[i];
    if (l < scale) {
      parts.push_back(ag::pixel_unshuffle(lvl, scale / l));
    } else if (l > scale) {
      parts.push_back(ag::upsample_bilinear(lvl, l / scale));
    } else {
      parts.push_back(lvl);
    }
  }
  for (const auto& p : parts) {
    if (p.dim(1) != parts[0].dim(1) || p.dim(2) != parts[0].dim(2))
      throw std::invalid_argument("collapse: embedding levels are not at 1/4, 1/8, 1/16");
  }
  return ag::concat(parts);
}

Collapse::Collapse(nn::ParamStore& store, const std::string& prefix, int embed_dim, int hidden, int scale, Rng& rng)
    : scale_(scale) {
  check_scale(scale);
  proj_ = nn::make_conv(store, prefix + ".proj", collapsed_channels(embed_dim, scale), hidden, 1, 1, rng);
}

Var Collapse::operator()(const backbone::PixelEmbeddings& embeddings) const {
  return proj_(gather_to_scale(embeddings, scale_));
}

TokenProjector::TokenProjector(nn::ParamStore& store, const std::string& prefix, int hidden, int token_dim,
                               Rng& rng) {
  to_q_ = nn::make_conv(store, prefix + ".to_q", hidden, token_dim, 1, 1, rng);
  norm_ = nn::make_layer_norm(store, prefix + ".norm", token_dim);
  to_k_ = nn::make_linear(store, prefix + ".to_k", token_dim, token_dim, rng);
  to_v_ = nn::make_linear(store, prefix + ".to_v", token_dim, token_dim, rng);
}

TokenProjector::Result TokenProjector::operator()(const HiddenState& state, const cvrl::TokenSet& tokens) const {
  const int h = state.h.dim(1), w = state.h.dim(2);
  const Var q = ag::image_to_rows(to_q_(state.h));  // [hw, C]
  const Var kv = norm_(tokens.tokens);
  auto r = cvrl::attention(q, to_k_(kv), to_v_(kv));
  return {ag::rows_to_image(r.output, h, w), r.weights};
}

ConvGru::ConvGru(nn::ParamStore& store, const std::string& prefix, int hidden, int input, Rng& rng) {
  gate_z_ = nn::make_conv(store, prefix + ".z", hidden + input, hidden, 3, 1, rng);
  gate_r_ = nn::make_conv(store, prefix + ".r", hidden + input, hidden, 3, 1, rng);
  candidate_ = nn::make_conv(store, prefix + ".q", hidden + input, hidden, 3, 1, rng);
}

HiddenState ConvGru::operator()(const HiddenState& state, const Var& input) const {
  const Var& h = state.h;
  if (h.dim(1) != input.dim(1) || h.dim(2) != input.dim(2))
    throw std::invalid_argument("ConvGru: hidden " + ag::shape_str(h.shape()) + " and input " +
                                ag::shape_str(input.shape()) + " are not aligned");
  const Var hx = ag::concat({h, input});
  const Var z = ag::sigmoid(gate_z_(hx));
  const Var r = ag::sigmoid(gate_r_(hx));
  const Var cand = ag::tanh(candidate_(ag::concat({ag::mul(r, h), input})));
  return {ag::add(ag::mul(ag::one_minus(z), h), ag::mul(z, cand))};
}

StageHead::StageHead(nn::ParamStore& store, const std::string& prefix, int hidden, int scale, Rng& rng,
                     double initial_depth)
    : scale_(scale) {
  check_scale(scale);
  if (!(initial_depth > 0 && initial_depth < 1)) throw std::invalid_argument("initial depth must lie in (0, 1)");
  depth1_ = nn::make_conv(store, prefix + ".depth1", hidden, hidden, 3, 1, rng);
  depth2_ = nn::make_conv(store, prefix + ".depth2", hidden, 1, 3, 1, rng);
  depth2_.bias.mutable_value()[0] = nn::round_f32(std::log(initial_depth / (1 - initial_depth)));
  mask1_ = nn::make_conv(store, prefix + ".mask1", hidden, hidden, 3, 1, rng);
  mask2_ = nn::make_conv(store, prefix + ".mask2", hidden, 9 * scale * scale, 1, 1, rng);
}

StagePrediction StageHead::operator()(const HiddenState& state) const {
  return {ag::sigmoid(depth2_(ag::silu(depth1_(state.h)))), mask2_(ag::silu(mask1_(state.h)))};
}

RefinedEstimator::RefinedEstimator(nn::ParamStore& store, const std::string& prefix, int embed_dim, int token_dim,
                                   int hidden, int gru_layers, int scale, Rng& rng, double initial_depth) {
  if (gru_layers < 1) throw std::invalid_argument("RefinedEstimator: need at least one GRU layer");
  collapse_ = Collapse(store, prefix + ".collapse", embed_dim, hidden, scale, rng);
  projector_ = TokenProjector(store, prefix + ".project", hidden, token_dim, rng);
  for (int i = 0; i < gru_layers; ++i)
    cells_.emplace_back(store, prefix + ".gru" + std::to_string(i + 1), hidden, token_dim, rng);
  head_ = StageHead(store, prefix + ".head", hidden, scale, rng, initial_depth);
}

DepthPrediction RefinedEstimator::operator()(const backbone::PixelEmbeddings& embeddings,
                                             const cvrl::TokenSet& tokens, int stages) const {
  if (stages < 1) throw std::invalid_argument("RefinedEstimator: need at least one stage");
  HiddenState state{ag::tanh(collapse_(embeddings))};
  DepthPrediction out;
  for (int j = 0; j < stages; ++j) {
    const Var p = projector_(state, tokens).features;
    for (const auto& cell : cells_) state = cell(state, p);
    const StagePrediction pred = head_(state);
    out.coarse.push_back(pred.coarse);
    out.stages.push_back(ag::convex_upsample(pred.coarse, pred.mask, head_.scale()));
  }
  return out;
}

}  // namespace pcdepth::estimator
