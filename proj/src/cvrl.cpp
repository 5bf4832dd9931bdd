#include "pcdepth/cvrl.hpp"

#include <cmath>
#include <stdexcept>

namespace pcdepth::cvrl {

namespace {

void check_heads(const char* op, int dim, int heads) {
  if (heads <= 0 || dim % heads != 0)
    throw std::invalid_argument(std::string(op) + ": dimension " + std::to_string(dim) +
                                " not divisible by head count " + std::to_string(heads));
}

}  // namespace

TokenSet init_tokens(int n, int c, std::uint64_t seed) {
  if (n <= 0 || c <= 0) throw std::invalid_argument("init_tokens: N and C must be positive");
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(n) * c);
  for (auto& x : v) x = rng.normal();
  return {Var::constant({n, c}, std::move(v))};
}

TransposedAttention transposed_attention(const Var& q, const Var& k, const Var& v, int heads) {
  if (k.ndim() != 2 || k.dim(0) == 0) throw std::invalid_argument("transposed_attention: zero pixels");
  if (q.ndim() != 2 || q.dim(1) != k.dim(1) || v.ndim() != 2 || v.dim(0) != k.dim(0))
    throw std::invalid_argument("transposed_attention: shape mismatch q" + ag::shape_str(q.shape()) + " k" +
                                ag::shape_str(k.shape()) + " v" + ag::shape_str(v.shape()));
  check_heads("transposed_attention", q.dim(1), heads);
  check_heads("transposed_attention", v.dim(1), heads);
  const int dq = q.dim(1) / heads, dv = v.dim(1) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dq));

  std::vector<Var> outs, weights, assigns;
  for (int h = 0; h < heads; ++h) {
    const Var qh = heads == 1 ? q : ag::slice_cols(q, h * dq, dq);
    const Var kh = heads == 1 ? k : ag::slice_cols(k, h * dq, dq);
    const Var vh = heads == 1 ? v : ag::slice_cols(v, h * dv, dv);
    const Var logits = ag::scale(ag::matmul_nt(qh, kh), scale);  // [N, M]
    const Var assign = ag::softmax_cols(logits);                 // over tokens
    const Var w = ag::normalize_rows(assign);                    // over pixels
    outs.push_back(ag::matmul(w, vh));
    weights.push_back(w);
    assigns.push_back(assign);
  }
  if (heads == 1) return {outs[0], weights[0], assigns[0]};
  return {ag::concat_cols(outs), ag::concat(weights), ag::concat(assigns)};
}

Attention attention(const Var& q, const Var& k, const Var& v, int heads) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2 || q.dim(1) != k.dim(1) || v.dim(0) != k.dim(0))
    throw std::invalid_argument("attention: shape mismatch");
  check_heads("attention", q.dim(1), heads);
  check_heads("attention", v.dim(1), heads);
  const int dq = q.dim(1) / heads, dv = v.dim(1) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dq));
  std::vector<Var> outs, weights;
  for (int h = 0; h < heads; ++h) {
    const Var qh = heads == 1 ? q : ag::slice_cols(q, h * dq, dq);
    const Var kh = heads == 1 ? k : ag::slice_cols(k, h * dq, dq);
    const Var vh = heads == 1 ? v : ag::slice_cols(v, h * dv, dv);
    const Var w = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), scale));
    outs.push_back(ag::matmul(w, vh));
    weights.push_back(w);
  }
  if (heads == 1) return {outs[0], weights[0]};
  return {ag::concat_cols(outs), ag::concat(weights)};
}

// ---- Discretizer ----------------------------------------------------------

Discretizer::Discretizer(nn::ParamStore& store, const std::string& prefix, int feature_channels, int token_dim,
                         int heads, Rng& rng)
    : heads_(heads) {
  check_heads("Discretizer", token_dim, heads);
  norm_in_ = nn::make_layer_norm(store, prefix + ".norm_in", token_dim);
  to_q_ = nn::make_linear(store, prefix + ".to_q", token_dim, token_dim, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string lvl = std::to_string(i + 1);
    to_k_[i] = nn::make_linear(store, prefix + ".to_k" + lvl, feature_channels, token_dim, rng);
    to_v_[i] = nn::make_linear(store, prefix + ".to_v" + lvl, feature_channels, token_dim, rng);
  }
  norm_mlp_ = nn::make_layer_norm(store, prefix + ".norm_mlp", token_dim);
  mlp_ = nn::make_mlp(store, prefix + ".mlp", token_dim, token_dim, token_dim, rng);
}

Discretizer::Step Discretizer::operator()(const backbone::FeaturePyramid& pyramid, const TokenSet& tokens) const {
  const int dim = tokens.dim();
  if (dim != to_q_.weight.dim(0)) throw std::invalid_argument("Discretizer: token dimension mismatch");
  const Var q = to_q_(norm_in_(tokens.tokens));
  Step step;
  Var update;
  for (std::size_t i = 0; i < 3; ++i) {
    const Var& level = pyramid.levels[i];
    if (!level.defined() || level.ndim() != 3 || level.dim(0) != to_k_[i].weight.dim(0))
      throw std::invalid_argument("Discretizer: pyramid level " + std::to_string(i + 1) + " has wrong shape");
    const Var rows = ag::image_to_rows(level);
    auto r = transposed_attention(q, to_k_[i](rows), to_v_[i](rows), heads_);
    update = update.defined() ? ag::add(update, r.output) : r.output;
    step.weights[i] = r.weights;
  }
  Var vr = ag::add(tokens.tokens, ag::scale(update, 1.0 / 3.0));
  vr = ag::add(vr, mlp_(norm_mlp_(vr)));
  step.tokens = {vr};
  return step;
}

// ---- fusion ---------------------------------------------------------------

CrossAttention::CrossAttention(nn::ParamStore& store, const std::string& prefix, int dim, int heads, Rng& rng)
    : heads_(heads) {
  norm_q_ = nn::make_layer_norm(store, prefix + ".norm_q", dim);
  norm_kv_ = nn::make_layer_norm(store, prefix + ".norm_kv", dim);
  to_q_ = nn::make_linear(store, prefix + ".to_q", dim, dim, rng);
  to_k_ = nn::make_linear(store, prefix + ".to_k", dim, dim, rng);
  to_v_ = nn::make_linear(store, prefix + ".to_v", dim, dim, rng);
}

Var CrossAttention::operator()(const Var& query, const Var& context) const {
  const Var kv = norm_kv_(context);
  auto r = attention(to_q_(norm_q_(query)), to_k_(kv), to_v_(kv), heads_);
  return ag::add(query, r.output);
}

ScoreFusion::ScoreFusion(nn::ParamStore& store, const std::string& prefix, int dim, int heads, FusionStyle style,
                         ScoreGranularity granularity, Rng& rng)
    : style_(style), granularity_(granularity) {
  image_from_events_ = CrossAttention(store, prefix + ".enhance_image", dim, heads, rng);
  events_from_image_ = CrossAttention(store, prefix + ".enhance_events", dim, heads, rng);
  if (style_ == FusionStyle::score) {
    const int out = granularity_ == ScoreGranularity::element ? dim : 1;
    trunk_ = nn::make_linear(store, prefix + ".score_trunk", dim, dim, rng);
    head_image_ = nn::make_linear(store, prefix + ".score_image", dim, out, rng);
    head_events_ = nn::make_linear(store, prefix + ".score_events", dim, out, rng);
  }
}

ScoreFusion::Result ScoreFusion::operator()(const TokenSet& image, const TokenSet& events) const {
  if (image.tokens.shape() != events.tokens.shape())
    throw std::invalid_argument("ScoreFusion: token sets differ in shape " + ag::shape_str(image.tokens.shape()) +
                                " vs " + ag::shape_str(events.tokens.shape()));
  Result r;
  r.enhanced_image = {image_from_events_(image.tokens, events.tokens)};
  r.enhanced_events = {events_from_image_(events.tokens, image.tokens)};
  const Var& ei = r.enhanced_image.tokens;
  const Var& ee = r.enhanced_events.tokens;

  if (style_ == FusionStyle::add) {
    r.fused = {ag::add(ei, ee)};
    const Var half = Var::constant(ei.shape(), 0.5);
    r.scores = {half, half};
    return r;
  }

  const Var hidden = ag::gelu(trunk_(ag::add(ei, ee)));
  // Two-way softmax over the modality axis == sigmoid of the logit gap.
  Var s_img = ag::sigmoid(ag::sub(head_image_(hidden), head_events_(hidden)));
  if (granularity_ == ScoreGranularity::token) s_img = ag::expand_cols(s_img, ei.dim(1));
  const Var s_evt = ag::one_minus(s_img);
  r.scores = {s_img, s_evt};
  r.fused = {ag::add(ag::mul(s_img, ei), ag::mul(s_evt, ee))};
  return r;
}

// ---- full module ----------------------------------------------------------

ComplementaryTokens::ComplementaryTokens(nn::ParamStore& store, const std::string& prefix, const ModelConfig& cfg,
                                         Rng& rng) {
  const TokenSet init = init_tokens(cfg.token_count, cfg.token_dim, mix_seed(cfg.seed, 0x70C));
  initial_ = store.create(prefix + ".initial_tokens", init.tokens.shape(), init.tokens.value());
  image_ = Discretizer(store, prefix + ".image", cfg.feature_channels, cfg.token_dim, cfg.heads, rng);
  events_ = Discretizer(store, prefix + ".events", cfg.feature_channels, cfg.token_dim, cfg.heads, rng);
  fusion_ = ScoreFusion(store, prefix + ".fusion", cfg.token_dim, cfg.heads, cfg.fusion, cfg.score_granularity, rng);
}

ComplementaryTokens::Output ComplementaryTokens::operator()(const backbone::FeaturePyramid& image,
                                                            const backbone::FeaturePyramid& events,
                                                            int iterations) const {
  if (iterations < 1) throw std::invalid_argument("ComplementaryTokens: need at least one iteration");
  Output out;
  TokenSet vr{initial_};
  for (int k = 0; k < iterations; ++k) {
    auto img = image_(image, vr);
    auto evt = events_(events, vr);
    auto fused = fusion_(img.tokens, evt.tokens);
    out.scores.push_back(fused.scores);
    out.image_weights.push_back(img.weights);
    out.event_weights.push_back(evt.weights);
    vr = fused.fused;
  }
  out.tokens = vr;
  return out;
}

}  // namespace pcdepth::cvrl
