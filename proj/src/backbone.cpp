#include "pcdepth/backbone.hpp"

#include <stdexcept>

namespace pcdepth::backbone {

void check_input_size(int height, int width) {
  if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0) {
    throw std::invalid_argument("pad input to multiple of 16 (got " + std::to_string(height) + "x" +
                                std::to_string(width) + ")");
  }
}

FeatureExtractor::ConvBlock FeatureExtractor::conv_block(nn::ParamStore& store, const std::string& name, int in,
                                                         int out, int stride, Rng& rng) {
  return {nn::make_conv(store, name + ".conv", in, out, 3, stride, rng), nn::make_group_norm(store, name + ".norm", out)};
}

FeatureExtractor::ResBlock FeatureExtractor::res_block(nn::ParamStore& store, const std::string& name, int channels,
                                                       Rng& rng) {
  ResBlock r;
  r.first = conv_block(store, name + ".a", channels, channels, 1, rng);
  r.conv = nn::make_conv(store, name + ".b.conv", channels, channels, 3, 1, rng);
  r.norm = nn::make_group_norm(store, name + ".b.norm", channels);
  return r;
}

FeatureExtractor::FeatureExtractor(nn::ParamStore& store, const std::string& prefix, int in_channels,
                                   std::array<int, 3> widths, int out_channels, Rng& rng)
    : in_channels_(in_channels) {
  stem1_ = conv_block(store, prefix + ".stem1", in_channels, widths[0], 2, rng);
  stem2_ = conv_block(store, prefix + ".stem2", widths[0], widths[0], 2, rng);
  res1_ = res_block(store, prefix + ".res1", widths[0], rng);
  down2_ = conv_block(store, prefix + ".down2", widths[0], widths[1], 2, rng);
  res2_ = res_block(store, prefix + ".res2", widths[1], rng);
  down3_ = conv_block(store, prefix + ".down3", widths[1], widths[2], 2, rng);
  res3_ = res_block(store, prefix + ".res3", widths[2], rng);
  for (int i = 0; i < 3; ++i) {
    heads_[static_cast<std::size_t>(i)] =
        nn::make_conv(store, prefix + ".head" + std::to_string(i + 1), widths[static_cast<std::size_t>(i)], out_channels, 1, 1, rng);
  }
}

FeaturePyramid FeatureExtractor::operator()(const Var& input) const {
  if (input.ndim() != 3 || input.dim(0) != in_channels_)
    throw std::invalid_argument("FeatureExtractor: expected [" + std::to_string(in_channels_) + ", H, W], got " +
                                ag::shape_str(input.shape()));
  check_input_size(input.dim(1), input.dim(2));
  const Var s4 = res1_(stem2_(stem1_(input)));
  const Var s8 = res2_(down2_(s4));
  const Var s16 = res3_(down3_(s8));
  return {{heads_[0](s4), heads_[1](s8), heads_[2](s16)}};
}

PixelDecoder::PixelDecoder(nn::ParamStore& store, const std::string& prefix, int feature_channels, int embed_dim,
                           Rng& rng) {
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string lvl = std::to_string(i + 1);
    fuse_[i] = nn::make_conv(store, prefix + ".fuse" + lvl, 2 * feature_channels, feature_channels, 1, 1, rng);
    lateral_[i] = nn::make_conv(store, prefix + ".lateral" + lvl, feature_channels, embed_dim, 1, 1, rng);
    smooth_[i] = nn::make_conv(store, prefix + ".smooth" + lvl, embed_dim, embed_dim, 3, 1, rng);
    norm_[i] = nn::make_group_norm(store, prefix + ".norm" + lvl, embed_dim);
  }
}

PixelEmbeddings PixelDecoder::operator()(const FeaturePyramid& image, const FeaturePyramid& events) const {
  std::array<Var, 3> fused;
  for (std::size_t i = 0; i < 3; ++i) {
    const Var& a = image.levels[i];
    const Var& b = events.levels[i];
    if (a.shape() != b.shape())
      throw std::invalid_argument("PixelDecoder: misaligned pyramids at level " + std::to_string(i + 1) + ": " +
                                  ag::shape_str(a.shape()) + " vs " + ag::shape_str(b.shape()));
    fused[i] = lateral_[i](fuse_[i](ag::concat({a, b})));
  }
  // Top-down pathway, coarsest first.
  Var t16 = fused[2];
  Var t8 = ag::add(fused[1], ag::upsample_bilinear(t16, 2));
  Var t4 = ag::add(fused[0], ag::upsample_bilinear(t8, 2));
  const std::array<Var, 3> tops{t4, t8, t16};
  PixelEmbeddings out;
  for (std::size_t i = 0; i < 3; ++i) out.levels[i] = ag::silu(norm_[i](smooth_[i](tops[i])));
  return out;
}

}  // namespace pcdepth::backbone
