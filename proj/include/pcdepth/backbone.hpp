#pragma once

// Dual convolutional feature extractors and the shared FPN-style decoder that
// turns the concatenated image/event pyramids into pixel embeddings.

#include "pcdepth/nn.hpp"

#include <array>
#include <string>

namespace pcdepth::backbone {

using ag::Var;

// Levels at 1/4, 1/8 and 1/16 of the input resolution, each [C_f, h, w].
struct FeaturePyramid {
  std::array<Var, 3> levels;
};

// Levels at 1/4, 1/8 and 1/16, each with the token dimension C.
struct PixelEmbeddings {
  std::array<Var, 3> levels;
};

// Throws std::invalid_argument("pad input to multiple of 16") otherwise.
void check_input_size(int height, int width);

class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(nn::ParamStore& store, const std::string& prefix, int in_channels,
                   std::array<int, 3> widths, int out_channels, Rng& rng);

  // input: [in_channels, H, W], H and W divisible by 16.
  FeaturePyramid operator()(const Var& input) const;

 private:
  struct ConvBlock {
    nn::Conv2d conv;
    nn::GroupNorm norm;
    Var operator()(const Var& x) const { return ag::silu(norm(conv(x))); }
  };
  struct ResBlock {
    ConvBlock first;
    nn::Conv2d conv;
    nn::GroupNorm norm;
    Var operator()(const Var& x) const { return ag::silu(ag::add(x, norm(conv(first(x))))); }
  };

  static ConvBlock conv_block(nn::ParamStore& store, const std::string& name, int in, int out, int stride, Rng& rng);
  static ResBlock res_block(nn::ParamStore& store, const std::string& name, int channels, Rng& rng);

  int in_channels_ = 0;
  ConvBlock stem1_, stem2_, down2_, down3_;
  ResBlock res1_, res2_, res3_;
  std::array<nn::Conv2d, 3> heads_;
};

class PixelDecoder {
 public:
  PixelDecoder() = default;
  PixelDecoder(nn::ParamStore& store, const std::string& prefix, int feature_channels, int embed_dim, Rng& rng);

  // Concatenates image then event features per level (order matters).
  PixelEmbeddings operator()(const FeaturePyramid& image, const FeaturePyramid& events) const;

 private:
  std::array<nn::Conv2d, 3> fuse_;
  std::array<nn::Conv2d, 3> lateral_;
  std::array<nn::Conv2d, 3> smooth_;
  std::array<nn::GroupNorm, 3> norm_;
};

}  // namespace pcdepth::backbone
