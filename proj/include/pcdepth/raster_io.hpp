#pragma once

// Plain image/depth containers and their on-disk formats:
//   DPT1 depth raster: <"DPT1", u32 H, u32 W, u32 reserved=0> + float32 H*W
//   VOX1 voxel raster: <"VOX1", u32 B, u32 H, u32 W> + float32 B*H*W
//   PPM (P6) colour images, PGM (P5) greyscale dumps.

#include "pcdepth/eventrep.hpp"

#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace pcdepth {

// Planar [C][H][W] values in [0, 1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;
};

struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // metres (or normalised log depth for stage dumps)
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_depth(const DepthMap& depth, const std::filesystem::path& path);
DepthMap read_depth(const std::filesystem::path& path);

void write_voxels(const eventrep::VoxelGrid& grid, const std::filesystem::path& path);
eventrep::VoxelGrid read_voxels(const std::filesystem::path& path);

void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

// Linearly maps [lo, hi] to 0..255.
void write_pgm(std::span<const double> values, int height, int width, double lo, double hi,
               const std::filesystem::path& path);

}  // namespace pcdepth
