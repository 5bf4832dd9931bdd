#include "pcdepth/raster_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

namespace pcdepth {

namespace {

static_assert(std::endian::native == std::endian::little, "raster I/O assumes a little-endian host");

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[off + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

void put_floats(std::vector<std::uint8_t>& out, const std::vector<double>& values) {
  const std::size_t base = out.size();
  out.resize(base + 4 * values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::memcpy(out.data() + base + 4 * i, &f, 4);
  }
}

std::vector<double> get_floats(const std::vector<std::uint8_t>& in, std::size_t off, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    float f;
    std::memcpy(&f, in.data() + off + 4 * i, 4);
    out[i] = f;
  }
  return out;
}

// Reads the whitespace/comment separated header tokens of a PNM file.
std::size_t pnm_header(const std::vector<std::uint8_t>& bytes, std::vector<std::string>& tokens, int wanted) {
  std::size_t i = 0;
  while (static_cast<int>(tokens.size()) < wanted) {
    while (i < bytes.size() && std::isspace(bytes[i])) ++i;
    if (i < bytes.size() && bytes[i] == '#') {
      while (i < bytes.size() && bytes[i] != '\n') ++i;
      continue;
    }
    std::string tok;
    while (i < bytes.size() && !std::isspace(bytes[i])) tok.push_back(static_cast<char>(bytes[i++]));
    if (tok.empty()) throw FormatError("truncated PNM header");
    tokens.push_back(tok);
  }
  return i + 1;  // single whitespace byte before the raster
}

}  // namespace

void write_depth(const DepthMap& depth, const std::filesystem::path& path) {
  if (depth.data.size() != static_cast<std::size_t>(depth.height) * depth.width)
    throw std::invalid_argument("write_depth: data size does not match dimensions");
  std::vector<std::uint8_t> out{'D', 'P', 'T', '1'};
  put_u32(out, static_cast<std::uint32_t>(depth.height));
  put_u32(out, static_cast<std::uint32_t>(depth.width));
  put_u32(out, 0);
  put_floats(out, depth.data);
  dump(path, out);
}

DepthMap read_depth(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "DPT1", 4) != 0)
    throw FormatError(path.string() + ": not a DPT1 raster");
  DepthMap d;
  d.height = static_cast<int>(get_u32(bytes, 4));
  d.width = static_cast<int>(get_u32(bytes, 8));
  const std::size_t n = static_cast<std::size_t>(d.height) * d.width;
  if (bytes.size() != 16 + 4 * n) throw FormatError(path.string() + ": DPT1 size mismatch");
  d.data = get_floats(bytes, 16, n);
  return d;
}

void write_voxels(const eventrep::VoxelGrid& grid, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out{'V', 'O', 'X', '1'};
  put_u32(out, static_cast<std::uint32_t>(grid.time_bins));
  put_u32(out, static_cast<std::uint32_t>(grid.sensor.height));
  put_u32(out, static_cast<std::uint32_t>(grid.sensor.width));
  put_floats(out, grid.data);
  dump(path, out);
}

eventrep::VoxelGrid read_voxels(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "VOX1", 4) != 0)
    throw FormatError(path.string() + ": not a VOX1 raster");
  eventrep::VoxelGrid g;
  g.time_bins = static_cast<int>(get_u32(bytes, 4));
  g.sensor.height = static_cast<int>(get_u32(bytes, 8));
  g.sensor.width = static_cast<int>(get_u32(bytes, 12));
  const std::size_t n = static_cast<std::size_t>(g.time_bins) * g.sensor.height * g.sensor.width;
  if (bytes.size() != 16 + 4 * n) throw FormatError(path.string() + ": VOX1 size mismatch");
  g.data = get_floats(bytes, 16, n);
  return g;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 3) throw std::invalid_argument("write_ppm: expected 3 channels");
  std::ostringstream header;
  header << "P6\n" << image.width << " " << image.height << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  for (std::size_t px = 0; px < plane; ++px) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(image.data[static_cast<std::size_t>(c) * plane + px], 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
  }
  dump(path, out);
}

Image read_ppm(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  std::vector<std::string> tok;
  const std::size_t off = pnm_header(bytes, tok, 4);
  if (tok[0] != "P6") throw FormatError(path.string() + ": not a binary PPM");
  Image img;
  img.channels = 3;
  img.width = std::stoi(tok[1]);
  img.height = std::stoi(tok[2]);
  if (tok[3] != "255") throw FormatError(path.string() + ": only 8-bit PPM supported");
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  if (bytes.size() < off + 3 * plane) throw FormatError(path.string() + ": truncated PPM raster");
  img.data.resize(3 * plane);
  for (std::size_t px = 0; px < plane; ++px)
    for (int c = 0; c < 3; ++c) img.data[static_cast<std::size_t>(c) * plane + px] = bytes[off + 3 * px + static_cast<std::size_t>(c)] / 255.0;
  return img;
}

void write_pgm(std::span<const double> values, int height, int width, double lo, double hi,
               const std::filesystem::path& path) {
  if (values.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("write_pgm: size mismatch");
  std::ostringstream header;
  header << "P5\n" << width << " " << height << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  const double range = hi > lo ? hi - lo : 1.0;
  for (double v : values) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp((v - lo) / range, 0.0, 1.0) * 255.0)));
  }
  dump(path, out);
}

}  // namespace pcdepth
