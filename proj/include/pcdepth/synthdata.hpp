#pragma once

// Desk-scale synthetic scenes: textured shapes moving over a static textured
// background at known depths. Frames are rendered at a fixed sub-frame rate
// and events are generated from log-intensity threshold crossings.

#include "pcdepth/eventrep.hpp"
#include "pcdepth/objective.hpp"
#include "pcdepth/raster_io.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pcdepth::synthdata {

// mixed: odd-indexed samples of a split are night samples.
enum class Lighting { day, night, mixed };

std::string to_string(Lighting l);
Lighting parse_lighting(const std::string& s);

struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  int n_objects = 3;
  double min_depth = 6.0;  // metres, objects
  double max_depth = 16.0;
  double background_depth = 24.0;
  double min_speed = 150.0;  // px/s at the middle object depth
  double max_speed = 400.0;
  double threshold = 0.2;    // log-intensity contrast threshold
  std::uint64_t frame_interval_us = 1000;
  std::uint64_t window_us = 20000;
  Lighting lighting = Lighting::day;
  double night_contrast = 0.15;  // image intensity scale around mid-grey
  double night_noise = 0.03;     // stddev of additive image noise

  // Throws std::invalid_argument on the first violated constraint.
  void validate(const objective::DepthPriors& priors = {}) const;
};

enum class ShapeKind { rectangle, disc };

struct Object {
  ShapeKind kind = ShapeKind::rectangle;
  double cx = 0, cy = 0;          // centre at t = 0, pixels
  double half_w = 8, half_h = 8;  // disc radius is half_w
  double vx = 0, vy = 0;          // px/s
  double depth = 10;
  std::array<double, 3> color{0.5, 0.5, 0.5};
  double texture_amp = 0.3;
  double freq_u = 0.1, freq_v = 0.0;  // cycles per pixel, object-local
  double phase = 0;

  bool contains(double x, double y, double t_s) const;
};

struct Background {
  std::array<double, 3> color{0.5, 0.5, 0.5};
  double amp = 0.15;
  std::array<double, 2> freq_x{0.02, 0.05};
  std::array<double, 2> freq_y{0.03, 0.01};
  std::array<double, 2> phase{0, 0};
};

struct Scene {
  SceneSpec spec;
  Background background;
  std::vector<Object> objects;

  // Draws objects and background parameters from spec.seed.
  static Scene generate(const SceneSpec& spec);
};

struct Frame {
  Image image;     // clean render, 3 channels
  DepthMap depth;  // metres
};

// Painter's order: nearer objects occlude farther ones.
Frame render(const Scene& scene, std::uint64_t t_us);

// Mean of the three channels, per pixel.
std::vector<double> luminance(const Image& image);

// Compresses intensity toward mid-grey and adds seeded noise.
Image night_image(const Image& clean, const SceneSpec& spec, std::uint64_t noise_seed);

// Log-intensity frames at the given timestamps -> events. Each pixel keeps a
// reference level (initialised from the first frame); every crossing of
// reference +/- threshold emits one event with a linearly interpolated
// timestamp. Output is sorted by (t, y, x).
eventrep::EventStream simulate_events_from_frames(const std::vector<std::vector<double>>& log_frames,
                                                  const std::vector<std::uint64_t>& timestamps, int height, int width,
                                                  double threshold);

// Renders sub-frames every frame_interval_us over [t0, t1] and simulates.
eventrep::EventStream simulate_events(const Scene& scene, std::uint64_t t0, std::uint64_t t1);

bool is_night(const SceneSpec& spec, std::uint64_t index);

struct Sample {
  bool night = false;
  Image image;  // at the end of the event window
  eventrep::EventStream events;
  objective::GroundTruth gt;
};

// Sample `index` of a split: scene seed derived from (spec.seed, index),
// events over [0, window_us], image and depth at window_us. The scene does not
// depend on lighting, so day and night splits share geometry and events.
Sample make_sample(const SceneSpec& spec, std::uint64_t index);

struct ManifestRow {
  std::string image;  // paths relative to the manifest directory
  std::string events;
  std::string depth;
};

inline constexpr const char* kManifestName = "manifest.csv";

// Writes n samples plus manifest.csv into out_dir; returns the rows.
std::vector<ManifestRow> build_split(const SceneSpec& spec, int n_samples, const std::filesystem::path& out_dir);

void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

}  // namespace pcdepth::synthdata
