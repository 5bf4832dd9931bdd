#include "pcdepth/synthdata.hpp"

#include "pcdepth/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace pcdepth::synthdata {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kLogFloor = 1e-3;
constexpr double kCrossingTolerance = 1e-9;

double seconds(std::uint64_t t_us) { return static_cast<double>(t_us) * 1e-6; }

std::string sample_stem(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04d", i);
  return buf;
}

}  // namespace

std::string to_string(Lighting l) {
  switch (l) {
    case Lighting::day: return "day";
    case Lighting::night: return "night";
    case Lighting::mixed: return "mixed";
  }
  return "day";
}

Lighting parse_lighting(const std::string& s) {
  if (s == "day") return Lighting::day;
  if (s == "night") return Lighting::night;
  if (s == "mixed") return Lighting::mixed;
  throw std::invalid_argument("lighting must be day, night or mixed (got '" + s + "')");
}

void SceneSpec::validate(const objective::DepthPriors& priors) const {
  if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0)
    throw std::invalid_argument("scene canvas must be a positive multiple of 16");
  if (n_objects < 0) throw std::invalid_argument("scene object count must be nonnegative");
  if (!(min_depth > 0) || !(min_depth <= max_depth) || !(max_depth < background_depth))
    throw std::invalid_argument("scene depths must satisfy 0 < min_depth <= max_depth < background_depth");
  if (min_depth < priors.d_min || background_depth > priors.d_max)
    throw std::invalid_argument("scene depths fall outside the depth priors");
  if (!(min_speed >= 0) || !(max_speed >= min_speed)) throw std::invalid_argument("scene speed range is invalid");
  if (!(threshold > 0)) throw std::invalid_argument("contrast threshold must be positive");
  if (frame_interval_us == 0 || window_us < frame_interval_us)
    throw std::invalid_argument("window must span at least one sub-frame interval");
  if (!(night_contrast > 0 && night_contrast <= 1)) throw std::invalid_argument("night contrast must lie in (0, 1]");
  if (!(night_noise >= 0)) throw std::invalid_argument("night noise must be nonnegative");
}

bool Object::contains(double x, double y, double t_s) const {
  const double dx = x - (cx + vx * t_s), dy = y - (cy + vy * t_s);
  if (kind == ShapeKind::disc) return dx * dx + dy * dy <= half_w * half_w;
  return std::abs(dx) <= half_w && std::abs(dy) <= half_h;
}

Scene Scene::generate(const SceneSpec& spec) {
  spec.validate();
  Scene scene;
  scene.spec = spec;
  Rng rng(mix_seed(spec.seed, 0xB6));

  Background& bg = scene.background;
  const double grey = rng.uniform(0.35, 0.65);
  for (auto& c : bg.color) c = std::clamp(grey + rng.uniform(-0.08, 0.08), 0.1, 0.9);
  bg.amp = rng.uniform(0.08, 0.16);
  for (int i = 0; i < 2; ++i) {
    bg.freq_x[i] = rng.uniform(-0.06, 0.06);
    bg.freq_y[i] = rng.uniform(-0.06, 0.06);
    bg.phase[i] = rng.uniform(0, kTwoPi);
  }

  const double t_end = seconds(spec.window_us);
  for (int i = 0; i < spec.n_objects; ++i) {
    Object o;
    o.kind = rng.uniform(0, 1) < 0.5 ? ShapeKind::rectangle : ShapeKind::disc;
    o.depth = rng.uniform(spec.min_depth, spec.max_depth);
    // Apparent size shrinks with depth.
    const double physical = rng.uniform(0.9, 1.4);
    const double half = std::clamp(100.0 * physical / o.depth, 6.0, 18.0);
    o.half_w = half;
    o.half_h = o.kind == ShapeKind::disc ? half : std::clamp(half * rng.uniform(0.7, 1.3), 6.0, 18.0);
    // Lateral motion: image speed falls off as 1/depth, so near objects sweep faster.
    const double mid_depth = 0.5 * (spec.min_depth + spec.max_depth);
    const double speed = rng.uniform(spec.min_speed, spec.max_speed) * mid_depth / o.depth;
    const double heading = rng.uniform(0, kTwoPi);
    o.vx = speed * std::cos(heading);
    o.vy = speed * std::sin(heading);
    // Centre at the image timestamp lies well inside the canvas.
    const double ex = rng.uniform(0.2 * spec.width, 0.8 * spec.width);
    const double ey = rng.uniform(0.2 * spec.height, 0.8 * spec.height);
    o.cx = ex - o.vx * t_end;
    o.cy = ey - o.vy * t_end;
    for (auto& c : o.color) c = rng.uniform(0.15, 0.85);
    o.texture_amp = rng.uniform(0.2, 0.4);
    const double period = rng.uniform(4.0, 10.0);
    const double orient = rng.uniform(0, std::numbers::pi);
    o.freq_u = std::cos(orient) / period;
    o.freq_v = std::sin(orient) / period;
    o.phase = rng.uniform(0, kTwoPi);
    scene.objects.push_back(o);
  }
  return scene;
}

Frame render(const Scene& scene, std::uint64_t t_us) {
  const SceneSpec& s = scene.spec;
  const int h = s.height, w = s.width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Frame f;
  f.image = {3, h, w, std::vector<double>(3 * plane)};
  f.depth = {h, w, std::vector<double>(plane, s.background_depth)};

  const Background& bg = scene.background;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double tex = 0;
      for (int i = 0; i < 2; ++i) tex += std::sin(kTwoPi * (bg.freq_x[i] * px + bg.freq_y[i] * py) + bg.phase[i]);
      const std::size_t k = static_cast<std::size_t>(y) * w + x;
      for (int c = 0; c < 3; ++c) f.image.data[c * plane + k] = std::clamp(bg.color[c] + 0.5 * bg.amp * tex, 0.02, 1.0);
    }
  }

  std::vector<const Object*> order;
  for (const auto& o : scene.objects) order.push_back(&o);
  std::stable_sort(order.begin(), order.end(), [](const Object* a, const Object* b) { return a->depth > b->depth; });

  const double ts = seconds(t_us);
  for (const Object* o : order) {
    const double ox = o->cx + o->vx * ts, oy = o->cy + o->vy * ts;
    const int x0 = std::max(0, static_cast<int>(std::floor(ox - o->half_w - 1)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(ox + o->half_w + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(oy - o->half_h - 1)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(oy + o->half_h + 1)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        if (!o->contains(px, py, ts)) continue;
        const double u = px - ox, v = py - oy;  // texture moves with the object
        const double mod = 1.0 + o->texture_amp * std::sin(kTwoPi * (o->freq_u * u + o->freq_v * v) + o->phase);
        const std::size_t k = static_cast<std::size_t>(y) * w + x;
        for (int c = 0; c < 3; ++c) f.image.data[c * plane + k] = std::clamp(o->color[c] * mod, 0.02, 1.0);
        f.depth.data[k] = o->depth;
      }
    }
  }
  return f;
}

std::vector<double> luminance(const Image& image) {
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  std::vector<double> out(plane, 0.0);
  for (int c = 0; c < image.channels; ++c)
    for (std::size_t k = 0; k < plane; ++k) out[k] += image.data[c * plane + k];
  for (auto& v : out) v /= image.channels;
  return out;
}

Image night_image(const Image& clean, const SceneSpec& spec, std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  Image out = clean;
  for (auto& v : out.data) v = std::clamp(0.5 + spec.night_contrast * (v - 0.5) + rng.normal(0, spec.night_noise), 0.0, 1.0);
  return out;
}

eventrep::EventStream simulate_events_from_frames(const std::vector<std::vector<double>>& log_frames,
                                                  const std::vector<std::uint64_t>& timestamps, int height, int width,
                                                  double threshold) {
  if (log_frames.size() != timestamps.size()) throw std::invalid_argument("simulate_events: frame/timestamp count mismatch");
  if (!(threshold > 0)) throw std::invalid_argument("simulate_events: threshold must be positive");
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (const auto& f : log_frames)
    if (f.size() != plane) throw std::invalid_argument("simulate_events: frame size mismatch");
  for (std::size_t i = 1; i < timestamps.size(); ++i)
    if (timestamps[i] <= timestamps[i - 1]) throw std::invalid_argument("simulate_events: timestamps must increase");

  eventrep::EventStream out;
  out.sensor = {height, width};
  if (log_frames.empty()) return out;
  std::vector<double> ref = log_frames[0];
  for (std::size_t k = 1; k < log_frames.size(); ++k) {
    const auto& a = log_frames[k - 1];
    const auto& b = log_frames[k];
    const double t_a = static_cast<double>(timestamps[k - 1]);
    const double span = static_cast<double>(timestamps[k] - timestamps[k - 1]);
    for (std::size_t i = 0; i < plane; ++i) {
      const double diff = b[i] - a[i];
      auto emit = [&](double level, int p) {
        const double frac = diff == 0 ? 1.0 : std::clamp((level - a[i]) / diff, 0.0, 1.0);
        const auto t = static_cast<std::uint64_t>(std::llround(t_a + frac * span));
        out.events.push_back({static_cast<int>(i % width), static_cast<int>(i / width), t, p});
      };
      while (b[i] - ref[i] >= threshold - kCrossingTolerance) {
        ref[i] += threshold;
        emit(ref[i], 1);
      }
      while (ref[i] - b[i] >= threshold - kCrossingTolerance) {
        ref[i] -= threshold;
        emit(ref[i], -1);
      }
    }
  }
  std::stable_sort(out.events.begin(), out.events.end(), [](const eventrep::Event& l, const eventrep::Event& r) {
    return std::tie(l.t, l.y, l.x) < std::tie(r.t, r.y, r.x);
  });
  return out;
}

eventrep::EventStream simulate_events(const Scene& scene, std::uint64_t t0, std::uint64_t t1) {
  if (t1 <= t0) throw std::invalid_argument("simulate_events: need t0 < t1");
  const std::uint64_t dt = scene.spec.frame_interval_us;
  std::vector<std::uint64_t> times;
  for (std::uint64_t t = t0; t < t1; t += dt) times.push_back(t);
  times.push_back(t1);
  std::vector<std::vector<double>> frames;
  for (std::uint64_t t : times) {
    auto lum = luminance(render(scene, t).image);
    for (auto& v : lum) v = std::log(v + kLogFloor);
    frames.push_back(std::move(lum));
  }
  return simulate_events_from_frames(frames, times, scene.spec.height, scene.spec.width, scene.spec.threshold);
}

bool is_night(const SceneSpec& spec, std::uint64_t index) {
  return spec.lighting == Lighting::night || (spec.lighting == Lighting::mixed && index % 2 == 1);
}

Sample make_sample(const SceneSpec& spec, std::uint64_t index) {
  SceneSpec local = spec;
  local.seed = mix_seed(spec.seed, index);
  const Scene scene = Scene::generate(local);
  Sample s;
  s.night = is_night(spec, index);
  s.events = simulate_events(scene, 0, spec.window_us);
  Frame f = render(scene, spec.window_us);
  s.image = s.night ? night_image(f.image, spec, mix_seed(local.seed, 0x417E)) : std::move(f.image);
  s.gt = objective::GroundTruth::dense(f.depth.height, f.depth.width, std::move(f.depth.data));
  return s;
}

std::vector<ManifestRow> build_split(const SceneSpec& spec, int n_samples, const std::filesystem::path& out_dir) {
  spec.validate();
  if (n_samples < 0) throw std::invalid_argument("build_split: negative sample count");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw std::runtime_error("cannot create output directory " + out_dir.string());
  std::vector<ManifestRow> rows;
  for (int i = 0; i < n_samples; ++i) {
    const Sample s = make_sample(spec, static_cast<std::uint64_t>(i));
    const std::string stem = sample_stem(i);
    ManifestRow row{stem + ".ppm", stem + ".evt", stem + ".dpt"};
    write_ppm(s.image, out_dir / row.image);
    eventrep::write_events(s.events, out_dir / row.events);
    write_depth({s.gt.height, s.gt.width, s.gt.depth}, out_dir / row.depth);
    rows.push_back(row);
  }
  write_manifest(rows, out_dir / kManifestName);
  return rows;
}

void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "image,events,depth\n";
  for (const auto& r : rows) out << r.image << ',' << r.events << ',' << r.depth << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<ManifestRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line == "image,events,depth") continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() != 3)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 3 columns");
    rows.push_back({cols[0], cols[1], cols[2]});
  }
  return rows;
}

}  // namespace pcdepth::synthdata
