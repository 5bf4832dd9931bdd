#include "pcdepth/eventrep.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace pcdepth::eventrep {

namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t offset, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[offset + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

bool in_bounds(const Event& e, const SensorSize& s) {
  return e.x >= 0 && e.y >= 0 && e.x < s.width && e.y < s.height;
}

}  // namespace

void validate(const EventStream& stream, bool require_in_bounds) {
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    if (e.p != 1 && e.p != -1) throw EventError("event " + std::to_string(i) + ": polarity must be +1 or -1");
    if (i > 0 && e.t < stream.events[i - 1].t)
      throw EventError("event " + std::to_string(i) + ": timestamps not monotone");
    if (require_in_bounds && !in_bounds(e, stream.sensor))
      throw EventError("event " + std::to_string(i) + ": outside sensor");
  }
}

std::vector<double> normalize_timestamps(const EventStream& stream, int bins) {
  if (stream.events.empty()) throw EventError("empty event window");
  return normalize_timestamps(stream, bins, {stream.events.front().t, stream.events.back().t});
}

std::vector<double> normalize_timestamps(const EventStream& stream, int bins, TimeWindow window) {
  if (bins < 2) throw std::invalid_argument("normalize_timestamps: need at least 2 time bins");
  if (window.end < window.start) throw std::invalid_argument("normalize_timestamps: inverted window");
  std::vector<double> out(stream.events.size(), 0.0);
  if (window.end == window.start) return out;
  const double span = static_cast<double>(window.end - window.start);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint64_t t = std::clamp(stream.events[i].t, window.start, window.end);
    out[i] = (bins - 1) * (static_cast<double>(t - window.start) / span);
  }
  return out;
}

double bilinear_kernel(double a) { return std::max(0.0, 1.0 - std::abs(a)); }

VoxelGrid voxelize(const EventStream& stream, int bins, std::optional<TimeWindow> window) {
  if (bins < 2) throw std::invalid_argument("voxelize: need at least 2 time bins");
  VoxelGrid grid;
  grid.time_bins = bins;
  grid.sensor = stream.sensor;
  grid.data.assign(static_cast<std::size_t>(bins) * stream.sensor.height * stream.sensor.width, 0.0);
  if (window) {
    grid.window = *window;
  } else if (!stream.events.empty()) {
    grid.window = {stream.events.front().t, stream.events.back().t};
  }
  if (stream.events.empty()) return grid;

  const auto tstar = normalize_timestamps(stream, bins, grid.window);
  const std::size_t plane = static_cast<std::size_t>(stream.sensor.height) * stream.sensor.width;
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    if (!in_bounds(e, stream.sensor)) {
      ++grid.dropped_events;
      continue;
    }
    // Integer pixel coordinates make the spatial kernels a delta; only the
    // two bins bracketing t* receive weight.
    const int lo = static_cast<int>(std::floor(tstar[i]));
    const std::size_t pixel = static_cast<std::size_t>(e.y) * stream.sensor.width + e.x;
    for (int b = lo; b <= lo + 1; ++b) {
      if (b < 0 || b >= bins) continue;
      const double w = bilinear_kernel(b - tstar[i]);
      if (w > 0) grid.data[static_cast<std::size_t>(b) * plane + pixel] += e.p * w;
    }
  }
  return grid;
}

EventStream slice(const EventStream& stream, TimeWindow window, bool inclusive_end) {
  EventStream out;
  out.sensor = stream.sensor;
  for (const Event& e : stream.events) {
    if (e.t < window.start) continue;
    if (e.t > window.end || (!inclusive_end && e.t == window.end)) continue;
    out.events.push_back(e);
  }
  return out;
}

std::vector<EventStream> split_windows(const EventStream& stream, std::uint64_t length_us) {
  if (length_us == 0) throw std::invalid_argument("split_windows: zero window length");
  std::vector<EventStream> out;
  if (stream.events.empty()) return out;
  const std::uint64_t t0 = stream.events.front().t;
  for (const Event& e : stream.events) {
    const std::size_t k = static_cast<std::size_t>((e.t - t0) / length_us);
    while (out.size() <= k) out.push_back(EventStream{{}, stream.sensor});
    out[k].events.push_back(e);
  }
  return out;
}

std::vector<std::uint8_t> encode_events(const EventStream& stream) {
  validate(stream, false);
  if (stream.sensor.height < 0 || stream.sensor.height > 0xFFFF || stream.sensor.width < 0 ||
      stream.sensor.width > 0xFFFF)
    throw EventError("sensor size does not fit in u16");
  std::vector<std::uint8_t> out;
  out.reserve(kEventHeaderBytes + kEventRecordBytes * stream.events.size());
  out.insert(out.end(), {'E', 'V', 'T', '1'});
  put_le(out, static_cast<std::uint64_t>(stream.sensor.height), 2);
  put_le(out, static_cast<std::uint64_t>(stream.sensor.width), 2);
  put_le(out, stream.events.size(), 8);
  for (const Event& e : stream.events) {
    if (e.x < 0 || e.x > 0xFFFF || e.y < 0 || e.y > 0xFFFF) throw EventError("event coordinate does not fit in u16");
    put_le(out, static_cast<std::uint64_t>(e.x), 2);
    put_le(out, static_cast<std::uint64_t>(e.y), 2);
    out.push_back(static_cast<std::uint8_t>(static_cast<std::int8_t>(e.p)));
    out.insert(out.end(), 3, 0);
    put_le(out, e.t, 8);
  }
  return out;
}

EventStream decode_events(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kEventHeaderBytes) throw EventError("truncated header at byte offset 0");
  if (std::memcmp(bytes.data(), "EVT1", 4) != 0) throw EventError("bad magic at byte offset 0");
  EventStream stream;
  stream.sensor.height = static_cast<int>(get_le(bytes, 4, 2));
  stream.sensor.width = static_cast<int>(get_le(bytes, 6, 2));
  const std::uint64_t count = get_le(bytes, 8, 8);
  const std::size_t payload = bytes.size() - kEventHeaderBytes;
  if (payload % kEventRecordBytes != 0 || payload / kEventRecordBytes != count) {
    throw EventError("record count " + std::to_string(count) + " does not match file size at byte offset " +
                     std::to_string(kEventHeaderBytes + std::min<std::size_t>(payload, count * kEventRecordBytes)));
  }
  stream.events.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t off = kEventHeaderBytes + static_cast<std::size_t>(i) * kEventRecordBytes;
    Event e;
    e.x = static_cast<int>(get_le(bytes, off, 2));
    e.y = static_cast<int>(get_le(bytes, off + 2, 2));
    e.p = static_cast<std::int8_t>(bytes[off + 4]);
    e.t = get_le(bytes, off + 8, 8);
    if (e.p != 1 && e.p != -1)
      throw EventError("invalid polarity " + std::to_string(e.p) + " at byte offset " + std::to_string(off + 4));
    if (bytes[off + 5] != 0 || bytes[off + 6] != 0 || bytes[off + 7] != 0)
      throw EventError("nonzero padding at byte offset " + std::to_string(off + 5));
    if (!stream.events.empty() && e.t < stream.events.back().t)
      throw EventError("non-monotone timestamp at byte offset " + std::to_string(off + 8));
    stream.events.push_back(e);
  }
  return stream;
}

void write_events(const EventStream& stream, const std::filesystem::path& path) {
  const auto bytes = encode_events(stream);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

EventStream read_events(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_events(bytes);
}

}  // namespace pcdepth::eventrep
