#pragma once

// Event streams, bilinear-kernel voxel grids and the EVT1 event file format.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace pcdepth::eventrep {

struct Event {
  int x = 0;
  int y = 0;
  std::uint64_t t = 0;  // microseconds
  int p = 1;            // +1 or -1

  bool operator==(const Event&) const = default;
};

struct SensorSize {
  int height = 0;
  int width = 0;

  bool operator==(const SensorSize&) const = default;
};

struct EventStream {
  std::vector<Event> events;  // nondecreasing in t
  SensorSize sensor;

  bool operator==(const EventStream&) const = default;
};

struct TimeWindow {
  std::uint64_t start = 0;
  std::uint64_t end = 0;
};

// B x H x W signed polarity volume, row-major [bin][y][x].
struct VoxelGrid {
  int time_bins = 0;
  SensorSize sensor;
  TimeWindow window;
  std::vector<double> data;
  std::size_t dropped_events = 0;  // out-of-bounds events skipped

  double at(int b, int y, int x) const {
    return data[(static_cast<std::size_t>(b) * sensor.height + y) * sensor.width + x];
  }
};

class EventError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checks ordering, polarity and (optionally) bounds. Throws EventError.
void validate(const EventStream& stream, bool require_in_bounds = true);

// t* = (B-1)(t - t_first)/(t_last - t_first); all zeros for a degenerate window.
std::vector<double> normalize_timestamps(const EventStream& stream, int bins);

// Same normalisation against explicit window endpoints; timestamps outside
// the window are clamped to its ends.
std::vector<double> normalize_timestamps(const EventStream& stream, int bins, TimeWindow window);

double bilinear_kernel(double a);

// Accumulates p * k(b - t*) into the event's pixel. Without an explicit window
// the first and last event define it. Out-of-bounds events are dropped and
// counted.
VoxelGrid voxelize(const EventStream& stream, int bins, std::optional<TimeWindow> window = std::nullopt);

// Events with start <= t < end (end inclusive when `inclusive_end`).
EventStream slice(const EventStream& stream, TimeWindow window, bool inclusive_end = false);

// Splits into consecutive windows of `length_us` starting at the first event.
std::vector<EventStream> split_windows(const EventStream& stream, std::uint64_t length_us);

// EVT1: 16-byte header <"EVT1", u16 H, u16 W, u64 count>, then 16-byte
// records <u16 x, u16 y, i8 p, 3 pad, u64 t>, all little-endian.
inline constexpr std::size_t kEventHeaderBytes = 16;
inline constexpr std::size_t kEventRecordBytes = 16;

std::vector<std::uint8_t> encode_events(const EventStream& stream);
EventStream decode_events(std::span<const std::uint8_t> bytes);
void write_events(const EventStream& stream, const std::filesystem::path& path);
EventStream read_events(const std::filesystem::path& path);

}  // namespace pcdepth::eventrep
