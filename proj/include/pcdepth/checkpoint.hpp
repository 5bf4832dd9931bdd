#pragma once

// Checkpoint file, little-endian:
//   "PCDCKPT1"                         8 bytes
//   u64 step
//   u32 config length, config text    (RunConfig, key = value lines)
//   u32 parameter count, then per parameter:
//     u32 name length, name, u32 rank, u32 dims[rank], f32 values
//   u8 optimizer present; if 1:
//     u8 dtype tag (8 = float64), u64 Adam step,
//     per parameter: f64 m[numel], f64 v[numel]

#include "pcdepth/config.hpp"
#include "pcdepth/model.hpp"
#include "pcdepth/optim.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pcdepth::checkpoint {

struct Tensor {
  std::string name;
  ag::Shape shape;
  std::vector<float> values;

  bool operator==(const Tensor&) const = default;
};

struct Checkpoint {
  std::uint64_t step = 0;
  RunConfig config;
  std::vector<Tensor> params;
  std::optional<optim::AdamState> optimizer;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Checkpoint capture(const model::PCDepthNet& net, const RunConfig& cfg, std::uint64_t step,
                   const optim::AdamW* optimizer = nullptr);

// Copies parameters (and optimizer state when both are present) into the
// given model. Names and shapes must match exactly.
void restore(const Checkpoint& ckpt, model::PCDepthNet& net, optim::AdamW* optimizer = nullptr);

std::vector<std::uint8_t> encode(const Checkpoint& ckpt);
Checkpoint decode(const std::vector<std::uint8_t>& bytes);

void write(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read(const std::filesystem::path& path);

}  // namespace pcdepth::checkpoint
