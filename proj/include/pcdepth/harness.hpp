#pragma once

// Training, evaluation and inference over manifest-listed samples.

#include "pcdepth/checkpoint.hpp"
#include "pcdepth/config.hpp"
#include "pcdepth/metrics.hpp"
#include "pcdepth/model.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcdepth::harness {

// Missing or malformed input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LoadedSample {
  std::string name;
  Image image;
  eventrep::VoxelGrid voxels;
  objective::GroundTruth gt;
};

// Voxel grid over the stream's own first/last timestamps; an empty stream
// gives an all-zero grid.
eventrep::VoxelGrid voxelize_for_model(const eventrep::EventStream& events, int bins);

// Valid where the depth is finite and positive.
objective::GroundTruth to_ground_truth(const DepthMap& depth);

// Reads every row of a manifest. Throws DataError listing all missing files.
std::vector<LoadedSample> load_dataset(const std::filesystem::path& manifest, int bins);

struct StepLog {
  int step = 0;
  double lr = 0;
  double grad_norm = 0;
  std::vector<double> silog;     // per stage, averaged over the batch
  std::vector<double> weighted;  // weight * silog
  double total = 0;
};

struct TrainOptions {
  std::ostream* progress = nullptr;  // one line every progress_every steps
  int progress_every = 100;
  bool write_outputs = true;  // checkpoint + CSV log into cfg.output_dir
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  int steps = 0;
  StepLog last;
  std::filesystem::path checkpoint;
};

// Trains `net` in place. Deterministic given the config and the data.
TrainResult train(model::PCDepthNet& net, const RunConfig& cfg, const std::vector<LoadedSample>& data,
                  const TrainOptions& options = {});

struct SampleEval {
  std::string name;
  metrics::MetricReport report;
  double final_silog = 0;
  double mean_event_score = 0;
};

struct EvalResult {
  std::vector<SampleEval> samples;
  metrics::MetricReport aggregate;
  double mean_final_silog = 0;
  double mean_event_score = 0;
};

EvalResult evaluate(const model::PCDepthNet& net, const RunConfig& cfg, const std::vector<LoadedSample>& data);

struct Prediction {
  DepthMap depth;               // metres
  std::vector<DepthMap> stages;  // normalised log depth per stage
  std::vector<std::vector<double>> attention;  // per token, (H/4) x (W/4)
  int attention_height = 0;
  int attention_width = 0;
  double mean_event_score = 0;
};

Prediction predict(const model::PCDepthNet& net, const RunConfig& cfg, const Image& image,
                   const eventrep::VoxelGrid& voxels);

std::unique_ptr<model::PCDepthNet> load_model(const checkpoint::Checkpoint& ckpt);

// Writes per-stage DPT1 rasters (stage_1.dpt ...) and per-token PGM maps
// (token_00.pgm ...), each scaled by its own maximum.
void dump_stages(const Prediction& p, const std::filesystem::path& dir);
void dump_attention(const Prediction& p, const std::filesystem::path& dir);

}  // namespace pcdepth::harness
