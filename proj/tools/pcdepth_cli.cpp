// pcdepth: command-line entry point.
//   exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure

#include "pcdepth/checkpoint.hpp"
#include "pcdepth/config.hpp"
#include "pcdepth/eventrep.hpp"
#include "pcdepth/grad_check.hpp"
#include "pcdepth/harness.hpp"
#include "pcdepth/raster_io.hpp"
#include "pcdepth/synthdata.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace pcdepth;

namespace {

constexpr int kOk = 0, kUsage = 1, kDataError = 2, kNumerical = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig build_config(const std::string& preset_name, const std::string& config_path,
                       const std::vector<std::string>& overrides) {
  RunConfig cfg = config_path.empty() ? preset(preset_name) : load_config(config_path);
  apply_overrides(cfg, overrides);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

int cmd_voxelize(const std::string& events_path, int bins, std::uint64_t window_us, const std::string& out) {
  const auto stream = eventrep::read_events(events_path);
  const auto windows = eventrep::split_windows(stream, window_us);
  if (windows.empty()) {
    write_voxels(eventrep::voxelize(stream, bins), out);
    std::cout << "0 events; wrote empty grid to " << out << "\n";
    return kOk;
  }
  const fs::path base(out);
  std::size_t dropped = 0;
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const std::uint64_t start = stream.events.front().t + k * window_us;
    const auto grid = eventrep::voxelize(windows[k], bins, eventrep::TimeWindow{start, start + window_us});
    dropped += grid.dropped_events;
    fs::path path = base;
    if (windows.size() > 1) {
      char suffix[32];
      std::snprintf(suffix, sizeof suffix, "_%04zu", k);
      path = base.parent_path() / (base.stem().string() + suffix + base.extension().string());
    }
    write_voxels(grid, path);
  }
  std::cout << stream.events.size() << " events, " << windows.size() << " window(s), " << dropped
            << " dropped out of bounds\n";
  return kOk;
}

int cmd_make_synth(const synthdata::SceneSpec& spec, int count, const std::string& out) {
  const auto rows = synthdata::build_split(spec, count, out);
  std::cout << "wrote " << rows.size() << " samples and " << (fs::path(out) / synthdata::kManifestName).string()
            << "\n";
  return kOk;
}

int cmd_train(const RunConfig& cfg) {
  if (cfg.train_manifest.empty()) throw UsageError("train: train_manifest is not set");
  const auto data = harness::load_dataset(cfg.train_manifest, cfg.model.time_bins);
  model::PCDepthNet net(cfg.model);
  std::cout << "training " << net.params().parameter_count() << " parameters on " << data.size() << " samples\n";
  harness::TrainOptions opt;
  opt.progress = &std::cout;
  opt.progress_every = std::max(1, cfg.optim.steps / 20);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = harness::train(net, cfg, data, opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "done in " << secs << " s; checkpoint " << r.checkpoint.string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::vector<std::string>& manifests,
             const std::vector<std::string>& overrides, const std::string& csv_path) {
  const auto ckpt = checkpoint::read(ckpt_path);
  RunConfig cfg = ckpt.config;
  apply_overrides(cfg, overrides);
  cfg.validate();
  auto net = harness::load_model(ckpt);
  std::vector<std::string> lists = manifests;
  if (lists.empty() && !cfg.eval_manifest.empty()) lists.push_back(cfg.eval_manifest);
  if (lists.empty()) throw UsageError("eval: no manifest given");
  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path);
    if (!csv) throw harness::DataError("cannot write " + csv_path);
    csv << metrics::csv_header() << ",silog,event_score\n";
  }
  std::printf("%-24s %s %8s %8s\n", "split", metrics::header_row().c_str(), "SIlog", "s_evt");
  for (const auto& m : lists) {
    const auto data = harness::load_dataset(m, cfg.model.time_bins);
    const auto r = harness::evaluate(*net, cfg, data);
    std::printf("%-24s %s %8.4f %8.4f\n", m.c_str(), metrics::format_row(r.aggregate).c_str(), r.mean_final_silog,
                r.mean_event_score);
    if (csv.is_open()) {
      char extra[64];
      std::snprintf(extra, sizeof extra, ",%.9g,%.9g", r.mean_final_silog, r.mean_event_score);
      csv << metrics::csv_row(m, r.aggregate) << extra << "\n";
    }
  }
  return kOk;
}

int cmd_infer(const std::string& ckpt_path, const std::string& image_path, const std::string& events_path,
              const std::string& out, const std::string& stages_dir, const std::string& attn_dir) {
  const auto ckpt = checkpoint::read(ckpt_path);
  auto net = harness::load_model(ckpt);
  const Image image = read_ppm(image_path);
  const auto stream = eventrep::read_events(events_path);
  if (stream.sensor.height != image.height || stream.sensor.width != image.width)
    throw harness::DataError("sensor size mismatch: image " + std::to_string(image.height) + "x" +
                             std::to_string(image.width) + ", events " + std::to_string(stream.sensor.height) + "x" +
                             std::to_string(stream.sensor.width));
  const auto grid = harness::voxelize_for_model(stream, ckpt.config.model.time_bins);
  const auto p = harness::predict(*net, ckpt.config, image, grid);
  write_depth(p.depth, out);
  if (!stages_dir.empty()) harness::dump_stages(p, stages_dir);
  if (!attn_dir.empty()) harness::dump_attention(p, attn_dir);
  std::cout << "wrote " << out << " (mean event score " << p.mean_event_score << ")\n";
  return kOk;
}

int cmd_grad_check(const grad_check::Options& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = grad_check::run(opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& t : r.tensors)
    std::printf("%-48s n=%-3d rel %.3e abs %.3e\n", t.name.c_str(), t.checked, t.max_rel_error, t.max_abs_error);
  std::printf("%s: %d entries, max relative error %.3e (%s), %.1f s\n", r.passed ? "PASS" : "FAIL", r.checked,
              r.max_rel_error, r.worst.c_str(), secs);
  return r.passed ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event + image monocular depth estimation"};
  app.require_subcommand(1);

  auto* vox = app.add_subcommand("voxelize", "Convert an EVT1 event file into VOX1 voxel grids");
  std::string vox_events, vox_out;
  int vox_bins = 3;
  std::uint64_t vox_window = 50000;
  vox->add_option("--events", vox_events, "EVT1 event file")->required();
  vox->add_option("--bins", vox_bins, "Time bins B")->check(CLI::Range(2, 1 << 16));
  vox->add_option("--window-us", vox_window, "Window length in microseconds")->check(CLI::PositiveNumber);
  vox->add_option("--out", vox_out, "Output raster; several windows get _0000, _0001 ... suffixes")->required();

  auto* synth = app.add_subcommand("make-synth", "Generate a synthetic split");
  synthdata::SceneSpec spec;
  std::string synth_out, lighting = "day";
  int synth_count = 8;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--count", synth_count, "Number of samples")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", spec.seed, "Split seed");
  synth->add_option("--height", spec.height, "Canvas height (multiple of 16)");
  synth->add_option("--width", spec.width, "Canvas width (multiple of 16)");
  synth->add_option("--objects", spec.n_objects, "Objects per scene");
  synth->add_option("--threshold", spec.threshold, "Log-intensity contrast threshold");
  synth->add_option("--window-us", spec.window_us, "Event window length in microseconds");
  synth->add_option("--lighting", lighting, "day, night or mixed")->check(CLI::IsMember({"day", "night", "mixed"}));

  std::string preset_name = "tiny", config_path;
  std::vector<std::string> overrides;
  auto add_config_opts = [&](CLI::App* sub) {
    sub->add_option("--preset", preset_name, "default, tiny or micro")->check(CLI::IsMember({"default", "tiny", "micro"}));
    sub->add_option("--config", config_path, "key = value config file (replaces the preset)");
    sub->add_option("--set", overrides, "Override key=value (repeatable)");
  };

  auto* train = app.add_subcommand("train", "Train a model");
  add_config_opts(train);
  std::string train_manifest, output_dir;
  train->add_option("--train-manifest", train_manifest, "Training manifest");
  train->add_option("--output-dir", output_dir, "Run directory");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; one row per manifest");
  std::string eval_ckpt, eval_csv;
  std::vector<std::string> eval_manifests, eval_overrides;
  std::string max_depth;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--manifest", eval_manifests, "Manifest (repeatable)");
  eval->add_option("--max-eval-depth", max_depth, "Ignore ground truth beyond this depth (default none)");
  eval->add_option("--csv", eval_csv, "Also write rows to this CSV");
  eval->add_option("--set", eval_overrides, "Override key=value (repeatable)");

  auto* infer = app.add_subcommand("infer", "Predict depth for one image + event file");
  std::string inf_ckpt, inf_image, inf_events, inf_out, inf_stages, inf_attn;
  infer->add_option("--checkpoint", inf_ckpt, "Checkpoint file")->required();
  infer->add_option("--image", inf_image, "PPM image")->required();
  infer->add_option("--events", inf_events, "EVT1 event file")->required();
  infer->add_option("--out", inf_out, "Output DPT1 depth raster")->required();
  infer->add_option("--dump-stages", inf_stages, "Directory for per-stage rasters");
  infer->add_option("--dump-attn", inf_attn, "Directory for per-token attention PGMs");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient check on the micro model");
  grad_check::Options gc_opt;
  gc->add_option("--entries", gc_opt.entries_per_tensor, "Entries per tensor (0 = all)");
  gc->add_option("--tolerance", gc_opt.tolerance, "Maximum relative error");
  gc->add_option("--seed", gc_opt.seed, "Sample and entry selection seed");
  gc->add_option("--step", gc_opt.step, "Finite-difference step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*vox) return cmd_voxelize(vox_events, vox_bins, vox_window, vox_out);
    if (*synth) {
      spec.lighting = synthdata::parse_lighting(lighting);
      return cmd_make_synth(spec, synth_count, synth_out);
    }
    if (*train) {
      if (!train_manifest.empty()) overrides.push_back("train_manifest=" + train_manifest);
      if (!output_dir.empty()) overrides.push_back("output_dir=" + output_dir);
      return cmd_train(build_config(preset_name, config_path, overrides));
    }
    if (*eval) {
      if (!max_depth.empty()) eval_overrides.push_back("max_eval_depth=" + max_depth);
      return cmd_eval(eval_ckpt, eval_manifests, eval_overrides, eval_csv);
    }
    if (*infer) return cmd_infer(inf_ckpt, inf_image, inf_events, inf_out, inf_stages, inf_attn);
    if (*gc) return cmd_grad_check(gc_opt);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const harness::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}
