#include "pcdepth/harness.hpp"

#include "pcdepth/objective.hpp"
#include "pcdepth/optim.hpp"
#include "pcdepth/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace pcdepth::harness {

namespace fs = std::filesystem;

eventrep::VoxelGrid voxelize_for_model(const eventrep::EventStream& events, int bins) {
  return eventrep::voxelize(events, bins);
}

objective::GroundTruth to_ground_truth(const DepthMap& depth) {
  objective::GroundTruth gt;
  gt.height = depth.height;
  gt.width = depth.width;
  gt.depth = depth.data;
  gt.valid.resize(depth.data.size());
  for (std::size_t i = 0; i < depth.data.size(); ++i)
    gt.valid[i] = std::isfinite(depth.data[i]) && depth.data[i] > 0 ? 1 : 0;
  return gt;
}

std::vector<LoadedSample> load_dataset(const fs::path& manifest, int bins) {
  if (!fs::exists(manifest)) throw DataError("manifest not found: " + manifest.string());
  std::vector<synthdata::ManifestRow> rows;
  try {
    rows = synthdata::read_manifest(manifest);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  if (rows.empty()) throw DataError("manifest lists no samples: " + manifest.string());
  const fs::path base = manifest.parent_path();
  std::vector<std::string> missing;
  for (const auto& r : rows)
    for (const auto* p : {&r.image, &r.events, &r.depth})
      if (!fs::exists(base / *p)) missing.push_back((base / *p).string());
  if (!missing.empty()) {
    std::string msg = "missing files:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }
  std::vector<LoadedSample> out;
  for (const auto& r : rows) {
    try {
      LoadedSample s;
      s.name = r.image;
      s.image = read_ppm(base / r.image);
      s.voxels = voxelize_for_model(eventrep::read_events(base / r.events), bins);
      s.gt = to_ground_truth(read_depth(base / r.depth));
      if (s.image.height != s.gt.height || s.image.width != s.gt.width || s.voxels.sensor.height != s.gt.height ||
          s.voxels.sensor.width != s.gt.width)
        throw DataError("sensor size mismatch between image, events and depth");
      out.push_back(std::move(s));
    } catch (const DataError& e) {
      throw DataError(r.image + ": " + e.what());
    } catch (const std::exception& e) {
      throw DataError(r.image + ": " + e.what());
    }
  }
  return out;
}

namespace {

// The exponential map reaches below d_min for small d-hat; reported depth stays inside the priors.
std::vector<double> metric_output(std::span<const double> dhat, const objective::DepthPriors& priors) {
  auto d = objective::denormalize(dhat, priors);
  for (auto& v : d) v = std::clamp(v, priors.d_min, priors.d_max);
  return d;
}

void dump_batch(const fs::path& dir, int step, const std::vector<const LoadedSample*>& batch, const StepLog& log) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream info(dir / "info.txt");
  info << "step " << step << "\nlr " << log.lr << "\ngrad_norm " << log.grad_norm << "\n";
  for (std::size_t j = 0; j < log.silog.size(); ++j) info << "stage " << j + 1 << " silog " << log.silog[j] << "\n";
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto* s = batch[i];
    info << "sample " << i << " " << s->name << "\n";
    const std::string stem = "sample_" + std::to_string(i);
    write_ppm(s->image, dir / (stem + ".ppm"));
    write_voxels(s->voxels, dir / (stem + ".vox"));
    write_depth({s->gt.height, s->gt.width, s->gt.depth}, dir / (stem + ".dpt"));
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

TrainResult train(model::PCDepthNet& net, const RunConfig& cfg, const std::vector<LoadedSample>& data,
                  const TrainOptions& options) {
  cfg.validate();
  if (data.empty()) throw DataError("training set is empty");
  if (!(net.config() == cfg.model)) throw std::invalid_argument("train: model does not match config");

  std::vector<model::Inputs> inputs;
  for (const auto& s : data) inputs.push_back(model::prepare_inputs(s.image, s.voxels));

  optim::AdamW opt(net.params(), cfg.optim);
  const fs::path out_dir = cfg.output_dir;
  std::ofstream csv;
  if (options.write_outputs) {
    fs::create_directories(out_dir);
    save_config(cfg, out_dir / "config.txt");
    csv.open(out_dir / "train_log.csv");
    if (!csv) throw DataError("cannot write " + (out_dir / "train_log.csv").string());
    csv << "step,stage,silog,weighted_loss,total,lr\n";
  }

  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  auto next_index = [&]() {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 g(mix_seed(cfg.seed, epoch++));
      std::shuffle(order.begin(), order.end(), g);
      cursor = 0;
    }
    return order[cursor++];
  };

  TrainResult result;
  const int stages = cfg.model.refine_iters;
  for (int step = 0; step < cfg.optim.steps; ++step) {
    net.params().zero_grad();
    StepLog log;
    log.step = step + 1;
    log.silog.assign(static_cast<std::size_t>(stages), 0.0);
    std::vector<const LoadedSample*> batch;
    std::vector<double> weights;
    for (int b = 0; b < cfg.optim.batch; ++b) {
      const std::size_t idx = next_index();
      batch.push_back(&data[idx]);
      const auto out = net.forward(inputs[idx]);
      const auto sl = objective::multi_stage_loss(out.depth.stages, data[idx].gt, cfg.priors, cfg.loss);
      weights = sl.weights;
      for (int j = 0; j < stages; ++j) log.silog[static_cast<std::size_t>(j)] += sl.silog[static_cast<std::size_t>(j)] / cfg.optim.batch;
      const double total = sl.total.item();
      log.total += total / cfg.optim.batch;
      if (std::isfinite(total)) ag::scale(sl.total, 1.0 / cfg.optim.batch).backward();
    }
    for (int j = 0; j < stages; ++j) log.weighted.push_back(weights[static_cast<std::size_t>(j)] * log.silog[static_cast<std::size_t>(j)]);
    log.grad_norm = optim::grad_norm(net.params());
    log.lr = optim::one_cycle_lr(step, cfg.optim.steps, cfg.optim);
    if (!std::isfinite(log.total) || !std::isfinite(log.grad_norm)) {
      const fs::path dump = out_dir / "nan_dump";
      dump_batch(dump, log.step, batch, log);
      throw NumericalFailure("non-finite loss or gradient at step " + std::to_string(log.step) +
                             "; diagnostic dump written to " + dump.string());
    }
    const double clip = cfg.optim.grad_clip;
    const double scale = clip > 0 && log.grad_norm > clip ? clip / log.grad_norm : 1.0;
    opt.step(log.lr, scale);

    if (csv.is_open()) {
      for (int j = 0; j < stages; ++j)
        csv << log.step << ',' << j + 1 << ',' << fmt(log.silog[static_cast<std::size_t>(j)]) << ','
            << fmt(log.weighted[static_cast<std::size_t>(j)]) << ',' << fmt(log.total) << ',' << fmt(log.lr) << '\n';
    }
    if (options.progress && (log.step % options.progress_every == 0 || log.step == cfg.optim.steps)) {
      *options.progress << "step " << log.step << "/" << cfg.optim.steps << "  loss " << fmt(log.total)
                        << "  final-stage silog " << fmt(log.silog.back()) << "  lr " << fmt(log.lr) << std::endl;
    }
    if (options.on_step) options.on_step(log);
    if (options.write_outputs && cfg.optim.checkpoint_every > 0 && log.step % cfg.optim.checkpoint_every == 0 &&
        log.step != cfg.optim.steps) {
      checkpoint::write(checkpoint::capture(net, cfg, static_cast<std::uint64_t>(log.step), &opt),
                        out_dir / ("checkpoint_" + std::to_string(log.step) + ".ckpt"));
    }
    result.last = log;
    result.steps = log.step;
  }
  if (options.write_outputs) {
    result.checkpoint = out_dir / "checkpoint.ckpt";
    checkpoint::write(checkpoint::capture(net, cfg, static_cast<std::uint64_t>(result.steps), &opt),
                      result.checkpoint);
  }
  return result;
}

EvalResult evaluate(const model::PCDepthNet& net, const RunConfig& cfg, const std::vector<LoadedSample>& data) {
  if (data.empty()) throw DataError("evaluation set is empty");
  ag::NoGradGuard guard;
  EvalResult r;
  std::vector<metrics::MetricReport> reports;
  metrics::EvalOptions eopt;
  eopt.max_depth = cfg.max_eval_depth;
  for (const auto& s : data) {
    const auto out = net.forward(s.image, s.voxels);
    const auto metric = metric_output(out.depth.stages.back().value(), cfg.priors);
    SampleEval e;
    e.name = s.name;
    e.report = metrics::evaluate(metric, s.gt, eopt);
    e.final_silog = objective::silog(metric, s.gt, cfg.loss);
    e.mean_event_score = model::mean_event_score(out);
    reports.push_back(e.report);
    r.mean_final_silog += e.final_silog / static_cast<double>(data.size());
    r.mean_event_score += e.mean_event_score / static_cast<double>(data.size());
    r.samples.push_back(std::move(e));
  }
  r.aggregate = metrics::aggregate(reports);
  return r;
}

Prediction predict(const model::PCDepthNet& net, const RunConfig& cfg, const Image& image,
                   const eventrep::VoxelGrid& voxels) {
  ag::NoGradGuard guard;
  const auto out = net.forward(image, voxels);
  Prediction p;
  p.depth = {image.height, image.width, metric_output(out.depth.stages.back().value(), cfg.priors)};
  for (const auto& s : out.depth.stages) p.stages.push_back({image.height, image.width, s.value()});
  p.attention = model::token_attention_maps(out);
  p.attention_height = image.height / 4;
  p.attention_width = image.width / 4;
  p.mean_event_score = model::mean_event_score(out);
  return p;
}

std::unique_ptr<model::PCDepthNet> load_model(const checkpoint::Checkpoint& ckpt) {
  auto net = std::make_unique<model::PCDepthNet>(ckpt.config.model);
  checkpoint::restore(ckpt, *net);
  return net;
}

void dump_stages(const Prediction& p, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t j = 0; j < p.stages.size(); ++j) write_depth(p.stages[j], dir / ("stage_" + std::to_string(j + 1) + ".dpt"));
}

void dump_attention(const Prediction& p, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t t = 0; t < p.attention.size(); ++t) {
    const auto& m = p.attention[t];
    const double hi = m.empty() ? 1.0 : *std::max_element(m.begin(), m.end());
    char name[32];
    std::snprintf(name, sizeof name, "token_%02zu.pgm", t);
    write_pgm(m, p.attention_height, p.attention_width, 0.0, hi > 0 ? hi : 1.0, dir / name);
  }
}

}  // namespace pcdepth::harness
