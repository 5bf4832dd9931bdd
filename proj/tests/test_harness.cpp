#include "pcdepth/checkpoint.hpp"
#include "pcdepth/config.hpp"
#include "pcdepth/harness.hpp"
#include "pcdepth/synthdata.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

using namespace pcdepth;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("pcdepth_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RunConfig micro_config(const fs::path& out) {
  auto cfg = preset("micro");
  cfg.optim.steps = 3;
  cfg.output_dir = out.string();
  return cfg;
}

// Two 32x32 samples shared by the tests below.
const fs::path& micro_split() {
  static const fs::path dir = [] {
    const auto d = scratch("split");
    synthdata::SceneSpec spec;
    spec.seed = 77;
    spec.height = spec.width = 32;
    spec.n_objects = 1;
    synthdata::build_split(spec, 2, d);
    return d;
  }();
  return dir;
}

std::vector<harness::LoadedSample> micro_data() {
  return harness::load_dataset(micro_split() / synthdata::kManifestName, 3);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PCDEPTH_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsMatchPublishedSettings) {
  const auto c = preset("default");
  EXPECT_EQ(c.model.time_bins, 3);
  EXPECT_EQ(c.model.discretize_iters, 4);
  EXPECT_EQ(c.model.refine_iters, 4);
  EXPECT_EQ(c.model.token_count, 32);
  EXPECT_EQ(c.model.token_dim, 128);
  EXPECT_EQ(c.loss.alpha, 10.0);
  EXPECT_EQ(c.loss.lambda, 0.15);
  EXPECT_EQ(c.loss.gamma, 0.8);
  EXPECT_EQ(c.optim.lr, 2e-4);
  EXPECT_FALSE(c.max_eval_depth.has_value());
}

TEST(Config, SerializeParseRoundTrip) {
  for (const char* name : {"default", "tiny", "micro"}) {
    auto c = preset(name);
    c.max_eval_depth = 42.5;
    c.train_manifest = "x/manifest.csv";
    c.model.fusion = FusionStyle::add;
    const auto text = serialize(c);
    EXPECT_EQ(serialize(parse_config(text)), text) << name;
  }
}

TEST(Config, OverridesAndErrors) {
  auto c = preset("micro");
  apply_overrides(c, {"refine_iters=3", "lr = 0.01", "score_granularity=token"});
  EXPECT_EQ(c.loss.stages, 3);
  EXPECT_EQ(c.optim.lr, 0.01);
  EXPECT_EQ(c.model.score_granularity, ScoreGranularity::token);
  EXPECT_THROW(apply_overrides(c, {"nope=1"}), ConfigError);
  EXPECT_THROW(apply_overrides(c, {"steps=abc"}), ConfigError);
  EXPECT_THROW(apply_overrides(c, {"steps"}), ConfigError);
  EXPECT_THROW(preset("huge"), ConfigError);
  c.model.prediction_scale = 6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Checkpoint, RoundTripGivesBitwiseEqualForward) {
  auto cfg = preset("micro");
  const auto data = micro_data();
  model::PCDepthNet a(cfg.model);
  harness::TrainOptions opt;
  opt.write_outputs = false;
  cfg.optim.steps = 2;
  harness::train(a, cfg, data, opt);

  const auto bytes = checkpoint::encode(checkpoint::capture(a, cfg, 2));
  const auto ckpt = checkpoint::decode(bytes);
  EXPECT_EQ(ckpt.step, 2u);
  EXPECT_EQ(serialize(ckpt.config), serialize(cfg));
  auto b = harness::load_model(ckpt);
  const auto pa = harness::predict(a, cfg, data[0].image, data[0].voxels);
  const auto pb = harness::predict(*b, cfg, data[0].image, data[0].voxels);
  EXPECT_EQ(pa.depth.data, pb.depth.data);

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(checkpoint::decode(truncated), checkpoint::CheckpointError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(checkpoint::decode(extra), checkpoint::CheckpointError);
  auto other = preset("micro");
  other.model.token_count = 2;
  model::PCDepthNet wrong(other.model);
  EXPECT_THROW(checkpoint::restore(ckpt, wrong), checkpoint::CheckpointError);
}

TEST(Train, OneStepProducesLoadableCheckpointAndLog) {
  const auto out = scratch("one_step");
  auto cfg = micro_config(out);
  cfg.optim.steps = 1;
  model::PCDepthNet net(cfg.model);
  const auto r = harness::train(net, cfg, micro_data());
  EXPECT_EQ(r.steps, 1);
  ASSERT_TRUE(fs::exists(r.checkpoint));
  const auto ckpt = checkpoint::read(r.checkpoint);
  EXPECT_EQ(ckpt.step, 1u);
  ASSERT_TRUE(ckpt.optimizer.has_value());
  EXPECT_EQ(ckpt.optimizer->t, 1u);
  EXPECT_NO_THROW(harness::load_model(ckpt));
  std::ifstream log(out / "train_log.csv");
  std::string header, line;
  std::getline(log, header);
  EXPECT_EQ(header, "step,stage,silog,weighted_loss,total,lr");
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, cfg.model.refine_iters);
}

TEST(Train, CheckpointCadence) {
  const auto out = scratch("cadence");
  auto cfg = micro_config(out);
  cfg.optim.steps = 4;
  cfg.optim.checkpoint_every = 2;
  model::PCDepthNet net(cfg.model);
  harness::train(net, cfg, micro_data());
  EXPECT_TRUE(fs::exists(out / "checkpoint_2.ckpt"));
  EXPECT_FALSE(fs::exists(out / "checkpoint_4.ckpt"));
  EXPECT_TRUE(fs::exists(out / "checkpoint.ckpt"));
}

TEST(Train, FixedSeedGivesIdenticalLossCurve) {
  auto cfg = micro_config(scratch("det"));
  cfg.optim.batch = 2;
  const auto data = micro_data();
  auto run = [&] {
    std::vector<double> curve;
    harness::TrainOptions opt;
    opt.write_outputs = false;
    opt.on_step = [&](const harness::StepLog& s) { curve.push_back(s.total); };
    model::PCDepthNet net(cfg.model);
    harness::train(net, cfg, data, opt);
    return std::make_pair(curve, checkpoint::capture(net, cfg, 0).params);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Train, NonFiniteLossAbortsWithDump) {
  const auto out = scratch("nan");
  auto cfg = micro_config(out);
  auto data = micro_data();
  data[0].image.data[10] = std::nan("");
  data[1].image.data[10] = std::nan("");
  model::PCDepthNet net(cfg.model);
  EXPECT_THROW(harness::train(net, cfg, data), harness::NumericalFailure);
  EXPECT_TRUE(fs::exists(out / "nan_dump" / "info.txt"));
  EXPECT_TRUE(fs::exists(out / "nan_dump" / "sample_0.ppm"));
}

TEST(Evaluate, OraclePredictionIsPerfect) {
  for (const auto& s : micro_data()) {
    const auto r = metrics::evaluate(s.gt.depth, s.gt);
    EXPECT_EQ(r.a1, 1.0);
    EXPECT_EQ(r.rel, 0.0);
  }
}

TEST(Evaluate, ReportsPerSampleAndAggregate) {
  const auto cfg = preset("micro");
  model::PCDepthNet net(cfg.model);
  const auto r = harness::evaluate(net, cfg, micro_data());
  EXPECT_EQ(r.samples.size(), 2u);
  EXPECT_EQ(r.aggregate.n_valid, 2u * 32 * 32);
  EXPECT_GT(r.mean_event_score, 0.0);
  EXPECT_LT(r.mean_event_score, 1.0);
}

TEST(Dataset, EmptyManifestIsAnError) {
  const auto d = scratch("empty");
  synthdata::write_manifest({}, d / "manifest.csv");
  EXPECT_THROW(harness::load_dataset(d / "manifest.csv", 3), harness::DataError);
  EXPECT_THROW(harness::load_dataset(d / "absent.csv", 3), harness::DataError);
}

TEST(Dataset, MissingFilesAreAllListed) {
  const auto d = scratch("missing");
  synthdata::write_manifest({{"a.ppm", "a.evt", "a.dpt"}, {"b.ppm", "b.evt", "b.dpt"}}, d / "manifest.csv");
  try {
    harness::load_dataset(d / "manifest.csv", 3);
    FAIL();
  } catch (const harness::DataError& e) {
    const std::string msg = e.what();
    for (const char* f : {"a.ppm", "a.evt", "a.dpt", "b.ppm", "b.evt", "b.dpt"})
      EXPECT_NE(msg.find(f), std::string::npos) << f;
  }
}

TEST(Inference, SensorMismatchIsAnError) {
  const auto data = micro_data();
  auto grid = data[0].voxels;
  grid.sensor = {16, 64};
  EXPECT_THROW(model::prepare_inputs(data[0].image, grid), std::invalid_argument);
}

TEST(Inference, EmptyEventStreamGivesZeroGrid) {
  eventrep::EventStream s;
  s.sensor = {32, 32};
  const auto g = harness::voxelize_for_model(s, 3);
  EXPECT_EQ(g.data, std::vector<double>(3 * 32 * 32, 0.0));
}

TEST(Cli, ExitCodesAndInferenceDumps) {
  const auto out = scratch("cli");
  const std::string manifest = (micro_split() / synthdata::kManifestName).string();
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("train --preset nope"), 1);
  EXPECT_EQ(run_cli("train --preset micro --set bogus=1 --train-manifest " + manifest), 1);
  EXPECT_EQ(run_cli("train --preset micro --set batch=0 --train-manifest " + manifest), 1);
  EXPECT_EQ(run_cli("train --preset micro --train-manifest " + (out / "none.csv").string()), 2);
  ASSERT_EQ(run_cli("train --preset micro --set steps=1 --train-manifest " + manifest + " --output-dir " +
                    (out / "run").string()),
            0);
  const auto ckpt = (out / "run" / "checkpoint.ckpt").string();
  EXPECT_EQ(run_cli("eval --checkpoint " + ckpt + " --manifest " + manifest + " --manifest " + manifest + " --csv " +
                    (out / "eval.csv").string()),
            0);
  {
    std::ifstream csv(out / "eval.csv");
    int lines = 0;
    for (std::string l; std::getline(csv, l);) ++lines;
    EXPECT_EQ(lines, 3);
  }
  EXPECT_EQ(run_cli("eval --checkpoint " + (out / "missing.ckpt").string() + " --manifest " + manifest), 2);

  const auto img = (micro_split() / "sample_0000.ppm").string();
  const auto evt = (micro_split() / "sample_0000.evt").string();
  ASSERT_EQ(run_cli("infer --checkpoint " + ckpt + " --image " + img + " --events " + evt + " --out " +
                    (out / "pred.dpt").string() + " --dump-stages " + (out / "stages").string() + " --dump-attn " +
                    (out / "attn").string()),
            0);
  const auto depth = read_depth(out / "pred.dpt");
  EXPECT_EQ(depth.height, 32);
  EXPECT_EQ(depth.width, 32);
  const auto cfg = preset("micro");
  for (double d : depth.data) {
    EXPECT_GE(d, cfg.priors.d_min * (1 - 1e-6));
    EXPECT_LE(d, cfg.priors.d_max * (1 + 1e-6));
  }
  for (int j = 1; j <= cfg.model.refine_iters; ++j) EXPECT_TRUE(fs::exists(out / "stages" / ("stage_" + std::to_string(j) + ".dpt")));
  int maps = 0;
  for (const auto& e : fs::directory_iterator(out / "attn")) maps += e.path().extension() == ".pgm";
  EXPECT_EQ(maps, cfg.model.token_count);

  eventrep::EventStream small;
  small.sensor = {16, 16};
  small.events.push_back({1, 1, 0, 1});
  eventrep::write_events(small, out / "small.evt");
  EXPECT_EQ(run_cli("infer --checkpoint " + ckpt + " --image " + img + " --events " + (out / "small.evt").string() +
                    " --out " + (out / "x.dpt").string()),
            2);
}

TEST(Cli, VoxelizeAndMakeSynth) {
  const auto out = scratch("cli_tools");
  ASSERT_EQ(run_cli("make-synth --out " + (out / "split").string() + " --count 2 --seed 4 --height 32 --width 32"), 0);
  EXPECT_EQ(synthdata::read_manifest(out / "split" / synthdata::kManifestName).size(), 2u);
  ASSERT_EQ(run_cli("voxelize --events " + (out / "split" / "sample_0000.evt").string() + " --bins 5 --out " +
                    (out / "g.vox").string()),
            0);
  const auto g = read_voxels(out / "g.vox");
  EXPECT_EQ(g.time_bins, 5);
  EXPECT_EQ(g.sensor, (eventrep::SensorSize{32, 32}));
  EXPECT_EQ(run_cli("voxelize --events " + (out / "nothing.evt").string() + " --out " + (out / "g.vox").string()), 2);
}
