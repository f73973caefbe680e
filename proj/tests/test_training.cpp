#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "rtd/data/synthetic.hpp"
#include "rtd/training/trainer.hpp"

using namespace rtd;
namespace fs = std::filesystem;

namespace {

struct Toy {
  std::vector<Raster> rasters;
  LabelSet labels;
  ChannelStats stats;
  TrainingData data;
};

// Small scenes with strong, clean blooms so a tiny detector can separate them.
Toy make_toy(std::uint64_t seed, int positives = 2, int negatives = 2) {
  SynthDatasetConfig dc;
  dc.scene.height = dc.scene.width = 64;
  dc.scene.label_count = 30;
  dc.scene.bloom_strength = 3.0;
  dc.scene.noise_std = 0.05;
  dc.scene.fronts = 0;
  dc.scene.warm_patches = 0;
  dc.train_positive = positives;
  dc.train_negative = negatives;
  dc.test_positive = dc.test_negative = 0;
  auto ds = generate_synthetic_dataset(dc, seed);
  Toy t;
  t.stats = compute_channel_stats(ds.train);
  for (const auto& r : ds.train) t.rasters.push_back(normalize(r, t.stats));
  t.labels = ds.train_labels;
  t.data = make_training_data(t.rasters, t.labels);
  return t;
}

TrainConfig tiny_config(TrainMode mode, int iters) {
  TrainConfig c;
  c.mode = mode;
  c.detector.bank_width = 4;
  c.detector.trunk_widths = std::vector<int>(7, 8);
  c.detector.init = DetectorSpec::Init::fan_in;
  c.generator.base_width = 4;
  c.discriminator.widths = {4, 8, 8, 8};
  c.sampler.batch_size = 32;
  c.sampler.window_count = 4;
  for (auto* s : {&c.stage1, &c.stage2, &c.stage3, &c.single}) {
    s->iterations = iters;
    s->lr_drop_every = std::max(1, iters * 2 / 5);
  }
  c.stage2_batch = 16;
  c.stage3_generated = 12;
  c.checkpoint_every = 5;
  return c;
}

std::vector<nlohmann::json> run_collect(const TrainConfig& cfg, const Toy& toy, TrainState* out = nullptr) {
  std::vector<nlohmann::json> tel;
  TrainHooks hooks;
  hooks.telemetry = [&](const nlohmann::json& j) { tel.push_back(j); };
  auto state = init_train_state(cfg, toy.stats);
  Trainer(cfg, toy.data, hooks).run(state);
  if (out) *out = std::move(state);
  return tel;
}

std::string state_digest(const TrainState& s, const TrainConfig& cfg) {
  return digest_hex(encode_checkpoint(state_to_checkpoint(s, cfg)));
}

}  // namespace

TEST(Sgd, HandComputedMomentumStep) {
  ModelParams<double> p, g, v;
  p.add("x", {1}, {});
  p["x"][0] = 1.0;
  g = p.zeros_like();
  v = p.zeros_like();
  g["x"][0] = 2.0 * p["x"][0];
  sgd_step(p, g, v, 0.1, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(p["x"][0], 0.8);
  EXPECT_DOUBLE_EQ(v["x"][0], 0.2);
  g["x"][0] = 2.0 * p["x"][0];
  sgd_step(p, g, v, 0.1, 0.9, 0.0);
  EXPECT_NEAR(v["x"][0], 0.9 * 0.2 + 0.1 * 1.6, 1e-15);
  EXPECT_NEAR(p["x"][0], 0.8 - 0.34, 1e-15);
}

TEST(Sgd, PlainDescentAndWeightDecay) {
  ModelParams<double> p;
  p.add("w", {3}, {});
  p["w"][0] = 1.0;
  p["w"][1] = -2.0;
  p["w"][2] = 0.5;
  auto g = p.zeros_like(), v = p.zeros_like();
  g["w"][1] = 4.0;
  sgd_step(p, g, v, 0.25, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(p["w"][1], -3.0);
  EXPECT_DOUBLE_EQ(p["w"][0], 1.0);
  g = p.zeros_like();
  v = p.zeros_like();
  for (int i = 0; i < 10; ++i) sgd_step(p, g, v, 0.1, 0.0, 0.5);
  EXPECT_NEAR(p["w"][0], std::pow(1.0 - 0.05, 10), 1e-12);
}

TEST(Sgd, NonFiniteGradientLeavesParamsUntouched) {
  ModelParams<float> p;
  p.add("a", {2}, {0.0, 1.0});
  p.add("b", {2}, {0.0, 1.0});
  p.initialize(3);
  const auto before = p;
  auto g = p.zeros_like(), v = p.zeros_like();
  g["a"][0] = 1.0f;
  g["b"][1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(sgd_step(p, g, v, 0.1, 0.9, 0.0), DivergenceError);
  EXPECT_EQ(p, before);
}

TEST(Schedule, StepFunction) {
  const TrainConfig c;
  EXPECT_DOUBLE_EQ(c.stage1.lr_at(0), 0.01);
  EXPECT_DOUBLE_EQ(c.stage1.lr_at(499), 0.01);
  EXPECT_NEAR(c.stage1.lr_at(600), 0.001, 1e-15);
  EXPECT_NEAR(c.stage1.lr_at(1249), 0.0001, 1e-15);
  EXPECT_NEAR(c.single.lr_at(1500), 0.001, 1e-15);
  EXPECT_EQ(c.stage1.iterations, 1250);
  EXPECT_EQ(c.single.iterations, 2500);
  EXPECT_DOUBLE_EQ(c.stage1.momentum, 0.9);
  EXPECT_DOUBLE_EQ(c.stage1.weight_decay, 0.0005);
  EXPECT_DOUBLE_EQ(c.discriminator_lr, 0.0001);
  EXPECT_EQ(c.sampler.batch_size, 256);
}

TEST(Schedule, DiscriminatorLearningRateInTelemetry) {
  auto toy = make_toy(1);
  auto cfg = tiny_config(TrainMode::three_stage, 10);
  cfg.stage1.iterations = 1;
  const auto tel = run_collect(cfg, toy);
  bool seen = false;
  for (const auto& j : tel)
    if (j["stage"] == 2) {
      const double expect = 0.0001 / std::pow(10.0, j["iter"].get<int>() / 4);
      EXPECT_NEAR(j["lr_disc"].get<double>(), expect, 1e-12 * expect);
      seen = true;
    }
  EXPECT_TRUE(seen);
}

TEST(Trainer, ZeroIterationsKeepInitialization) {
  auto toy = make_toy(2);
  auto cfg = tiny_config(TrainMode::single_stage, 0);
  TrainState s;
  const auto tel = run_collect(cfg, toy, &s);
  EXPECT_TRUE(tel.empty());
  EXPECT_TRUE(s.finished);
  EXPECT_EQ(s.detector, init_train_state(cfg).detector);
}

TEST(Trainer, SameSeedSameTelemetryAndParams) {
  auto toy = make_toy(3);
  for (auto mode : {TrainMode::single_stage, TrainMode::three_stage}) {
    auto cfg = tiny_config(mode, 6);
    cfg.seed = 11;
    TrainState a, b;
    const auto ta = run_collect(cfg, toy, &a);
    const auto tb = run_collect(cfg, toy, &b);
    EXPECT_EQ(ta, tb);
    EXPECT_EQ(state_digest(a, cfg), state_digest(b, cfg));
    cfg.seed = 12;
    EXPECT_NE(run_collect(cfg, toy), ta);
  }
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  auto toy = make_toy(4);
  auto cfg = tiny_config(TrainMode::three_stage, 8);
  cfg.seed = 5;
  TrainState full;
  run_collect(cfg, toy, &full);

  auto dir = fs::temp_directory_path() / "rtd_test_resume";
  fs::remove_all(dir);
  for (long long cut : {3LL, 8LL, 13LL, 20LL}) {
    auto state = init_train_state(cfg, toy.stats);
    TrainHooks hooks;
    hooks.stop_after = cut;
    EXPECT_FALSE(Trainer(cfg, toy.data, hooks).run(state));
    save_checkpoint(state_to_checkpoint(state, cfg), dir / "cut.ckpt");
    auto resumed = state_from_checkpoint(load_checkpoint(dir / "cut.ckpt"));
    EXPECT_TRUE(Trainer(cfg, toy.data).run(resumed));
    EXPECT_EQ(state_digest(resumed, cfg), state_digest(full, cfg)) << "cut at " << cut;
  }
}

TEST(Trainer, CheckpointOccasions) {
  auto toy = make_toy(4);
  auto cfg = tiny_config(TrainMode::three_stage, 12);
  std::vector<std::string> seen;
  TrainHooks hooks;
  hooks.checkpoint = [&](const TrainState& s, const std::string& why) {
    seen.push_back(why + ":" + std::to_string(s.stage) + ":" + std::to_string(s.iteration));
  };
  auto state = init_train_state(cfg, toy.stats);
  Trainer(cfg, toy.data, hooks).run(state);
  const std::vector<std::string> expect{"periodic:1:5",  "periodic:1:10", "stage_end:2:0", "periodic:2:5",
                                        "periodic:2:10", "stage_end:3:0", "periodic:3:5",  "periodic:3:10",
                                        "final:3:12"};
  EXPECT_EQ(seen, expect);
}

TEST(Trainer, FrozenNetworksPerStage) {
  auto toy = make_toy(5);
  auto cfg = tiny_config(TrainMode::three_stage, 5);
  auto state = init_train_state(cfg, toy.stats);
  const auto g0 = state.generator, d0 = state.discriminator;
  run_stage_only(state, toy.data, cfg, 1);
  EXPECT_EQ(state.generator, g0);
  EXPECT_EQ(state.discriminator, d0);
  const auto det1 = state.detector;
  run_stage_only(state, toy.data, cfg, 2);
  EXPECT_EQ(state.detector, det1);
  EXPECT_NE(state.generator, g0);
  EXPECT_NE(state.discriminator, d0);
  const auto g2 = state.generator, d2 = state.discriminator;
  run_stage_only(state, toy.data, cfg, 3);
  EXPECT_EQ(state.generator, g2);
  EXPECT_EQ(state.discriminator, d2);
  EXPECT_NE(state.detector, det1);
  EXPECT_TRUE(state.finished);
}

TEST(Trainer, TelemetryRecordsCarryProvenance) {
  auto toy = make_toy(6);
  auto cfg = tiny_config(TrainMode::three_stage, 3);
  const auto tel = run_collect(cfg, toy);
  ASSERT_EQ(tel.size(), 9u);
  for (const auto& j : tel) {
    EXPECT_TRUE(j.contains("stage") && j.contains("iter"));
    if (j["stage"] == 2) {
      EXPECT_TRUE(j.contains("hng_loss") && j.contains("disc_loss"));
    } else {
      EXPECT_TRUE(j.contains("loss") && j.contains("lr") && j.contains("generated_fraction"));
      EXPECT_EQ(j["sampler"]["positives"].get<int>() + j["sampler"]["negatives"].get<int>(), 32);
      if (j["stage"] == 1) EXPECT_EQ(j["generated_fraction"].get<double>(), 0.0);
    }
  }
}

TEST(Trainer, DivergenceEmitsCheckpointAndThrows) {
  auto toy = make_toy(7);
  auto cfg = tiny_config(TrainMode::single_stage, 50);
  cfg.single.base_lr = 1e30;
  std::vector<std::string> seen;
  TrainHooks hooks;
  hooks.checkpoint = [&](const TrainState&, const std::string& why) { seen.push_back(why); };
  auto state = init_train_state(cfg, toy.stats);
  EXPECT_THROW(Trainer(cfg, toy.data, hooks).run(state), DivergenceError);
  EXPECT_EQ(seen, std::vector<std::string>{"divergence"});
}

TEST(Trainer, ToySeparableProblemReachesLowLoss) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto toy = make_toy(20 + seed);
    auto cfg = tiny_config(TrainMode::single_stage, 150);
    cfg.detector.bank_width = 8;
    cfg.detector.trunk_widths = std::vector<int>(7, 16);
    cfg.seed = seed;
    const auto tel = run_collect(cfg, toy);
    double tail = 0.0;
    for (std::size_t i = tel.size() - 5; i < tel.size(); ++i) tail += tel[i]["loss"].get<double>();
    EXPECT_LT(tail / 5, 0.1) << "seed " << seed;
  }
}

TEST(Trainer, DiscriminatorSeparatesGeneratedPatches) {
  auto toy = make_toy(8);
  auto cfg = tiny_config(TrainMode::three_stage, 60);
  cfg.stage1.iterations = 0;
  cfg.discriminator_lr = 0.01;
  cfg.stage2.base_lr = 1e-12;
  cfg.stage2.lr_drop_every = 0;
  auto state = init_train_state(cfg, toy.stats);
  run_stage_only(state, toy.data, cfg, 1);
  run_stage_only(state, toy.data, cfg, 2);

  Rng rng(99);
  const auto real = train_detail::random_real_patches(*toy.data.negatives[0], 200, rng);
  const auto fake = generator_forward(state.generator, cfg.generator, real);
  const auto pr = train_detail::probabilities(discriminator_forward(state.discriminator, cfg.discriminator, real));
  const auto pf = train_detail::probabilities(discriminator_forward(state.discriminator, cfg.discriminator, fake));
  int correct = 0;
  for (std::size_t i = 0; i < pr.size(); ++i) correct += (pr[i] > 0.5) + (pf[i] < 0.5);
  EXPECT_GE(correct, static_cast<int>(0.9 * 2 * pr.size()));
}

TEST(Checkpoint, RoundTripAndCorruption) {
  auto cfg = tiny_config(TrainMode::three_stage, 1);
  cfg.seed = 9;
  auto s = init_train_state(cfg, ChannelStats{std::vector<double>(8, 0.5), std::vector<double>(8, 2.0)});
  s.rng.discard(17);
  const auto bytes = encode_checkpoint(state_to_checkpoint(s, cfg));
  const auto back = state_from_checkpoint(decode_checkpoint(bytes));
  EXPECT_EQ(back.detector, s.detector);
  EXPECT_EQ(back.generator, s.generator);
  EXPECT_EQ(back.discriminator_velocity, s.discriminator_velocity);
  EXPECT_EQ(back.rng, s.rng);
  EXPECT_EQ(back.normalization.stddev, s.normalization.stddev);
  EXPECT_EQ(digest_hex(encode_checkpoint(state_to_checkpoint(back, cfg))), digest_hex(bytes));

  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), IntegrityError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), FormatError);
  EXPECT_THROW(load_checkpoint(fs::temp_directory_path() / "rtd_no_such.ckpt"), IoError);
}

TEST(TrainConfig, RejectsInconsistentSetups) {
  auto cfg = tiny_config(TrainMode::three_stage, 1);
  cfg.generator.in_channels = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_config(TrainMode::three_stage, 1);
  cfg.stage2.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_config(TrainMode::single_stage, 1);
  cfg.sampler.batch_size = 30;
  EXPECT_THROW(cfg.validate(), ConfigError);
  TrainingData empty;
  EXPECT_THROW(Trainer(tiny_config(TrainMode::single_stage, 1), empty), ConfigError);
}
