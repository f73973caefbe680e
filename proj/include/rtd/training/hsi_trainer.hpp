#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtd/data/hsi.hpp"
#include "rtd/evaluation.hpp"
#include "rtd/inference.hpp"
#include "rtd/training/trainer.hpp"

namespace rtd {

// Category training on one hyperspectral scene. With `heg` the detector is
// trained in three stages: detector alone, then the hard example generator
// against a frozen detector and a discriminator, then the detector again on
// real and generated examples. Without it, one stage on real examples.
struct HsiTrainConfig {
  DetectorSpec detector;
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
  bool heg = true;
  StageSchedule stage1{1250, 0.01, 500};
  StageSchedule stage2{1250, 0.01, 500};
  double discriminator_lr = 0.0001;
  StageSchedule stage3{1250, 0.01, 500};
  StageSchedule single{2500, 0.01, 1000};
  int batch_size = 256;
  int generated_per_batch = 64;  // stage 3: generated examples among batch_size
  bool augment = true;
  bool reset_velocity_stage3 = true;
  std::uint64_t seed = 0;

  void validate() const {
    detector.validate();
    if (detector.output_units < 2) throw ConfigError("category training needs at least two output units");
    stage1.validate("stage 1");
    stage2.validate("stage 2");
    stage3.validate("stage 3");
    single.validate("single stage");
    if (!(discriminator_lr > 0.0)) throw ConfigError("discriminator learning rate must be positive");
    if (batch_size <= 0) throw ConfigError("batch size must be positive");
    if (generated_per_batch < 0 || generated_per_batch >= batch_size)
      throw ConfigError("generated examples per batch must lie in [0, batch_size)");
    if (heg) {
      generator.validate();
      discriminator.validate();
      if (generator.in_channels != detector.in_channels || discriminator.in_channels != detector.in_channels)
        throw ConfigError("detector, generator and discriminator disagree on channel count");
    }
  }

  int stage_count() const { return heg ? 3 : 1; }
  const StageSchedule& schedule(int stage) const {
    if (!heg) return single;
    return stage == 1 ? stage1 : stage == 2 ? stage2 : stage3;
  }
};

// A normalized, reflection-padded scene and training samples in its frame.
struct HsiTrainingData {
  const Raster* raster = nullptr;
  std::vector<HsiSample> train;
};

// Normalizes with statistics over the whole cube, pads by the patch radius
// and shifts the samples into the padded frame.
struct PreparedHsiScene {
  Raster padded;
  ChannelStats stats;
  std::vector<HsiSample> train, test;

  HsiTrainingData training_data() const { return {&padded, train}; }
};

inline PreparedHsiScene prepare_hsi_scene(const Raster& cube, const HsiSplit& split) {
  PreparedHsiScene p;
  p.stats = compute_channel_stats(std::vector<const Raster*>{&cube});
  p.padded = reflect_pad(normalize(cube, p.stats), kPatchRadius);
  auto shift = [](std::vector<HsiSample> v) {
    for (auto& s : v) s.pixel = {s.pixel.row + kPatchRadius, s.pixel.col + kPatchRadius};
    return v;
  };
  p.train = shift(split.train);
  p.test = shift(split.test);
  return p;
}

inline TrainState init_hsi_state(const HsiTrainConfig& config, const ChannelStats& normalization = {}) {
  config.validate();
  TrainState s;
  s.rng.seed(config.seed);
  s.detector = init_detector<float>(config.detector, split_seed(s.rng));
  s.detector_velocity = s.detector.zeros_like();
  if (config.heg) {
    s.generator = init_generator<float>(config.generator, split_seed(s.rng));
    s.generator_velocity = s.generator.zeros_like();
    s.discriminator = init_discriminator<float>(config.discriminator, split_seed(s.rng));
    s.discriminator_velocity = s.discriminator.zeros_like();
  }
  s.normalization = normalization;
  return s;
}

inline Checkpoint hsi_state_to_checkpoint(const TrainState& state, const HsiTrainConfig& config) {
  Checkpoint c;
  c.meta["format"] = "rtd-train-state";
  c.meta["mode"] = "hsi";
  c.meta["stage"] = state.stage;
  c.meta["iteration"] = state.iteration;
  c.meta["finished"] = state.finished;
  c.meta["rng"] = rng_state(state.rng);
  c.meta["seed"] = config.seed;
  c.meta["detector_spec"] = to_json(config.detector);
  c.meta["normalization"] = to_json(state.normalization);
  c.groups.emplace_back("detector", state.detector);
  c.groups.emplace_back("detector_velocity", state.detector_velocity);
  if (config.heg) {
    c.meta["generator_spec"] = to_json(config.generator);
    c.meta["discriminator_spec"] = to_json(config.discriminator);
    c.groups.emplace_back("generator", state.generator);
    c.groups.emplace_back("generator_velocity", state.generator_velocity);
    c.groups.emplace_back("discriminator", state.discriminator);
    c.groups.emplace_back("discriminator_velocity", state.discriminator_velocity);
  }
  return c;
}

class HsiTrainer {
 public:
  HsiTrainer(HsiTrainConfig config, const HsiTrainingData& data, TrainHooks hooks = {})
      : config_(std::move(config)), data_(data), hooks_(std::move(hooks)) {
    config_.validate();
    if (!data_.raster) throw ConfigError("no training raster");
    if (data_.train.empty()) throw ConfigError("no training samples");
    for (const auto& s : data_.train) {
      if (!patch_fits(*data_.raster, s.pixel.row, s.pixel.col))
        throw OutOfBoundsError("training sample patch leaves the padded raster");
      if (s.category < 0 || s.category >= config_.detector.output_units)
        throw LabelError("training category out of range");
    }
  }

  bool run(TrainState& state) {
    long long budget = hooks_.stop_after.value_or(-1);
    while (!state.finished) {
      if (budget == 0) return false;
      const StageSchedule& sched = config_.schedule(state.stage);
      if (state.iteration >= sched.iterations) {
        if (state.stage >= config_.stage_count()) {
          state.finished = true;
          if (hooks_.checkpoint) hooks_.checkpoint(state, "final");
        } else {
          ++state.stage;
          state.iteration = 0;
          if (hooks_.checkpoint) hooks_.checkpoint(state, "stage_end");
        }
        continue;
      }
      if (state.iteration == 0 && config_.heg && state.stage == 3 && config_.reset_velocity_stage3)
        state.detector_velocity = state.detector.zeros_like();
      try {
        if (!config_.heg || state.stage == 1)
          detector_step(state, sched, false);
        else if (state.stage == 2)
          generator_step(state);
        else
          detector_step(state, sched, true);
      } catch (const DivergenceError&) {
        if (hooks_.checkpoint) hooks_.checkpoint(state, "divergence");
        throw;
      }
      ++state.iteration;
      if (budget > 0) --budget;
    }
    return true;
  }

 private:
  std::vector<HsiSample> draw(int count, Rng& rng) const {
    std::vector<HsiSample> out;
    out.reserve(static_cast<std::size_t>(count));
    const int n = static_cast<int>(data_.train.size());
    for (int i = 0; i < count; ++i) out.push_back(data_.train[static_cast<std::size_t>(uniform_int(rng, 0, n - 1))]);
    return out;
  }

  Tensor<float> patches(const std::vector<HsiSample>& samples, Rng& rng) const {
    std::vector<PixelCoord> centers;
    for (const auto& s : samples) centers.push_back(s.pixel);
    auto batch = sampling::gather_patches(*data_.raster, centers);
    if (!config_.augment) return batch;
    const auto group = mirror_group(kHorizontal | kVertical | kDiagonal);
    const int C = batch.dim(1);
    const std::size_t len = static_cast<std::size_t>(C) * kPatchSize * kPatchSize;
    std::vector<float> tmp(len);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      float* p = batch.data() + i * len;
      std::copy_n(p, len, tmp.data());
      group[static_cast<std::size_t>(uniform_int(rng, 0, 7))].apply(tmp.data(), p, C, kPatchSize);
    }
    return batch;
  }

  // Per-class sigmoid cross-entropy on logits [K x N]; fills dlogits.
  losses::LossValue category_loss(const nn::Mat<float>& logits, const std::vector<int>& labels,
                                  nn::Mat<float>& dlogits) const {
    const auto K = logits.rows(), N = logits.cols();
    std::vector<double> scores(static_cast<std::size_t>(K * N));
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index k = 0; k < K; ++k) scores[static_cast<std::size_t>(i * K + k)] = nn::sigmoid<double>(logits(k, i));
    const auto loss = losses::hsi_detector_loss(std::span<const double>(scores), std::span<const int>(labels),
                                                static_cast<int>(K));
    dlogits.resize(K, N);
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index k = 0; k < K; ++k)
        dlogits(k, i) = losses::logit_grad(static_cast<float>(scores[static_cast<std::size_t>(i * K + k)]),
                                           labels[static_cast<std::size_t>(i)] == k ? 1.0 : 0.0,
                                           static_cast<std::size_t>(N));
    return loss;
  }

  void detector_step(TrainState& state, const StageSchedule& sched, bool with_generated) {
    const int t = state.iteration;
    const int gen = with_generated ? config_.generated_per_batch : 0;
    auto samples = draw(config_.batch_size, state.rng);
    Tensor<float> batch = patches(samples, state.rng);
    if (gen > 0) {
      const int C = batch.dim(1);
      const std::size_t len = static_cast<std::size_t>(C) * kPatchSize * kPatchSize;
      const auto src = draw(gen, state.rng);
      const auto fake = generator_forward(state.generator, config_.generator, patches(src, state.rng));
      const std::size_t offset = static_cast<std::size_t>(config_.batch_size - gen);
      std::copy_n(fake.data(), static_cast<std::size_t>(gen) * len, batch.data() + offset * len);
      for (int i = 0; i < gen; ++i) samples[offset + static_cast<std::size_t>(i)] = src[static_cast<std::size_t>(i)];
    }
    std::vector<int> labels;
    for (const auto& s : samples) labels.push_back(s.category);

    DetectorTrace<float> trace;
    const auto logits = detector_train_forward(state.detector, config_.detector, batch, &state.rng, &trace);
    nn::Mat<float> dlogits;
    const auto loss = category_loss(logits, labels, dlogits);
    train_detail::check_finite(loss.scalar, "detector loss");
    const auto grads = detector_train_backward(state.detector, config_.detector, trace, dlogits);
    const double lr = sched.lr_at(t);
    sgd_step(state.detector, grads.params, state.detector_velocity, lr, sched.momentum, sched.weight_decay);

    int correct = 0;
    for (Eigen::Index i = 0; i < logits.cols(); ++i) {
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < logits.rows(); ++k)
        if (logits(k, i) > logits(best, i)) best = k;
      correct += best == labels[static_cast<std::size_t>(i)];
    }
    emit({{"stage", config_.heg ? state.stage : 0},
          {"iter", t},
          {"lr", lr},
          {"loss", loss.scalar},
          {"batch_accuracy", static_cast<double>(correct) / static_cast<double>(labels.size())},
          {"generated_fraction", static_cast<double>(gen) / static_cast<double>(labels.size())},
          {"clamped", loss.clamped}});
  }

  // Discriminator step on real vs generated examples, then a generator step
  // pushing each generated example towards its highest-loss wrong category.
  void generator_step(TrainState& state) {
    using namespace train_detail;
    const int t = state.iteration;
    const auto samples = draw(config_.batch_size, state.rng);
    const auto real = patches(samples, state.rng);
    const auto n = static_cast<std::size_t>(real.dim(0));

    GeneratorTrace<float> gtrace;
    const Tensor<float> fake = generator_forward(state.generator, config_.generator, real, &gtrace);

    DiscriminatorTrace<float> rtrace, ftrace;
    const auto d_real = probabilities(discriminator_forward(state.discriminator, config_.discriminator, real, &rtrace));
    const auto d_fake = probabilities(discriminator_forward(state.discriminator, config_.discriminator, fake, &ftrace));
    const auto dloss = losses::discriminator_loss(std::span<const double>(d_real), std::span<const double>(d_fake));
    check_finite(dloss.scalar, "discriminator loss");
    std::vector<float> g_real(n), g_fake(n);
    for (std::size_t i = 0; i < n; ++i) {
      g_real[i] = losses::logit_grad(static_cast<float>(d_real[i]), 1.0, n);
      g_fake[i] = losses::logit_grad(static_cast<float>(d_fake[i]), 0.0, n);
    }
    auto dgrads = discriminator_backward(state.discriminator, config_.discriminator, rtrace, g_real).params;
    const auto dgf = discriminator_backward(state.discriminator, config_.discriminator, ftrace, g_fake).params;
    for (std::size_t e = 0; e < dgrads.entries().size(); ++e)
      for (std::size_t i = 0; i < dgrads.entries()[e].tensor.size(); ++i)
        dgrads.entries()[e].tensor[i] += dgf.entries()[e].tensor[i];
    const double lr_g = config_.stage2.lr_at(t);
    const double lr_d = lr_g * config_.discriminator_lr / config_.stage2.base_lr;
    sgd_step(state.discriminator, dgrads, state.discriminator_velocity, lr_d, config_.stage2.momentum,
             config_.stage2.weight_decay);

    DetectorTrace<float> dtrace;
    const auto det_logits = detector_train_forward(state.detector, config_.detector, fake, nullptr, &dtrace);
    const auto K = det_logits.rows();
    std::vector<int> adversarial(n);
    int flipped = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> probs(static_cast<std::size_t>(K));
      for (Eigen::Index k = 0; k < K; ++k)
        probs[static_cast<std::size_t>(k)] = nn::sigmoid<double>(det_logits(k, static_cast<Eigen::Index>(i)));
      const auto per = losses::per_category_losses(std::span<const double>(probs));
      adversarial[i] = losses::heg_adversarial_label(per, samples[i].category);
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < K; ++k)
        if (probs[static_cast<std::size_t>(k)] > probs[static_cast<std::size_t>(best)]) best = k;
      flipped += best != samples[i].category;
    }
    nn::Mat<float> g_det;
    const auto closs = category_loss(det_logits, adversarial, g_det);
    DiscriminatorTrace<float> atrace;
    const auto adv_p = probabilities(discriminator_forward(state.discriminator, config_.discriminator, fake, &atrace));
    const auto aloss = losses::detector_loss(std::span<const double>(adv_p), 1);
    const double hloss = closs.scalar + aloss.scalar;
    check_finite(hloss, "generator loss");
    std::vector<float> g_adv(n);
    for (std::size_t i = 0; i < n; ++i) g_adv[i] = losses::logit_grad(static_cast<float>(adv_p[i]), 1.0, n);
    auto dfake = detector_train_backward(state.detector, config_.detector, dtrace, g_det, true).input;
    const auto afake = discriminator_backward(state.discriminator, config_.discriminator, atrace, g_adv, true).input;
    nn::add_inplace(dfake, afake);
    const auto ggrads = generator_backward(state.generator, config_.generator, gtrace, dfake);
    sgd_step(state.generator, ggrads, state.generator_velocity, lr_g, config_.stage2.momentum,
             config_.stage2.weight_decay);

    emit({{"stage", 2},
          {"iter", t},
          {"lr_heg", lr_g},
          {"lr_disc", lr_d},
          {"disc_loss", dloss.scalar},
          {"heg_loss", hloss},
          {"misclassified_fraction", static_cast<double>(flipped) / static_cast<double>(n)},
          {"clamped", dloss.clamped + closs.clamped + aloss.clamped}});
  }

  void emit(const nlohmann::json& record) {
    if (hooks_.telemetry) hooks_.telemetry(record);
  }

  HsiTrainConfig config_;
  const HsiTrainingData& data_;
  TrainHooks hooks_;
};

// Argmax category at each sample pixel of a padded scene.
inline std::vector<int> hsi_predict(const ModelParams<float>& params, const DetectorSpec& spec, const Raster& padded,
                                    const std::vector<HsiSample>& samples) {
  const auto map = sliding_window_infer(padded, params, spec);
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    int best = 0;
    for (int k = 1; k < map.units(); ++k)
      if (map.at(s.pixel.row, s.pixel.col, k) > map.at(s.pixel.row, s.pixel.col, best)) best = k;
    out.push_back(best);
  }
  return out;
}

struct HsiRunResult {
  AccuracySummary accuracy;
  std::vector<std::string> warnings;
};

// Repeats split, training and testing over `repeats` seeds derived from
// config.seed and reports overall accuracy mean and sample std.
inline HsiRunResult run_hsi_experiment(const HsiScene& scene, HsiTrainConfig config, int per_class, int repeats,
                                       const TelemetrySink& telemetry = {}) {
  if (repeats <= 0) throw ConfigError("repeats must be positive");
  config.detector.in_channels = config.generator.in_channels = config.discriminator.in_channels = scene.cube.channels();
  config.detector.output_units = static_cast<int>(scene.labels.classes.size());
  HsiRunResult result;
  std::vector<std::pair<std::vector<int>, std::vector<int>>> splits;
  const std::uint64_t base = config.seed;
  for (int rep = 0; rep < repeats; ++rep) {
    Rng split_rng(base + 7919u * static_cast<std::uint64_t>(rep));
    const auto split = split_hsi(scene.labels, scene.cube.id(), per_class, split_rng);
    if (rep == 0) result.warnings = split.warnings;
    const auto prepared = prepare_hsi_scene(scene.cube, split);
    config.seed = base + static_cast<std::uint64_t>(rep);
    auto state = init_hsi_state(config, prepared.stats);
    const auto data = prepared.training_data();
    TrainHooks hooks;
    hooks.telemetry = telemetry;
    HsiTrainer(config, data, hooks).run(state);
    std::vector<int> truth;
    for (const auto& s : prepared.test) truth.push_back(s.category);
    splits.emplace_back(hsi_predict(state.detector, config.detector, prepared.padded, prepared.test), std::move(truth));
  }
  result.accuracy = hsi_accuracy(splits);
  return result;
}

}  // namespace rtd
