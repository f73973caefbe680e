#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtd/core/error.hpp"
#include "rtd/core/rng.hpp"
#include "rtd/data/labels.hpp"
#include "rtd/data/raster.hpp"
#include "rtd/losses.hpp"
#include "rtd/models/detector.hpp"
#include "rtd/models/discriminator.hpp"
#include "rtd/models/generator.hpp"
#include "rtd/sampling.hpp"
#include "rtd/training/checkpoint.hpp"
#include "rtd/training/optimizer.hpp"

namespace rtd {

enum class TrainMode { single_stage, three_stage };

struct TrainConfig {
  TrainMode mode = TrainMode::three_stage;
  bool cohem = true;  // single-stage only; the three-stage mode always mines
  DetectorSpec detector;
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
  sampling::SamplerConfig sampler;
  StageSchedule stage1{1250, 0.01, 500};
  StageSchedule stage2{1250, 0.01, 500};  // generator; the discriminator shares the drop steps
  double discriminator_lr = 0.0001;
  StageSchedule stage3{1250, 0.01, 500};
  StageSchedule single{2500, 0.01, 1000};
  int stage2_batch = 256;
  int stage3_generated = 192;  // real negatives pushed through the generator per stage-3 iteration
  bool reset_velocity_stage3 = true;
  int checkpoint_every = 250;
  std::uint64_t seed = 0;

  void validate() const {
    detector.validate();
    sampler.validate();
    stage1.validate("stage 1");
    stage2.validate("stage 2");
    stage3.validate("stage 3");
    single.validate("single stage");
    if (!(discriminator_lr > 0.0)) throw ConfigError("discriminator learning rate must be positive");
    if (mode == TrainMode::three_stage) {
      generator.validate();
      discriminator.validate();
      if (generator.in_channels != detector.in_channels || discriminator.in_channels != detector.in_channels)
        throw ConfigError("detector, generator and discriminator disagree on channel count");
      if (detector.output_units != 1) throw ConfigError("three-stage detection training needs one output unit");
    }
    if (stage2_batch <= 0 || stage3_generated < 0) throw ConfigError("stage batch sizes must be positive");
    if (checkpoint_every < 0) throw ConfigError("checkpoint interval must be >= 0");
  }

  int stage_count() const { return mode == TrainMode::three_stage ? 3 : 1; }
  const StageSchedule& schedule(int stage) const {
    if (mode == TrainMode::single_stage) return single;
    return stage == 1 ? stage1 : stage == 2 ? stage2 : stage3;
  }
};

// Networks, optimizer buffers, progress and the one engine behind every
// stochastic choice. `stage` counts from 1; `iteration` is the next
// iteration to run within it.
struct TrainState {
  ModelParams<float> detector, generator, discriminator;
  ModelParams<float> detector_velocity, generator_velocity, discriminator_velocity;
  int stage = 1;
  int iteration = 0;
  bool finished = false;
  Rng rng;
  ChannelStats normalization;
};

// Normalized rasters split into positive rasters (with their labeled
// centers) and negative rasters, in id order.
struct TrainingData {
  std::vector<const Raster*> positives;
  std::vector<std::vector<PixelCoord>> positive_centers;
  std::vector<const Raster*> negatives;

  void validate() const {
    if (positives.empty()) throw ConfigError("training needs at least one positive raster");
    if (negatives.empty()) throw ConfigError("training needs at least one negative raster");
  }
};

inline TrainingData make_training_data(const std::vector<Raster>& rasters, const LabelSet& labels) {
  TrainingData d;
  auto find = [&](const std::string& id) -> const Raster* {
    for (const auto& r : rasters)
      if (r.id() == id) return &r;
    return nullptr;
  };
  labels.validate(find);
  for (const auto& [id, coords] : labels.positives) {
    d.positives.push_back(find(id));
    d.positive_centers.push_back(coords);
  }
  auto neg = labels.negative_raster_ids;
  std::sort(neg.begin(), neg.end());
  for (const auto& id : neg) d.negatives.push_back(find(id));
  return d;
}

using TelemetrySink = std::function<void(const nlohmann::json&)>;
// Called after periodic steps, at stage boundaries and before a divergence
// abort; the string names the occasion ("periodic", "stage_end", "final",
// "divergence").
using CheckpointSink = std::function<void(const TrainState&, const std::string&)>;

struct TrainHooks {
  TelemetrySink telemetry;
  CheckpointSink checkpoint;
  std::optional<long long> stop_after;  // total iterations to run in this call (simulated interruption)
};

// ---------------------------------------------------------------- serialization

inline nlohmann::json to_json(const DetectorSpec& s) {
  return {{"in_channels", s.in_channels},       {"bank_width", s.bank_width},
          {"trunk_widths", s.trunk_widths},     {"residual_layers", s.residual_layers},
          {"dropout_layers", s.dropout_layers}, {"dropout_rate", s.dropout_rate},
          {"output_units", s.output_units},     {"init_std", s.init_std},
          {"residual_init_std", s.residual_init_std},
          {"init", s.init == DetectorSpec::Init::fan_in ? "fan_in" : "fixed"}};
}

inline DetectorSpec detector_spec_from_json(const nlohmann::json& j) {
  DetectorSpec s;
  s.in_channels = j.at("in_channels");
  s.bank_width = j.at("bank_width");
  s.trunk_widths = j.at("trunk_widths").get<std::vector<int>>();
  s.residual_layers = j.at("residual_layers").get<std::vector<int>>();
  s.dropout_layers = j.at("dropout_layers").get<std::vector<int>>();
  s.dropout_rate = j.at("dropout_rate");
  s.output_units = j.at("output_units");
  s.init_std = j.at("init_std");
  s.residual_init_std = j.at("residual_init_std");
  s.init = j.value("init", "fixed") == "fan_in" ? DetectorSpec::Init::fan_in : DetectorSpec::Init::fixed;
  s.validate();
  return s;
}

inline nlohmann::json to_json(const GeneratorSpec& s) {
  return {{"in_channels", s.in_channels},
          {"base_width", s.base_width},
          {"residual_output", s.residual_output},
          {"init_std", s.init_std},
          {"last_init_std", s.last_init_std},
          {"output_bound", s.output_bound}};
}

inline nlohmann::json to_json(const DiscriminatorSpec& s) {
  return {{"in_channels", s.in_channels}, {"widths", s.widths}, {"init_gain", s.init_gain}};
}

inline nlohmann::json to_json(const ChannelStats& s) { return {{"mean", s.mean}, {"std", s.stddev}}; }

inline ChannelStats channel_stats_from_json(const nlohmann::json& j) {
  ChannelStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("std").get<std::vector<double>>();
  return s;
}

inline Checkpoint state_to_checkpoint(const TrainState& state, const TrainConfig& config) {
  Checkpoint c;
  c.meta["format"] = "rtd-train-state";
  c.meta["mode"] = config.mode == TrainMode::three_stage ? "rtd-3stage" : "rtd-single";
  c.meta["stage"] = state.stage;
  c.meta["iteration"] = state.iteration;
  c.meta["finished"] = state.finished;
  c.meta["rng"] = rng_state(state.rng);
  c.meta["seed"] = config.seed;
  c.meta["detector_spec"] = to_json(config.detector);
  c.meta["normalization"] = to_json(state.normalization);
  c.groups.emplace_back("detector", state.detector);
  c.groups.emplace_back("detector_velocity", state.detector_velocity);
  if (config.mode == TrainMode::three_stage) {
    c.meta["generator_spec"] = to_json(config.generator);
    c.meta["discriminator_spec"] = to_json(config.discriminator);
    c.groups.emplace_back("generator", state.generator);
    c.groups.emplace_back("generator_velocity", state.generator_velocity);
    c.groups.emplace_back("discriminator", state.discriminator);
    c.groups.emplace_back("discriminator_velocity", state.discriminator_velocity);
  }
  return c;
}

inline TrainState state_from_checkpoint(const Checkpoint& c) {
  if (c.meta.value("format", "") != "rtd-train-state") throw FormatError("checkpoint is not a training state");
  TrainState s;
  s.stage = c.meta.at("stage");
  s.iteration = c.meta.at("iteration");
  s.finished = c.meta.at("finished");
  restore_rng(s.rng, c.meta.at("rng"));
  s.normalization = channel_stats_from_json(c.meta.at("normalization"));
  s.detector = c.group("detector");
  s.detector_velocity = c.group("detector_velocity");
  if (c.has_group("generator")) {
    s.generator = c.group("generator");
    s.generator_velocity = c.group("generator_velocity");
    s.discriminator = c.group("discriminator");
    s.discriminator_velocity = c.group("discriminator_velocity");
  }
  return s;
}

// ---------------------------------------------------------------- trainer

inline TrainState init_train_state(const TrainConfig& config, const ChannelStats& normalization = {}) {
  config.validate();
  TrainState s;
  s.rng.seed(config.seed);
  s.detector = init_detector<float>(config.detector, split_seed(s.rng));
  s.detector_velocity = s.detector.zeros_like();
  if (config.mode == TrainMode::three_stage) {
    s.generator = init_generator<float>(config.generator, split_seed(s.rng));
    s.generator_velocity = s.generator.zeros_like();
    s.discriminator = init_discriminator<float>(config.discriminator, split_seed(s.rng));
    s.discriminator_velocity = s.discriminator.zeros_like();
  }
  s.normalization = normalization;
  return s;
}

namespace train_detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

template <typename T>
std::vector<double> probabilities(const nn::Mat<T>& logits) {
  std::vector<double> p(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index i = 0; i < logits.size(); ++i) p[static_cast<std::size_t>(i)] = nn::sigmoid<double>(logits.data()[i]);
  return p;
}

template <typename T>
std::vector<double> probabilities(const std::vector<T>& logits) {
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = nn::sigmoid<double>(logits[i]);
  return p;
}

inline void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw DivergenceError(what + " is not finite");
}

// `count` random 25 x 25 patches, fully evaluable, from one raster.
inline Tensor<float> random_real_patches(const Raster& raster, int count, Rng& rng) {
  sampling::SamplerConfig cfg;
  cfg.window_height = cfg.window_width = kPatchSize;
  cfg.window_count = count;
  const auto windows = sampling::sample_negative_windows(raster, cfg, rng);
  std::vector<PixelCoord> centers;
  for (const auto& w : windows) centers.push_back({w.row + kPatchRadius, w.col + kPatchRadius});
  return sampling::gather_patches(raster, centers);
}

}  // namespace train_detail

class Trainer {
 public:
  Trainer(TrainConfig config, const TrainingData& data, TrainHooks hooks = {})
      : config_(std::move(config)), data_(data), hooks_(std::move(hooks)) {
    config_.validate();
    data_.validate();
  }

  const TrainConfig& config() const { return config_; }

  // Runs from the state's current position to the end of the schedule (or
  // until hooks.stop_after iterations have run). Returns true when finished.
  bool run(TrainState& state) {
    long long budget = hooks_.stop_after.value_or(-1);
    while (!state.finished) {
      if (budget == 0) return false;
      const StageSchedule& sched = config_.schedule(state.stage);
      if (state.iteration >= sched.iterations) {
        advance_stage(state);
        continue;
      }
      if (state.iteration == 0) enter_stage(state);
      try {
        step(state);
      } catch (const DivergenceError&) {
        emit_checkpoint(state, "divergence");
        throw;
      }
      ++state.iteration;
      if (budget > 0) --budget;
      if (config_.checkpoint_every > 0 && state.iteration % config_.checkpoint_every == 0 &&
          state.iteration < sched.iterations)
        emit_checkpoint(state, "periodic");
    }
    return true;
  }

  // One iteration at the state's current stage and iteration (no advance).
  void step(TrainState& state) {
    if (config_.mode == TrainMode::single_stage) {
      detector_step(state, config_.single, config_.cohem, false);
    } else if (state.stage == 1) {
      detector_step(state, config_.stage1, true, false);
    } else if (state.stage == 2) {
      adversarial_step(state);
    } else {
      detector_step(state, config_.stage3, true, true);
    }
  }

 private:
  void enter_stage(TrainState& state) {
    if (config_.mode == TrainMode::three_stage && state.stage == 3 && config_.reset_velocity_stage3)
      state.detector_velocity = state.detector.zeros_like();
  }

  void advance_stage(TrainState& state) {
    if (state.stage >= config_.stage_count()) {
      state.finished = true;
      emit_checkpoint(state, "final");
      return;
    }
    ++state.stage;
    state.iteration = 0;
    emit_checkpoint(state, "stage_end");
  }

  void emit_checkpoint(const TrainState& state, const std::string& why) {
    if (hooks_.checkpoint) hooks_.checkpoint(state, why);
  }

  void emit(const nlohmann::json& record) {
    if (hooks_.telemetry) hooks_.telemetry(record);
  }

  std::size_t pair_index(const TrainState& state, std::size_t n) const {
    return static_cast<std::size_t>(state.iteration) % n;
  }

  void detector_step(TrainState& state, const StageSchedule& sched, bool mine, bool with_generated) {
    using namespace train_detail;
    const int t = state.iteration;
    const std::size_t pi = pair_index(state, data_.positives.size());
    const Raster& pos = *data_.positives[pi];
    const Raster& neg = *data_.negatives[pair_index(state, data_.negatives.size())];
    const auto scfg = mine ? config_.sampler : sampling::SamplerConfig::plain(config_.sampler);

    auto windows = sampling::sample_negative_windows(neg, scfg, state.rng);
    auto pool = sampling::build_pool(pos, data_.positive_centers[pi], neg, std::move(windows));
    if (with_generated && config_.stage3_generated > 0) {
      const auto real = random_real_patches(neg, config_.stage3_generated, state.rng);
      sampling::merge_generated_negatives(pool, generator_forward(state.generator, config_.generator, real));
    }
    if (scfg.hard_mining) sampling::score_candidates(pool, state.detector, config_.detector);
    const auto sel = sampling::select_hard_batch(pool, scfg, state.rng);
    const auto batch = sampling::materialize(pool, sel);

    DetectorTrace<float> trace;
    const auto logits = detector_train_forward(state.detector, config_.detector, batch.values, &state.rng, &trace);
    const auto probs = probabilities(logits);
    const auto loss = losses::detector_loss(std::span<const double>(probs), std::span<const int>(batch.labels));
    check_finite(loss.scalar, "detector loss");
    nn::Mat<float> dlogits(1, logits.cols());
    for (Eigen::Index i = 0; i < logits.cols(); ++i)
      dlogits(0, i) = losses::logit_grad(static_cast<float>(probs[i]), batch.labels[i], probs.size());
    const auto grads = detector_train_backward(state.detector, config_.detector, trace, dlogits);
    const double lr = sched.lr_at(t);
    sgd_step(state.detector, grads.params, state.detector_velocity, lr, sched.momentum, sched.weight_decay);

    nlohmann::json rec{{"stage", config_.mode == TrainMode::single_stage ? 0 : state.stage},
                       {"iter", t},
                       {"lr", lr},
                       {"loss", loss.scalar},
                       {"clamped", loss.clamped},
                       {"positive_raster", pos.id()},
                       {"negative_raster", neg.id()}};
    rec["sampler"] = sampling::telemetry_record(sel.stats);
    rec["generated_fraction"] = sel.stats.generated_fraction();
    emit(rec);
  }

  // One discriminator step on real vs generated patches, then one generator
  // step with detector and discriminator frozen.
  void adversarial_step(TrainState& state) {
    using namespace train_detail;
    const int t = state.iteration;
    const Raster& neg = *data_.negatives[pair_index(state, data_.negatives.size())];
    const auto real = random_real_patches(neg, config_.stage2_batch, state.rng);
    const auto n = static_cast<std::size_t>(real.dim(0));

    GeneratorTrace<float> gtrace;
    const Tensor<float> fake = generator_forward(state.generator, config_.generator, real, &gtrace);

    // (a) discriminator
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

    // (b) generator
    DetectorTrace<float> dtrace;
    const auto det_logits = detector_train_forward(state.detector, config_.detector, fake, nullptr, &dtrace);
    DiscriminatorTrace<float> atrace;
    const auto adv_logits = discriminator_forward(state.discriminator, config_.discriminator, fake, &atrace);
    const auto det_p = probabilities(det_logits);
    const auto adv_p = probabilities(adv_logits);
    const auto hloss = losses::hng_loss(std::span<const double>(det_p), std::span<const double>(adv_p));
    check_finite(hloss.scalar, "generator loss");
    nn::Mat<float> g_det(1, static_cast<Eigen::Index>(n));
    std::vector<float> g_adv(n);
    for (std::size_t i = 0; i < n; ++i) {
      g_det(0, static_cast<Eigen::Index>(i)) = losses::logit_grad(static_cast<float>(det_p[i]), 1.0, n);
      g_adv[i] = losses::logit_grad(static_cast<float>(adv_p[i]), 1.0, n);
    }
    auto dfake = detector_train_backward(state.detector, config_.detector, dtrace, g_det, true).input;
    const auto afake = discriminator_backward(state.discriminator, config_.discriminator, atrace, g_adv, true).input;
    nn::add_inplace(dfake, afake);
    const auto ggrads = generator_backward(state.generator, config_.generator, gtrace, dfake);
    sgd_step(state.generator, ggrads, state.generator_velocity, lr_g, config_.stage2.momentum,
             config_.stage2.weight_decay);

    double shift = 0.0;
    for (std::size_t i = 0; i < fake.size(); ++i) shift += std::abs(fake[i] - real[i]);
    emit({{"stage", 2},
          {"iter", t},
          {"lr_hng", lr_g},
          {"lr_disc", lr_d},
          {"disc_loss", dloss.scalar},
          {"hng_loss", hloss.scalar},
          {"disc_real_mean", mean_of(d_real)},
          {"disc_generated_mean", mean_of(d_fake)},
          {"detector_generated_mean", mean_of(det_p)},
          {"generated_abs_shift", shift / static_cast<double>(fake.size())},
          {"clamped", dloss.clamped + hloss.clamped},
          {"negative_raster", neg.id()}});
  }

  TrainConfig config_;
  const TrainingData& data_;
  TrainHooks hooks_;
};

// Convenience wrappers over Trainer for one stage or one mode at a time.
inline TrainState run_single_stage(const TrainingData& data, TrainConfig config, TrainHooks hooks = {}) {
  config.mode = TrainMode::single_stage;
  auto state = init_train_state(config);
  Trainer(config, data, std::move(hooks)).run(state);
  return state;
}

inline void run_stage_only(TrainState& state, const TrainingData& data, TrainConfig config, int stage,
                           TrainHooks hooks = {}) {
  config.mode = TrainMode::three_stage;
  if (state.stage != stage || state.iteration != 0) throw ConfigError("state is not at the start of stage " + std::to_string(stage));
  const long long iters = config.schedule(stage).iterations;
  hooks.stop_after = iters;
  Trainer tr(config, data, std::move(hooks));
  tr.run(state);
  if (state.iteration == iters && !state.finished) {
    if (stage < 3) {
      ++state.stage;
      state.iteration = 0;
    } else {
      state.finished = true;
    }
  }
}

inline TrainState run_stage1(const TrainingData& data, TrainConfig config, TrainHooks hooks = {}) {
  config.mode = TrainMode::three_stage;
  auto state = init_train_state(config);
  run_stage_only(state, data, config, 1, std::move(hooks));
  return state;
}

inline void run_stage2(TrainState& state, const TrainingData& data, const TrainConfig& config, TrainHooks hooks = {}) {
  run_stage_only(state, data, config, 2, std::move(hooks));
}

inline void run_stage3(TrainState& state, const TrainingData& data, const TrainConfig& config, TrainHooks hooks = {}) {
  run_stage_only(state, data, config, 3, std::move(hooks));
}

}  // namespace rtd
