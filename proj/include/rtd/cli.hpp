#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rtd/config.hpp"
#include "rtd/data/hsi.hpp"
#include "rtd/data/labels.hpp"
#include "rtd/data/raster_io.hpp"
#include "rtd/data/synthetic.hpp"
#include "rtd/evaluation.hpp"
#include "rtd/inference.hpp"
#include "rtd/training/hsi_trainer.hpp"
#include "rtd/training/trainer.hpp"

namespace rtd::cli {

namespace fs = std::filesystem;

// On-disk dataset: <data>/{train,test}/<id>.rtr plus <data>/{train,test}_labels.txt.
struct DatasetSplit {
  std::vector<Raster> rasters;
  LabelSet labels;
};

inline fs::path labels_path(const fs::path& data, const std::string& split) { return data / (split + "_labels.txt"); }

inline std::vector<Raster> load_rasters(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("no raster directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".rtr") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Raster> out;
  for (const auto& f : files) out.push_back(load_raster(f));
  return out;
}

inline DatasetSplit load_split(const fs::path& data, const std::string& split) {
  DatasetSplit d{load_rasters(data / split), read_label_sidecar(labels_path(data, split))};
  d.labels.validate([&](const std::string& id) -> const Raster* {
    for (const auto& r : d.rasters)
      if (r.id() == id) return &r;
    return nullptr;
  });
  return d;
}

inline fs::path checkpoint_path(const RunConfig& c) {
  return c.checkpoint.empty() ? resolve_path(c.output_dir) / "checkpoints" / "final.ckpt" : resolve_path(c.checkpoint);
}

inline fs::path maps_path(const RunConfig& c) {
  return c.maps_dir.empty() ? resolve_path(c.output_dir) / "maps" : resolve_path(c.maps_dir);
}

inline TrainConfig train_config(const RunConfig& c, int channels) {
  TrainConfig t = c.train;
  t.mode = c.mode == "rtd-single" ? TrainMode::single_stage : TrainMode::three_stage;
  t.seed = c.seed;
  t.detector.in_channels = t.generator.in_channels = t.discriminator.in_channels = channels;
  t.validate();
  return t;
}

inline void write_json(const nlohmann::json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------- commands

inline void cmd_synth(const RunConfig& c, std::ostream& log) {
  const fs::path data = resolve_path(c.data_dir);
  const auto ds = generate_synthetic_dataset(c.synth, c.seed);
  for (const char* split : {"train", "test"}) fs::remove_all(data / split);
  for (const auto& r : ds.train) save_raster(r, data / "train" / (r.id() + ".rtr"));
  for (const auto& r : ds.test) save_raster(r, data / "test" / (r.id() + ".rtr"));
  write_label_sidecar(ds.train_labels, labels_path(data, "train"));
  write_label_sidecar(ds.test_labels, labels_path(data, "test"));
  log << "synth: wrote " << ds.train.size() << " training and " << ds.test.size() << " test rasters to " << data.string()
      << " (" << ds.train_labels.positive_count() << " training positives)\n";
}

inline HsiTrainConfig hsi_train_config(const RunConfig& c) {
  HsiTrainConfig h;
  h.detector = c.train.detector;
  h.generator = c.train.generator;
  h.discriminator = c.train.discriminator;
  h.stage1 = c.train.stage1;
  h.stage2 = c.train.stage2;
  h.stage3 = c.train.stage3;
  h.single = c.train.single;
  h.discriminator_lr = c.train.discriminator_lr;
  h.reset_velocity_stage3 = c.train.reset_velocity_stage3;
  h.batch_size = c.hsi_batch_size;
  h.generated_per_batch = c.hsi_generated_per_batch;
  h.heg = c.hsi_heg;
  h.seed = c.seed;
  return h;
}

inline void cmd_train_hsi(const RunConfig& c, std::ostream& log) {
  const fs::path out = resolve_path(c.output_dir);
  const auto dataset = parse_hsi_dataset(c.hsi_dataset);
  const auto scene = load_hsi_benchmark(dataset, resolve_path(c.data_dir));
  const auto h = hsi_train_config(c);
  fs::create_directories(out);
  std::ofstream tel(out / "telemetry.jsonl", std::ios::trunc);
  long long records = 0;
  const auto result = run_hsi_experiment(scene, h, c.hsi_per_class, c.hsi_repeats, [&](const nlohmann::json& j) {
    tel << j.dump() << '\n';
    ++records;
  });
  for (const auto& w : result.warnings) log << "warning: " << w << '\n';
  write_json({{"dataset", c.hsi_dataset},
              {"per_class", c.hsi_per_class},
              {"overall_accuracy_mean", result.accuracy.mean},
              {"overall_accuracy_std", result.accuracy.stddev},
              {"per_split", result.accuracy.per_split},
              {"warnings", result.warnings}},
             out / "hsi_summary.json");
  log << "train: " << records << " iterations logged; overall accuracy " << std::fixed << std::setprecision(2)
      << result.accuracy.mean << " +- " << result.accuracy.stddev << '\n';
}

inline void cmd_train(const RunConfig& c, std::ostream& log, long long stop_after = 0) {
  c.validate();
  if (c.mode == "hsi") return cmd_train_hsi(c, log);
  const fs::path data = resolve_path(c.data_dir);
  const fs::path out = resolve_path(c.output_dir);
  auto split = load_split(data, "train");
  if (split.rasters.empty()) throw IoError("no training rasters in " + (data / "train").string());
  const auto cfg = train_config(c, split.rasters.front().channels());

  TrainState state;
  if (c.resume.empty()) {
    state = init_train_state(cfg, compute_channel_stats(split.rasters));
  } else {
    state = state_from_checkpoint(load_checkpoint(resolve_path(c.resume)));
    log << "train: resuming at stage " << state.stage << " iteration " << state.iteration << '\n';
  }
  std::vector<Raster> normalized;
  for (const auto& r : split.rasters) normalized.push_back(normalize(r, state.normalization));
  const auto tdata = make_training_data(normalized, split.labels);

  fs::create_directories(out / "checkpoints");
  std::ofstream tel(out / "telemetry.jsonl", c.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!tel) throw IoError("cannot write telemetry in " + out.string());
  long long records = 0;
  TrainHooks hooks;
  hooks.telemetry = [&](const nlohmann::json& j) {
    tel << j.dump() << '\n';
    ++records;
  };
  hooks.checkpoint = [&](const TrainState& s, const std::string& why) {
    std::string name = why == "final" ? "final" : why == "divergence" ? "divergence"
                       : why == "stage_end" ? "stage" + std::to_string(s.stage - 1) + "_end"
                                            : "stage" + std::to_string(s.stage) + "_iter" + std::to_string(s.iteration);
    save_checkpoint(state_to_checkpoint(s, cfg), out / "checkpoints" / (name + ".ckpt"));
  };
  if (stop_after > 0) hooks.stop_after = stop_after;
  Trainer(cfg, tdata, hooks).run(state);
  tel.flush();
  if (!state.finished) {
    save_checkpoint(state_to_checkpoint(state, cfg), out / "checkpoints" / "interrupted.ckpt");
    log << "train: stopped after " << records << " iterations at stage " << state.stage << " iteration "
        << state.iteration << "; resume from " << (out / "checkpoints" / "interrupted.ckpt").string() << '\n';
    return;
  }
  const auto digest = file_digest(out / "checkpoints" / "final.ckpt");
  write_json({{"mode", c.mode}, {"seed", c.seed}, {"final_checkpoint_digest", digest}}, out / "train_summary.json");
  log << "train: " << records << " iterations logged; final checkpoint digest " << digest << '\n';
}

struct LoadedDetector {
  ModelParams<float> params;
  DetectorSpec spec;
  ChannelStats normalization;
  std::optional<std::pair<ModelParams<float>, GeneratorSpec>> generator;
};

inline LoadedDetector load_detector(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("checkpoint " + path.string() + " does not exist");
  const auto ckpt = load_checkpoint(path);
  LoadedDetector d{ckpt.group("detector"), detector_spec_from_json(ckpt.meta.at("detector_spec")),
                   channel_stats_from_json(ckpt.meta.at("normalization")), std::nullopt};
  if (ckpt.has_group("generator")) {
    const auto& g = ckpt.meta.at("generator_spec");
    GeneratorSpec spec;
    spec.in_channels = g.at("in_channels");
    spec.base_width = g.at("base_width");
    spec.residual_output = g.at("residual_output");
    spec.init_std = g.at("init_std");
    spec.last_init_std = g.at("last_init_std");
    spec.output_bound = g.value("output_bound", 0.0);
    d.generator = std::make_pair(ckpt.group("generator"), spec);
  }
  return d;
}

inline void cmd_infer(const RunConfig& c, std::ostream& log) {
  c.validate();
  const auto det = load_detector(checkpoint_path(c));
  const auto rasters = load_rasters(resolve_path(c.data_dir) / "test");
  const fs::path maps = maps_path(c);
  fs::create_directories(maps);
  for (const auto& r : rasters) {
    TilingPlan plan;
    const auto map =
        sliding_window_infer(normalize(r, det.normalization), det.params, det.spec, c.infer_window_height,
                             c.infer_window_width, &plan);
    log << "infer: " << r.id() << ' ' << r.height() << "x" << r.width() << " window " << plan.window_height << "x"
        << plan.window_width << " stride " << plan.stride_rows << "x" << plan.stride_cols << ", "
        << plan.windows.size() << " windows\n";
    save_raster(map.to_raster(), maps / (r.id() + ".rtr"));
  }
  log << "infer: wrote " << rasters.size() << " score maps to " << maps.string() << '\n';
}

inline void cmd_eval(const RunConfig& c, std::ostream& log) {
  c.validate();
  const fs::path lp = labels_path(resolve_path(c.data_dir), "test");
  if (!fs::exists(lp)) throw UndefinedMetricError("no test labels at " + lp.string());
  const auto labels = read_label_sidecar(lp);
  std::vector<ScoreMap> maps;
  for (const auto& r : load_rasters(maps_path(c))) maps.push_back(ScoreMap::from_raster(r));
  const auto curve = roc_variation_curve(maps, labels);
  const fs::path out = resolve_path(c.output_dir) / "eval";
  write_curve(curve, out / "curve.tsv");
  const auto summary = curve_summary(curve);
  write_json(summary, out / "summary.json");
  log << "eval: " << summary.dump() << '\n';
}

inline void cmd_export_features(const RunConfig& c, std::ostream& log) {
  c.validate();
  const auto det = load_detector(checkpoint_path(c));
  const auto split = load_split(resolve_path(c.data_dir), "test");
  std::vector<Raster> rasters;
  for (const auto& r : split.rasters) rasters.push_back(normalize(r, det.normalization));
  auto find = [&](const std::string& id) -> const Raster& {
    for (const auto& r : rasters)
      if (r.id() == id) return r;
    throw IntegrityError("labels reference unknown raster " + id);
  };
  Rng rng(c.seed);
  const int n = c.features_per_group;
  std::vector<FeatureRow> rows;

  std::vector<std::pair<const Raster*, PixelCoord>> pos;
  for (const auto& [id, coords] : split.labels.positives)
    for (const auto& p : coords)
      if (patch_fits(find(id), p.row, p.col)) pos.emplace_back(&find(id), p);
  std::shuffle(pos.begin(), pos.end(), rng);
  if (static_cast<int>(pos.size()) > n) pos.resize(static_cast<std::size_t>(n));
  for (const auto& [r, p] : pos) {
    const auto patch = sampling::gather_patches(*r, {p});
    auto f = export_features(det.params, det.spec, patch, FeatureGroup::positive);
    rows.insert(rows.end(), f.begin(), f.end());
  }

  if (split.labels.negative_raster_ids.empty()) throw LabelError("export-features needs a negative test raster");
  const Raster& neg = find(split.labels.negative_raster_ids.front());
  const auto real = train_detail::random_real_patches(neg, n, rng);
  auto f = export_features(det.params, det.spec, real, FeatureGroup::real_negative);
  rows.insert(rows.end(), f.begin(), f.end());
  if (det.generator) {
    const auto fake = generator_forward(det.generator->first, det.generator->second, real);
    f = export_features(det.params, det.spec, fake, FeatureGroup::generated_negative);
    rows.insert(rows.end(), f.begin(), f.end());
  }
  const fs::path out = resolve_path(c.output_dir) / "features.tsv";
  write_features(rows, out);
  log << "export-features: " << rows.size() << " rows to " << out.string() << '\n';
}

// ---------------------------------------------------------------- entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Pixel-wise detection training, inference and evaluation"};
  app.require_subcommand(1);
  std::string config_file;
  std::vector<std::string> overrides;
  long long stop_after = 0;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_file, "flat key = value config file");
    sub->add_option("-s,--set", overrides, "override any config key (key=value), repeatable");
  };
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  auto* train = app.add_subcommand("train", "train a detector (rtd-3stage, rtd-single) or run hsi");
  auto* infer = app.add_subcommand("infer", "sliding-window score maps for the test rasters");
  auto* eval = app.add_subcommand("eval", "ROC-variation curve and summary from score maps");
  auto* features = app.add_subcommand("export-features", "layer-8 features of test patches");
  auto* config = app.add_subcommand("config", "print every config key with its documentation and resolved value");
  for (auto* s : {synth, train, infer, eval, features, config}) common(s);
  train->add_option("--stop-after", stop_after, "stop after this many iterations (resume later)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : exit_code(ErrorClass::config);
  }

  try {
    RunConfig c;
    if (!config_file.empty()) load_config_file(c, config_file);
    for (const auto& o : overrides) apply_override(c, o);
    c.validate();
    if (c.workers > 1) err << "note: computation is sequential; workers = " << c.workers << " has no effect\n";
    if (*synth) cmd_synth(c, err);
    if (*train) cmd_train(c, err, stop_after);
    if (*infer) cmd_infer(c, err);
    if (*eval) cmd_eval(c, err);
    if (*features) cmd_export_features(c, err);
    if (*config) out << dump_config(c);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.error_class());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace rtd::cli
