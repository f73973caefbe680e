#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rtd/core/error.hpp"
#include "rtd/data/synthetic.hpp"
#include "rtd/training/trainer.hpp"

namespace rtd {

// Everything a command needs. Defaults reproduce the published setup; the
// bundled profiles in configs/ scale it down.
struct RunConfig {
  std::string mode = "rtd-3stage";  // rtd-3stage, rtd-single, hsi
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string output_dir = "run";
  std::string checkpoint;  // empty: <output>/checkpoints/final.ckpt
  std::string resume;      // checkpoint to continue training from
  std::string maps_dir;    // empty: <output>/maps
  int workers = 1;

  SynthDatasetConfig synth;
  TrainConfig train;

  int infer_window_height = 600;
  int infer_window_width = 600;

  std::string hsi_dataset = "indian_pines";
  bool hsi_heg = true;
  int hsi_per_class = 200;
  int hsi_repeats = 1;
  int hsi_batch_size = 256;
  int hsi_generated_per_batch = 64;

  int features_per_group = 500;

  void validate() const {
    if (mode != "rtd-3stage" && mode != "rtd-single" && mode != "hsi")
      throw ConfigError("mode must be rtd-3stage, rtd-single or hsi, got " + mode);
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (infer_window_height < 25 || infer_window_width < 25) throw ConfigError("inference window must be >= 25");
    if (hsi_per_class <= 0 || hsi_repeats <= 0) throw ConfigError("hsi.per_class and hsi.repeats must be positive");
    if (features_per_group <= 0) throw ConfigError("features.per_group must be positive");
    synth.scene.validate();
    train.validate();
  }
};

struct ConfigKey {
  std::string name;
  std::string doc;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline long long to_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::logic_error&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::logic_error&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<int> to_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_int(key, trim(item))));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated integer list");
  return out;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

template <typename C>
std::string join(const C& v) {
  std::string s;
  for (auto x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

struct Registry {
  std::vector<ConfigKey> keys;

  void add(std::string name, std::string doc, std::function<std::string()> get,
           std::function<void(const std::string&)> set) {
    keys.push_back({std::move(name), std::move(doc), std::move(get), std::move(set)});
  }
  void integer(const std::string& name, const std::string& doc, int& ref) {
    add(name, doc, [&ref] { return std::to_string(ref); },
        [&ref, name](const std::string& v) { ref = static_cast<int>(to_int(name, v)); });
  }
  void real(const std::string& name, const std::string& doc, double& ref) {
    add(name, doc, [&ref] { return fmt(ref); }, [&ref, name](const std::string& v) { ref = to_double(name, v); });
  }
  void flag(const std::string& name, const std::string& doc, bool& ref) {
    add(name, doc, [&ref] { return ref ? "true" : "false"; },
        [&ref, name](const std::string& v) { ref = to_bool(name, v); });
  }
  void text(const std::string& name, const std::string& doc, std::string& ref) {
    add(name, doc, [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; });
  }
  void schedule(const std::string& prefix, const std::string& what, StageSchedule& s) {
    integer(prefix + ".iterations", what + " iterations", s.iterations);
    real(prefix + ".base_lr", what + " base learning rate", s.base_lr);
    integer(prefix + ".lr_drop_every", what + " iterations between learning-rate drops (0: never)", s.lr_drop_every);
    real(prefix + ".lr_drop_factor", what + " learning-rate drop factor", s.lr_drop_factor);
    real(prefix + ".momentum", what + " SGD momentum", s.momentum);
    real(prefix + ".weight_decay", what + " weight decay", s.weight_decay);
  }
};

}  // namespace config_detail

// Every documented key, bound to `c`.
inline std::vector<ConfigKey> config_keys(RunConfig& c) {
  using namespace config_detail;
  Registry r;
  r.text("mode", "training mode: rtd-3stage, rtd-single or hsi", c.mode);
  r.add("seed", "seed for data generation, sampling and initialization", [&c] { return std::to_string(c.seed); },
        [&c](const std::string& v) {
          const auto x = to_int("seed", v);
          if (x < 0) throw ConfigError("seed must be >= 0");
          c.seed = static_cast<std::uint64_t>(x);
        });
  r.text("data", "dataset directory (synth writes it, train/infer/eval read it)", c.data_dir);
  r.text("output", "run output directory", c.output_dir);
  r.text("checkpoint", "checkpoint for infer/eval/export-features (default <output>/checkpoints/final.ckpt)",
         c.checkpoint);
  r.text("resume", "training checkpoint to resume from", c.resume);
  r.text("maps", "score-map directory (default <output>/maps)", c.maps_dir);
  r.integer("workers", "worker count; computation is sequential, so any value gives identical results", c.workers);

  auto& s = c.synth.scene;
  r.integer("synth.train_positive", "training rasters with bloom", c.synth.train_positive);
  r.integer("synth.train_negative", "training rasters without bloom (winter)", c.synth.train_negative);
  r.integer("synth.test_positive", "test rasters with bloom", c.synth.test_positive);
  r.integer("synth.test_negative", "test rasters without bloom", c.synth.test_negative);
  r.add("synth.test_negative_season", "season of test negatives: summer or winter",
        [&c] { return c.synth.test_negative_season == Season::summer ? "summer" : "winter"; },
        [&c](const std::string& v) {
          if (v != "summer" && v != "winter") throw ConfigError("synth.test_negative_season: summer or winter");
          c.synth.test_negative_season = v == "summer" ? Season::summer : Season::winter;
        });
  r.integer("synth.height", "raster height", s.height);
  r.integer("synth.width", "raster width", s.width);
  r.integer("synth.channels", "spectral bands (>= 3)", s.channels);
  r.integer("synth.positive_bands", "bloom bands per positive raster", s.positive_bands);
  r.integer("synth.band_width_min", "minimum bloom band half-width", s.band_width_min);
  r.integer("synth.band_width_max", "maximum bloom band half-width", s.band_width_max);
  r.integer("synth.label_count", "sparse positive labels per positive raster", s.label_count);
  r.real("synth.bloom_strength", "bloom signature amplitude", s.bloom_strength);
  r.real("synth.noise_std", "per-pixel noise std", s.noise_std);
  r.real("synth.texture_amplitude", "smooth background texture amplitude", s.texture_amplitude);
  r.real("synth.season_shift", "winter background offset", s.season_shift);
  r.integer("synth.warm_patches", "summer-like patches per winter raster", s.warm_patches);
  r.integer("synth.warm_patch_radius", "radius of summer-like patches", s.warm_patch_radius);
  r.integer("synth.fronts", "turbid fronts per raster", s.fronts);
  r.real("synth.front_strength", "turbid front amplitude", s.front_strength);
  r.real("synth.land_fraction", "masked land strip fraction", s.land_fraction);

  auto& t = c.train;
  auto& d = t.detector;
  r.integer("detector.bank_width", "channels per filter-bank branch", d.bank_width);
  r.add("detector.trunk_widths", "widths of layers 2-8 (one value applies to all seven)",
        [&d] { return join(d.trunk_widths); },
        [&d](const std::string& v) {
          auto w = to_ints("detector.trunk_widths", v);
          if (w.size() == 1) w.assign(7, w.front());
          d.trunk_widths = w;
        });
  r.real("detector.dropout_rate", "dropout probability on layers 7 and 8", d.dropout_rate);
  r.add("detector.init", "weight initialization: fixed or fan_in",
        [&d] { return d.init == DetectorSpec::Init::fan_in ? "fan_in" : "fixed"; },
        [&d](const std::string& v) {
          if (v != "fixed" && v != "fan_in") throw ConfigError("detector.init: fixed or fan_in");
          d.init = v == "fan_in" ? DetectorSpec::Init::fan_in : DetectorSpec::Init::fixed;
        });
  r.real("detector.init_std", "weight std (fixed init)", d.init_std);
  r.real("detector.residual_init_std", "residual-layer weight std (fixed init)", d.residual_init_std);

  auto& g = t.generator;
  r.integer("generator.base_width", "generator width of the first encoder level", g.base_width);
  r.flag("generator.residual_output", "generator adds its output to the input patch", g.residual_output);
  r.real("generator.init_std", "generator weight std", g.init_std);
  r.real("generator.last_init_std", "generator last-layer weight std", g.last_init_std);
  r.real("generator.output_bound", "bound on the generated perturbation (0: none)", g.output_bound);

  r.add("discriminator.widths", "four discriminator conv widths",
        [&t] { return join(t.discriminator.widths); },
        [&t](const std::string& v) {
          const auto w = to_ints("discriminator.widths", v);
          if (w.size() != 4) throw ConfigError("discriminator.widths needs four values");
          std::copy(w.begin(), w.end(), t.discriminator.widths.begin());
        });

  auto& sm = t.sampler;
  r.integer("sampler.window_size", "negative sampling window side", sm.window_height);
  r.integer("sampler.window_count", "negative windows per iteration", sm.window_count);
  r.integer("sampler.batch_size", "examples per batch", sm.batch_size);
  r.integer("sampler.ratio_positive", "positive share of the batch ratio", sm.ratio_positive);
  r.integer("sampler.ratio_negative", "negative share of the batch ratio", sm.ratio_negative);
  r.integer("sampler.hard_pool_multiplier", "hard pool size as a multiple of the needed count",
            sm.hard_pool_multiplier);
  r.flag("sampler.augment_positives", "random mirror symmetry per positive", sm.augment_positives);
  r.flag("sampler.augment_negatives", "random mirror symmetry per negative", sm.augment_negatives);
  r.flag("train.cohem", "single-stage mode mines hard negatives", t.cohem);
  r.schedule("stage1", "stage 1", t.stage1);
  r.schedule("stage2", "stage 2 (generator)", t.stage2);
  r.real("stage2.discriminator_lr", "discriminator base learning rate", t.discriminator_lr);
  r.integer("stage2.batch", "real negatives per adversarial step", t.stage2_batch);
  r.schedule("stage3", "stage 3", t.stage3);
  r.integer("stage3.generated", "negatives passed through the generator per stage-3 iteration",
            t.stage3_generated);
  r.flag("stage3.reset_velocity", "start stage 3 with zero detector momentum", t.reset_velocity_stage3);
  r.schedule("single", "single-stage", t.single);
  r.integer("train.checkpoint_every", "iterations between periodic checkpoints (0: none)", t.checkpoint_every);

  r.integer("infer.window_height", "sliding-window height", c.infer_window_height);
  r.integer("infer.window_width", "sliding-window width", c.infer_window_width);

  r.text("hsi.dataset", "indian_pines, salinas or paviau (files under data)", c.hsi_dataset);
  r.flag("hsi.heg", "three-stage training with the hard example generator", c.hsi_heg);
  r.integer("hsi.per_class", "training pixels per category", c.hsi_per_class);
  r.integer("hsi.repeats", "random splits to average over", c.hsi_repeats);
  r.integer("hsi.batch_size", "examples per batch", c.hsi_batch_size);
  r.integer("hsi.generated_per_batch", "generated examples per stage-3 batch", c.hsi_generated_per_batch);

  r.integer("features.per_group", "patches per group for export-features", c.features_per_group);
  return r.keys;
}

// Applies `key = value` pairs; unknown keys are rejected.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  for (auto& k : config_keys(c))
    if (k.name == key) {
      k.set(value);
      if (key == "sampler.window_size") c.train.sampler.window_width = c.train.sampler.window_height;
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  apply_setting(c, config_detail::trim(assignment.substr(0, eq)), config_detail::trim(assignment.substr(eq + 1)));
}

// Flat text: one `key = value` per line, `#` starts a comment.
inline void load_config_file(RunConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    const auto key = config_detail::trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError(path.string() + ": key " + key + " set twice");
    try {
      apply_setting(c, key, config_detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline std::string dump_config(const RunConfig& c) {
  RunConfig copy = c;
  std::ostringstream os;
  for (const auto& k : config_keys(copy)) os << "# " << k.doc << '\n' << k.name << " = " << k.get() << '\n';
  return os.str();
}

// Relative paths resolve under $RTD_OUTPUT_ROOT when it is set.
inline std::filesystem::path resolve_path(const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("RTD_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / path;
  return path;
}

}  // namespace rtd
