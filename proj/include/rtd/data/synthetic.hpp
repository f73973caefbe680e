#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "rtd/core/error.hpp"
#include "rtd/core/rng.hpp"
#include "rtd/data/labels.hpp"
#include "rtd/data/patch.hpp"
#include "rtd/data/raster.hpp"

namespace rtd {

enum class Season { summer, winter };

// Synthetic ocean-colour scenes. A positive (summer) raster carries elongated
// bloom bands with their own spectral signature; a negative raster has no
// bloom and, in winter, a shifted background with a few summer-like patches.
// Both carry turbid fronts (elongated, different signature) and a land strip
// that is masked out.
struct SynthConfig {
  int height = 192;
  int width = 192;
  int channels = 8;
  int positive_bands = 3;
  int band_width_min = 2;
  int band_width_max = 6;
  int label_count = 100;
  double bloom_strength = 1.0;
  double noise_std = 0.35;
  double texture_amplitude = 0.25;
  double season_shift = 0.9;
  int warm_patches = 4;
  int warm_patch_radius = 9;
  int fronts = 2;
  double front_strength = 0.8;
  double land_fraction = 0.12;
  Season negative_season = Season::winter;

  void validate() const {
    if (channels < 3) throw ConfigError("synthetic scenes need at least 3 bands, got " + std::to_string(channels));
    if (height < kPatchSize || width < kPatchSize) throw ConfigError("synthetic raster smaller than 25 x 25");
    if (positive_bands < 0 || label_count < 0 || warm_patches < 0 || fronts < 0)
      throw ConfigError("synthetic counts must be non-negative");
    if (band_width_min < 1 || band_width_max < band_width_min) throw ConfigError("bad band width range");
    if (noise_std < 0.0 || land_fraction < 0.0 || land_fraction >= 0.5) throw ConfigError("bad synthetic noise or land");
  }
};

struct SyntheticScene {
  Raster positive;
  Raster negative;
  LabelSet labels;
};

namespace synth_detail {

// Fixed spectral directions, unit length, one entry per channel.
inline std::vector<double> spectrum(int channels, double phase, double freq) {
  std::vector<double> v(channels);
  double norm = 0.0;
  for (int c = 0; c < channels; ++c) {
    v[c] = std::sin(freq * (c + 0.5) + phase);
    norm += v[c] * v[c];
  }
  for (double& x : v) x /= std::sqrt(norm);
  return v;
}

inline std::vector<double> summer_background(int channels) {
  std::vector<double> v(channels);
  for (int c = 0; c < channels; ++c) v[c] = 1.0 + 0.4 * std::cos(0.7 * c);
  return v;
}

struct Texture {
  std::vector<std::array<double, 4>> waves;  // amplitude, ky, kx, phase
  double at(int y, int x) const {
    double s = 0.0;
    for (const auto& w : waves) s += w[0] * std::sin(w[1] * y + w[2] * x + w[3]);
    return s;
  }
};

inline Texture random_texture(Rng& rng, double amplitude) {
  Texture t;
  for (int i = 0; i < 4; ++i) {
    const double theta = uniform01(rng) * 2 * std::numbers::pi;
    const double k = 0.02 + 0.06 * uniform01(rng);
    t.waves.push_back({amplitude / 2, k * std::sin(theta), k * std::cos(theta), uniform01(rng) * 2 * std::numbers::pi});
  }
  return t;
}

// A smooth random curve rasterised with a given half-width; returns per-pixel
// intensity in [0, 1] (0 outside the curve).
inline void draw_curve(Rng& rng, int h, int w, double half_width, std::vector<float>& field) {
  double y = uniform01(rng) * h, x = uniform01(rng) * w;
  double angle = uniform01(rng) * 2 * std::numbers::pi, turn = 0.0;
  const int steps = static_cast<int>(1.5 * std::max(h, w));
  double phase = uniform01(rng) * 2 * std::numbers::pi;
  for (int s = 0; s < steps; ++s) {
    turn = 0.9 * turn + 0.03 * (uniform01(rng) - 0.5);
    angle += turn;
    y += 0.5 * std::sin(angle);
    x += 0.5 * std::cos(angle);
    if (y < -10 || x < -10 || y > h + 10 || x > w + 10) break;
    const double intensity = 0.75 + 0.25 * std::sin(0.02 * s + phase);
    const int r = static_cast<int>(std::ceil(half_width));
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        const int py = static_cast<int>(std::lround(y)) + dy, px = static_cast<int>(std::lround(x)) + dx;
        if (py < 0 || px < 0 || py >= h || px >= w) continue;
        if (std::hypot(py - y, px - x) > half_width) continue;
        float& f = field[static_cast<std::size_t>(py) * w + px];
        f = std::max(f, static_cast<float>(intensity));
      }
  }
}

inline std::vector<std::uint8_t> land_mask(Rng& rng, int h, int w, double fraction) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w, 1);
  if (fraction <= 0.0) return mask;
  const double phase = uniform01(rng) * 2 * std::numbers::pi;
  for (int y = 0; y < h; ++y) {
    const double coast = fraction * w * (1.0 + 0.3 * std::sin(0.05 * y + phase));
    for (int x = 0; x < w && x < coast; ++x) mask[static_cast<std::size_t>(y) * w + x] = 0;
  }
  return mask;
}

// Background, texture, fronts, noise and land for one raster; `warmth` is the
// per-pixel blend towards the summer background (1 = summer).
inline Raster base_raster(const SynthConfig& cfg, const std::string& id, Rng& rng,
                          const std::vector<float>& warmth, const std::vector<float>& bloom) {
  const int C = cfg.channels, H = cfg.height, W = cfg.width;
  const auto summer = summer_background(C);
  const auto season_dir = spectrum(C, 0.3, 1.3);
  const auto bloom_dir = spectrum(C, 2.0, 0.55);
  const auto front_dir = spectrum(C, 4.1, 2.2);
  const auto texture = random_texture(rng, cfg.texture_amplitude);
  std::vector<float> fronts(static_cast<std::size_t>(H) * W, 0.0f);
  for (int f = 0; f < cfg.fronts; ++f) draw_curve(rng, H, W, 1.5 + 2.0 * uniform01(rng), fronts);
  auto mask = land_mask(rng, H, W, cfg.land_fraction);
  Raster r(id, C, H, W);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      const double t = texture.at(y, x), shift = (1.0 - warmth[i]) * cfg.season_shift;
      for (int c = 0; c < C; ++c) {
        double v = summer[c] * (1.0 + t) + shift * season_dir[c] + cfg.bloom_strength * bloom[i] * bloom_dir[c] +
                   cfg.front_strength * fronts[i] * front_dir[c] + cfg.noise_std * noise(rng);
        if (!mask[i]) v = 3.0 + 0.5 * std::cos(1.1 * c) + 0.2 * noise(rng);
        r.at(c, y, x) = static_cast<float>(v);
      }
    }
  r.set_mask(std::move(mask));
  return r;
}

}  // namespace synth_detail

// Deterministic in (config, seed). Positive labels are a sparse random subset
// of strong bloom pixels whose 25 x 25 patch fits inside the raster.
inline SyntheticScene generate_synthetic_scene(const SynthConfig& config, std::uint64_t seed,
                                               const std::string& positive_id = "pos",
                                               const std::string& negative_id = "neg") {
  using namespace synth_detail;
  config.validate();
  const int H = config.height, W = config.width;
  const std::size_t n = static_cast<std::size_t>(H) * W;
  Rng rng(seed);
  Rng pos_rng(split_seed(rng)), neg_rng(split_seed(rng)), label_rng(split_seed(rng));

  std::vector<float> bloom(n, 0.0f);
  for (int b = 0; b < config.positive_bands; ++b) {
    const double width = config.band_width_min + uniform01(pos_rng) * (config.band_width_max - config.band_width_min);
    draw_curve(pos_rng, H, W, width / 2.0, bloom);
  }
  SyntheticScene scene;
  scene.positive = base_raster(config, positive_id, pos_rng, std::vector<float>(n, 1.0f), bloom);

  std::vector<float> warmth(n, config.negative_season == Season::summer ? 1.0f : 0.0f);
  if (config.negative_season == Season::winter)
    for (int p = 0; p < config.warm_patches; ++p) {
      const double cy = uniform01(neg_rng) * H, cx = uniform01(neg_rng) * W;
      const double r = config.warm_patch_radius * (0.7 + 0.6 * uniform01(neg_rng));
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double d = std::hypot(y - cy, x - cx) / r;
          if (d < 1.5) {
            float& wv = warmth[static_cast<std::size_t>(y) * W + x];
            wv = std::max(wv, static_cast<float>(std::clamp(1.5 - d, 0.0, 1.0)));
          }
        }
    }
  scene.negative = base_raster(config, negative_id, neg_rng, warmth, std::vector<float>(n, 0.0f));

  std::vector<PixelCoord> candidates;
  for (int y = kPatchRadius; y < H - kPatchRadius; ++y)
    for (int x = kPatchRadius; x < W - kPatchRadius; ++x)
      if (bloom[static_cast<std::size_t>(y) * W + x] >= 0.6f && scene.positive.evaluable(y, x))
        candidates.push_back({y, x});
  const std::size_t take = std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(config.label_count));
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_int(label_rng, 0, static_cast<int>(candidates.size() - i) - 1));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(take);
  std::sort(candidates.begin(), candidates.end());
  if (!candidates.empty()) scene.labels.positives[positive_id] = std::move(candidates);
  scene.labels.negative_raster_ids.push_back(negative_id);
  return scene;
}

// A benchmark split: training rasters (winter negatives), test rasters
// (positives plus summer negatives without bloom).
struct SynthDatasetConfig {
  SynthConfig scene;
  int train_positive = 2;
  int train_negative = 2;
  int test_positive = 2;
  int test_negative = 2;
  Season test_negative_season = Season::summer;
};

struct SyntheticDataset {
  std::vector<Raster> train;
  std::vector<Raster> test;
  LabelSet train_labels;
  LabelSet test_labels;
};

inline SyntheticDataset generate_synthetic_dataset(const SynthDatasetConfig& config, std::uint64_t seed) {
  config.scene.validate();
  if (config.train_positive < 0 || config.train_negative < 0 || config.test_positive < 0 || config.test_negative < 0)
    throw ConfigError("raster counts must be non-negative");
  SyntheticDataset ds;
  Rng rng(seed);
  auto add = [&](bool train, bool positive, int index, Season season) {
    SynthConfig cfg = config.scene;
    cfg.negative_season = season;
    const std::string id = std::string(train ? "train" : "test") + (positive ? "_pos_" : "_neg_") + std::to_string(index);
    auto scene = generate_synthetic_scene(cfg, split_seed(rng), id, id);
    auto& rasters = train ? ds.train : ds.test;
    auto& labels = train ? ds.train_labels : ds.test_labels;
    if (positive) {
      rasters.push_back(std::move(scene.positive));
      if (scene.labels.positives.count(id)) labels.positives[id] = scene.labels.positives[id];
    } else {
      rasters.push_back(std::move(scene.negative));
      labels.negative_raster_ids.push_back(id);
    }
  };
  for (int i = 0; i < config.train_positive; ++i) add(true, true, i, Season::winter);
  for (int i = 0; i < config.train_negative; ++i) add(true, false, i, Season::winter);
  for (int i = 0; i < config.test_positive; ++i) add(false, true, i, config.test_negative_season);
  for (int i = 0; i < config.test_negative; ++i) add(false, false, i, config.test_negative_season);
  return ds;
}

}  // namespace rtd
