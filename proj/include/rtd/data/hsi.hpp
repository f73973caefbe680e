#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rtd/core/error.hpp"
#include "rtd/core/rng.hpp"
#include "rtd/data/labels.hpp"
#include "rtd/data/matfile.hpp"
#include "rtd/data/raster.hpp"

namespace rtd {

enum class HsiDataset { indian_pines, salinas, paviau };

struct HsiDatasetInfo {
  HsiDataset dataset;
  const char* name;
  const char* cube_file;
  const char* cube_var;
  const char* gt_file;
  const char* gt_var;
  std::vector<std::string> classes;
};

inline const HsiDatasetInfo& hsi_dataset_info(HsiDataset d) {
  static const std::vector<HsiDatasetInfo> table = {
      {HsiDataset::indian_pines, "indian_pines", "Indian_pines_corrected.mat", "indian_pines_corrected",
       "Indian_pines_gt.mat", "indian_pines_gt",
       {"Alfalfa", "Corn-notill", "Corn-mintill", "Corn", "Grass-pasture", "Grass-trees", "Grass-pasture-mowed",
        "Hay-windrowed", "Oats", "Soybean-notill", "Soybean-mintill", "Soybean-clean", "Wheat", "Woods",
        "Buildings-Grass-Trees-Drives", "Stone-Steel-Towers"}},
      {HsiDataset::salinas, "salinas", "Salinas_corrected.mat", "salinas_corrected", "Salinas_gt.mat", "salinas_gt",
       {"Brocoli_green_weeds_1", "Brocoli_green_weeds_2", "Fallow", "Fallow_rough_plow", "Fallow_smooth",
        "Stubble", "Celery", "Grapes_untrained", "Soil_vinyard_develop", "Corn_senesced_green_weeds",
        "Lettuce_romaine_4wk", "Lettuce_romaine_5wk", "Lettuce_romaine_6wk", "Lettuce_romaine_7wk",
        "Vinyard_untrained", "Vinyard_vertical_trellis"}},
      {HsiDataset::paviau, "paviau", "PaviaU.mat", "paviaU", "PaviaU_gt.mat", "paviaU_gt",
       {"Asphalt", "Meadows", "Gravel", "Trees", "Painted metal sheets", "Bare Soil", "Bitumen",
        "Self-Blocking Bricks", "Shadows"}},
  };
  return table[static_cast<std::size_t>(d)];
}

inline HsiDataset parse_hsi_dataset(const std::string& name) {
  for (HsiDataset d : {HsiDataset::indian_pines, HsiDataset::salinas, HsiDataset::paviau})
    if (name == hsi_dataset_info(d).name) return d;
  throw ConfigError("unknown hyperspectral dataset " + name + " (expected indian_pines, salinas or paviau)");
}

inline bool hsi_dataset_present(HsiDataset d, const std::filesystem::path& dir) {
  const auto& info = hsi_dataset_info(d);
  return std::filesystem::exists(dir / info.cube_file) && std::filesystem::exists(dir / info.gt_file);
}

// One scene: the cube as a C x H x W raster and per-pixel categories for
// every labeled pixel (ground-truth value 0 means unlabeled and is dropped).
struct HsiScene {
  Raster cube;
  LabelSet labels;
};

namespace hsi_detail {

inline MatArray pick(const std::filesystem::path& path, const std::string& preferred, std::size_t rank) {
  auto vars = read_mat_file(path);
  if (auto it = vars.find(preferred); it != vars.end()) return std::move(it->second);
  std::vector<std::string> candidates;
  for (const auto& [name, a] : vars)
    if (a.dims.size() == rank) candidates.push_back(name);
  if (candidates.size() != 1)
    throw FormatError(path.string() + " has no variable " + preferred + " and no unique rank-" + std::to_string(rank) +
                      " array");
  return std::move(vars.at(candidates.front()));
}

}  // namespace hsi_detail

inline HsiScene load_hsi_benchmark(HsiDataset dataset, const std::filesystem::path& dir) {
  const auto& info = hsi_dataset_info(dataset);
  const auto cube = hsi_detail::pick(dir / info.cube_file, info.cube_var, 3);
  const auto gt = hsi_detail::pick(dir / info.gt_file, info.gt_var, 2);
  if (cube.dims.size() != 3) throw ShapeError(std::string(info.cube_file) + " is not a rows x cols x bands cube");
  const int H = cube.dim(0), W = cube.dim(1), B = cube.dim(2);
  if (gt.dim(0) != H || gt.dim(1) != W)
    throw IntegrityError("ground truth is " + std::to_string(gt.dim(0)) + "x" + std::to_string(gt.dim(1)) +
                         " but the cube is " + std::to_string(H) + "x" + std::to_string(W));

  Tensor<float> values({B, H, W});
  for (int b = 0; b < B; ++b)
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) values(b, r, c) = static_cast<float>(cube.at(r, c, b));

  HsiScene scene{Raster(info.name, std::move(values)), {}};
  auto& pixels = scene.labels.pixel_labels[info.name];
  int max_label = 0;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const double v = gt.at(r, c);
      const int label = static_cast<int>(v);
      if (label != v || label < 0) throw IntegrityError("non-integer or negative ground-truth value");
      if (label == 0) continue;
      pixels[{r, c}] = label - 1;
      max_label = std::max(max_label, label);
    }
  if (max_label > static_cast<int>(info.classes.size()))
    throw IntegrityError(std::string(info.gt_file) + " has category " + std::to_string(max_label) + ", expected at most " +
                         std::to_string(info.classes.size()));
  scene.labels.classes.assign(info.classes.begin(), info.classes.begin() + max_label);
  return scene;
}

struct HsiSample {
  PixelCoord pixel;
  int category = 0;
  friend bool operator==(const HsiSample&, const HsiSample&) = default;
};

struct HsiSplit {
  std::vector<HsiSample> train;
  std::vector<HsiSample> test;
  std::vector<std::string> warnings;
};

// `per_class` random labeled pixels of each category for training, the rest
// for testing. A category with no more than `per_class` pixels goes entirely
// to training and is reported in `warnings`.
inline HsiSplit split_hsi(const LabelSet& labels, const std::string& raster_id, int per_class, Rng& rng) {
  if (per_class <= 0) throw ConfigError("per-class training count must be positive");
  if (!labels.category_mode()) throw LabelError("hyperspectral split needs category labels");
  const auto it = labels.pixel_labels.find(raster_id);
  if (it == labels.pixel_labels.end()) throw LabelError("no category labels for " + raster_id);
  std::vector<std::vector<PixelCoord>> by_class(labels.classes.size());
  for (const auto& [p, cat] : it->second) by_class.at(static_cast<std::size_t>(cat)).push_back(p);

  HsiSplit split;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& px = by_class[k];
    const int cat = static_cast<int>(k);
    if (px.size() <= static_cast<std::size_t>(per_class)) {
      if (!px.empty())
        split.warnings.push_back("category " + labels.classes[k] + " has only " + std::to_string(px.size()) +
                                 " labeled pixels; all used for training, none for testing");
      for (const auto& p : px) split.train.push_back({p, cat});
      continue;
    }
    std::shuffle(px.begin(), px.end(), rng);
    for (std::size_t i = 0; i < px.size(); ++i)
      (i < static_cast<std::size_t>(per_class) ? split.train : split.test).push_back({px[i], cat});
  }
  return split;
}

// Mirror-pads a raster by `pad` pixels on each side (reflection without
// repeating the edge pixel).
inline Raster reflect_pad(const Raster& raster, int pad) {
  const int C = raster.channels(), H = raster.height(), W = raster.width();
  if (pad < 0 || pad >= H || pad >= W) throw ShapeError("reflection pad larger than the raster");
  auto reflect = [](int i, int n) { return i < 0 ? -i : i >= n ? 2 * n - 2 - i : i; };
  Tensor<float> out({C, H + 2 * pad, W + 2 * pad});
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < H + 2 * pad; ++r)
      for (int x = 0; x < W + 2 * pad; ++x) out(c, r, x) = raster.at(c, reflect(r - pad, H), reflect(x - pad, W));
  return Raster(raster.id(), std::move(out));
}

}  // namespace rtd
