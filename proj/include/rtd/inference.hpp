#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rtd/core/error.hpp"
#include "rtd/data/patch.hpp"
#include "rtd/data/raster.hpp"
#include "rtd/models/detector.hpp"

namespace rtd {

// Per-pixel sigmoid scores (units x H x W) aligned with the source raster.
// Pixels that cannot be scored (outer 12-pixel ring, masked) hold NaN.
struct ScoreMap {
  std::string raster_id;
  Tensor<float> scores;

  int units() const { return scores.dim(0); }
  int height() const { return scores.dim(1); }
  int width() const { return scores.dim(2); }
  float at(int r, int c, int unit = 0) const { return scores(unit, r, c); }
  bool scored(int r, int c) const { return !std::isnan(scores(0, r, c)); }

  Raster to_raster() const { return Raster(raster_id, scores); }
  static ScoreMap from_raster(const Raster& r) { return {r.id(), r.values()}; }
};

struct TilingPlan {
  int window_height = 0;
  int window_width = 0;
  int stride_rows = 0;
  int stride_cols = 0;
  std::vector<Window> windows;
};

namespace inference_detail {

// Origins 0, s, 2s, ... with the last one aligned to the end.
inline std::vector<int> origins(int extent, int window, int stride) {
  std::vector<int> out;
  for (int o = 0;; o += stride) {
    if (o + window >= extent) {
      out.push_back(extent - window);
      break;
    }
    out.push_back(o);
  }
  return out;
}

}  // namespace inference_detail

// Windows of at most (window_height, window_width) that cover the raster with
// abutting valid regions: stride is window - 24. A raster smaller than the
// window is covered by a single window of its own size.
inline TilingPlan plan_tiling(int height, int width, int window_height, int window_width) {
  if (window_height < kPatchSize || window_width < kPatchSize)
    throw ConfigError("inference window must be at least 25 x 25");
  if (height < kPatchSize || width < kPatchSize)
    throw ShapeError("raster of " + std::to_string(height) + " x " + std::to_string(width) +
                     " is smaller than the 25 x 25 receptive field");
  TilingPlan plan;
  plan.window_height = std::min(window_height, height);
  plan.window_width = std::min(window_width, width);
  plan.stride_rows = plan.window_height - 2 * kPatchRadius;
  plan.stride_cols = plan.window_width - 2 * kPatchRadius;
  for (int r : inference_detail::origins(height, plan.window_height, plan.stride_rows))
    for (int c : inference_detail::origins(width, plan.window_width, plan.stride_cols))
      plan.windows.push_back({r, c, plan.window_height, plan.window_width});
  return plan;
}

template <typename T>
ScoreMap sliding_window_infer(const Raster& raster, const ModelParams<T>& params, const DetectorSpec& spec,
                              int window_height = 600, int window_width = 600, TilingPlan* plan_out = nullptr) {
  const int H = raster.height(), W = raster.width(), C = raster.channels();
  const auto plan = plan_tiling(H, W, window_height, window_width);
  ScoreMap map{raster.id(), Tensor<float>({spec.output_units, H, W}, std::numeric_limits<float>::quiet_NaN())};
  std::vector<std::uint8_t> written(static_cast<std::size_t>(H) * W, 0);
  std::vector<T> tile;
  for (const Window& w : plan.windows) {
    tile.resize(static_cast<std::size_t>(C) * w.height * w.width);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < w.height; ++y) {
        const float* src = raster.band(c) + static_cast<std::size_t>(w.row + y) * W + w.col;
        std::copy_n(src, w.width, tile.data() + (static_cast<std::size_t>(c) * w.height + y) * w.width);
      }
    const auto out = detector_test_forward(params, spec, tile.data(), C, w.height, w.width, MapRegion::valid);
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        const int r = w.row + out.row0 + y, c = w.col + out.col0 + x;
        auto& flag = written[static_cast<std::size_t>(r) * W + c];
        if (flag) continue;
        flag = 1;
        if (!raster.evaluable(r, c)) continue;
        for (int u = 0; u < spec.output_units; ++u)
          map.scores(u, r, c) = static_cast<float>(nn::sigmoid<double>(out.logits(u, y, x)));
      }
  }
  if (plan_out) *plan_out = plan;
  return map;
}

// Scored pixels with score >= threshold, row-major.
inline std::vector<PixelCoord> threshold_detections(const ScoreMap& map, double threshold, int unit = 0) {
  std::vector<PixelCoord> out;
  for (int r = 0; r < map.height(); ++r)
    for (int c = 0; c < map.width(); ++c) {
      const float s = map.at(r, c, unit);
      if (!std::isnan(s) && s >= threshold) out.push_back({r, c});
    }
  return out;
}

}  // namespace rtd
