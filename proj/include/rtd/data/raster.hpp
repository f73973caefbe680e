#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rtd/core/error.hpp"
#include "rtd/core/tensor.hpp"

namespace rtd {

struct PixelCoord {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const PixelCoord&, const PixelCoord&) = default;
};

// A C-channel H x W image stored band-sequentially, with an optional
// evaluability mask (1 = evaluable, e.g. sea; 0 = land or no-data).
class Raster {
 public:
  Raster() = default;
  Raster(std::string id, Tensor<float> values, std::optional<std::vector<std::uint8_t>> mask = std::nullopt)
      : id_(std::move(id)), values_(std::move(values)), mask_(std::move(mask)) {
    if (values_.rank() != 3) throw ShapeError("raster values must be C x H x W, got " + shape_str(values_.shape()));
    if (channels() <= 0 || height() <= 0 || width() <= 0)
      throw ShapeError("raster dimensions must be positive: " + shape_str(values_.shape()));
    if (mask_ && mask_->size() != static_cast<std::size_t>(height()) * static_cast<std::size_t>(width()))
      throw ShapeError("mask size does not match raster " + id_);
  }
  Raster(std::string id, int channels, int height, int width)
      : Raster(std::move(id), Tensor<float>({channels, height, width})) {}

  const std::string& id() const noexcept { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }
  int channels() const { return values_.dim(0); }
  int height() const { return values_.dim(1); }
  int width() const { return values_.dim(2); }

  float& at(int c, int r, int col) noexcept { return values_(c, r, col); }
  float at(int c, int r, int col) const noexcept { return values_(c, r, col); }
  const float* band(int c) const noexcept {
    return values_.data() + static_cast<std::size_t>(c) * static_cast<std::size_t>(height()) * width();
  }
  float* band(int c) noexcept {
    return values_.data() + static_cast<std::size_t>(c) * static_cast<std::size_t>(height()) * width();
  }

  const Tensor<float>& values() const noexcept { return values_; }
  Tensor<float>& values() noexcept { return values_; }

  bool has_mask() const noexcept { return mask_.has_value(); }
  const std::optional<std::vector<std::uint8_t>>& mask() const noexcept { return mask_; }
  void set_mask(std::optional<std::vector<std::uint8_t>> mask) {
    if (mask && mask->size() != static_cast<std::size_t>(height()) * static_cast<std::size_t>(width()))
      throw ShapeError("mask size does not match raster " + id_);
    mask_ = std::move(mask);
  }

  bool inside(int r, int c) const noexcept { return r >= 0 && c >= 0 && r < height() && c < width(); }
  bool evaluable(int r, int c) const noexcept {
    return inside(r, c) && (!mask_ || (*mask_)[static_cast<std::size_t>(r) * width() + c] != 0);
  }

  bool all_finite() const {
    for (float v : values_.values())
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::string id_;
  Tensor<float> values_;
  std::optional<std::vector<std::uint8_t>> mask_;
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

// Per-channel mean / population std over the evaluable pixels of the given
// rasters (all pixels when a raster has no mask).
inline ChannelStats compute_channel_stats(const std::vector<const Raster*>& rasters) {
  if (rasters.empty()) throw ConfigError("channel statistics need at least one raster");
  const int channels = rasters.front()->channels();
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  std::size_t count = 0;
  for (const Raster* r : rasters) {
    if (r->channels() != channels) throw ShapeError("channel count mismatch in raster " + r->id());
    for (int y = 0; y < r->height(); ++y)
      for (int x = 0; x < r->width(); ++x) {
        if (!r->evaluable(y, x)) continue;
        ++count;
        for (int c = 0; c < channels; ++c) {
          const double v = r->at(c, y, x);
          sum[c] += v;
          sq[c] += v * v;
        }
      }
  }
  if (count == 0) throw DegenerateChannelError("no evaluable pixels to compute statistics");
  ChannelStats stats;
  stats.mean.resize(channels);
  stats.stddev.resize(channels);
  for (int c = 0; c < channels; ++c) {
    const double m = sum[c] / static_cast<double>(count);
    const double var = std::max(0.0, sq[c] / static_cast<double>(count) - m * m);
    stats.mean[c] = m;
    stats.stddev[c] = std::sqrt(var);
  }
  return stats;
}

inline ChannelStats compute_channel_stats(const std::vector<Raster>& rasters) {
  std::vector<const Raster*> ptrs;
  for (const auto& r : rasters) ptrs.push_back(&r);
  return compute_channel_stats(ptrs);
}

// Applies (v - mean) / std per channel to every pixel. The mask is untouched.
inline Raster normalize(const Raster& raster, const ChannelStats& stats) {
  const int channels = raster.channels();
  if (static_cast<int>(stats.mean.size()) != channels || static_cast<int>(stats.stddev.size()) != channels)
    throw ShapeError("normalization stats have " + std::to_string(stats.mean.size()) + " channels, raster " +
                     raster.id() + " has " + std::to_string(channels));
  for (int c = 0; c < channels; ++c)
    if (!(stats.stddev[c] > 0.0)) throw DegenerateChannelError("channel " + std::to_string(c) + " has zero std");
  Raster out = raster;
  const std::size_t plane = static_cast<std::size_t>(raster.height()) * raster.width();
  for (int c = 0; c < channels; ++c) {
    float* dst = out.band(c);
    const double m = stats.mean[c], s = stats.stddev[c];
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>((dst[i] - m) / s);
  }
  if (!out.all_finite()) throw IntegrityError("non-finite values after normalizing " + raster.id());
  return out;
}

}  // namespace rtd
