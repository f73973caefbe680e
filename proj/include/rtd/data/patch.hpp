#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "rtd/core/error.hpp"
#include "rtd/core/tensor.hpp"
#include "rtd/data/raster.hpp"

namespace rtd {

// Spatial side of a training example; equals the detector's receptive field.
inline constexpr int kPatchSize = 25;
inline constexpr int kPatchRadius = kPatchSize / 2;

enum class Provenance { real, generated };

struct PatchCenter {
  std::string raster_id;
  int row = 0;
  int col = 0;
};

struct Patch {
  Tensor<float> values;  // C x 25 x 25
  int label = 0;
  PatchCenter center;
  Provenance provenance = Provenance::real;
};

// Rectangular region of a raster: origin (top-left) and extent.
struct Window {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;
  friend bool operator==(const Window&, const Window&) = default;
};

inline bool patch_fits(const Raster& raster, int row, int col) {
  return row - kPatchRadius >= 0 && col - kPatchRadius >= 0 && row + kPatchRadius < raster.height() &&
         col + kPatchRadius < raster.width();
}

// Copies the 25x25 window centered at (row, col) into `dst` (C*25*25 floats).
inline void copy_patch(const Raster& raster, int row, int col, float* dst) {
  const int r0 = row - kPatchRadius, c0 = col - kPatchRadius;
  for (int c = 0; c < raster.channels(); ++c) {
    const float* band = raster.band(c);
    for (int i = 0; i < kPatchSize; ++i) {
      const float* src = band + static_cast<std::size_t>(r0 + i) * raster.width() + c0;
      std::copy(src, src + kPatchSize, dst);
      dst += kPatchSize;
    }
  }
}

inline Patch extract_patch(const Raster& raster, PixelCoord center) {
  if (!patch_fits(raster, center.row, center.col))
    throw OutOfBoundsError("25x25 window at (" + std::to_string(center.row) + "," + std::to_string(center.col) +
                           ") exceeds raster " + raster.id() + " of size " + std::to_string(raster.height()) + "x" +
                           std::to_string(raster.width()));
  Patch p;
  p.values = Tensor<float>({raster.channels(), kPatchSize, kPatchSize});
  copy_patch(raster, center.row, center.col, p.values.data());
  p.center = {raster.id(), center.row, center.col};
  return p;
}

// Every center whose 25x25 patch lies inside the window, row-major.
inline std::vector<PixelCoord> enumerate_window_examples(const Raster& raster, const Window& window) {
  if (window.height < kPatchSize || window.width < kPatchSize)
    throw ConfigError("window " + std::to_string(window.height) + "x" + std::to_string(window.width) +
                      " is smaller than the 25x25 receptive field");
  if (window.row < 0 || window.col < 0 || window.row + window.height > raster.height() ||
      window.col + window.width > raster.width())
    throw OutOfBoundsError("window exceeds raster " + raster.id());
  std::vector<PixelCoord> centers;
  centers.reserve(static_cast<std::size_t>(window.height - 2 * kPatchRadius) * (window.width - 2 * kPatchRadius));
  for (int r = window.row + kPatchRadius; r < window.row + window.height - kPatchRadius; ++r)
    for (int c = window.col + kPatchRadius; c < window.col + window.width - kPatchRadius; ++c)
      centers.push_back({r, c});
  return centers;
}

// Mirror axes of a square patch: horizontal axis (flips rows), vertical axis
// (flips columns), main diagonal (transposes).
enum MirrorAxis : unsigned { kHorizontal = 1u, kVertical = 2u, kDiagonal = 4u };

// A symmetry of the square as a signed permutation acting on coordinates
// centered at the patch middle: (y, x) -> (a*y + b*x, c*y + d*x).
struct SquareSymmetry {
  int a = 1, b = 0, c = 0, d = 1;

  SquareSymmetry then(const SquareSymmetry& next) const {
    return {next.a * a + next.b * c, next.a * b + next.b * d, next.c * a + next.d * c, next.c * b + next.d * d};
  }
  bool is_identity() const { return a == 1 && b == 0 && c == 0 && d == 1; }
  friend bool operator==(const SquareSymmetry&, const SquareSymmetry&) = default;

  // Writes the transformed C x S x S block: out(T(p)) = in(p).
  template <typename T>
  void apply(const T* in, T* out, int channels, int side) const {
    const int h = side / 2;
    for (int ch = 0; ch < channels; ++ch) {
      const T* src = in + static_cast<std::size_t>(ch) * side * side;
      T* dst = out + static_cast<std::size_t>(ch) * side * side;
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          const int cy = y - h, cx = x - h;
          const int ty = a * cy + b * cx + h, tx = c * cy + d * cx + h;
          dst[ty * side + tx] = src[y * side + x];
        }
    }
  }
};

inline SquareSymmetry mirror_generator(MirrorAxis axis) {
  switch (axis) {
    case kHorizontal: return {-1, 0, 0, 1};
    case kVertical: return {1, 0, 0, -1};
    case kDiagonal: return {0, 1, 1, 0};
  }
  return {};
}

// All distinct compositions of the selected reflections, identity first.
inline std::vector<SquareSymmetry> mirror_group(unsigned axes) {
  std::vector<SquareSymmetry> gens;
  for (MirrorAxis ax : {kHorizontal, kVertical, kDiagonal})
    if (axes & ax) gens.push_back(mirror_generator(ax));
  std::vector<SquareSymmetry> group{SquareSymmetry{}};
  for (std::size_t i = 0; i < group.size(); ++i)
    for (const auto& g : gens) {
      const auto next = group[i].then(g);
      if (std::find(group.begin(), group.end(), next) == group.end()) group.push_back(next);
    }
  return group;
}

inline std::vector<Patch> mirror_augment(const Patch& patch, unsigned axes) {
  const int side = patch.values.dim(1);
  if (patch.values.rank() != 3 || patch.values.dim(2) != side) throw ShapeError("mirroring needs a square patch");
  std::vector<Patch> out;
  for (const auto& sym : mirror_group(axes)) {
    Patch p = patch;
    sym.apply(patch.values.data(), p.values.data(), patch.values.dim(0), side);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace rtd
