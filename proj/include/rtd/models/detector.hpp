#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rtd/core/error.hpp"
#include "rtd/core/rng.hpp"
#include "rtd/core/tensor.hpp"
#include "rtd/data/patch.hpp"
#include "rtd/models/params.hpp"
#include "rtd/nn/ops.hpp"

namespace rtd {

// Nine-layer fully convolutional pixel classifier.
//
// Layer 1 is a multi-scale filter bank of k x k convolutions (k = 1, 5, 9, 13),
// each max-pooled over a k x k neighbourhood, concatenated and rectified. The
// receptive field is therefore exactly 25 x 25. Layers 2-8 are 1 x 1
// convolutions with ReLU (layers 3-6 wrap theirs in an identity skip), layers
// 7 and 8 carry dropout during training, and layer 9 is a 1 x 1 convolution
// to `output_units` sigmoid logits.
//
// Training mode consumes 25 x 25 patches: branch k convolves the centered
// (2k-1) x (2k-1) sub-patch and max-pools the k x k result to one value.
// Test mode slides the same weights over an image of any size >= 25 x 25
// using zero padding and stride-1 pooling; the two agree at every pixel that
// is at least 12 pixels from the image border.
struct DetectorSpec {
  int in_channels = 8;
  std::array<int, 4> bank_filter_sizes{1, 5, 9, 13};
  int bank_width = 100;
  std::vector<int> trunk_widths = std::vector<int>(7, 200);
  std::vector<int> residual_layers{3, 4, 5, 6};
  std::vector<int> dropout_layers{7, 8};
  double dropout_rate = 0.5;
  int output_units = 1;
  double init_std = 0.01;
  double residual_init_std = 0.005;
  // Fixed: weights ~ N(0, init_std), residual layers N(0, residual_init_std).
  // FanIn: hidden layers N(0, sqrt(2 / fan_in)), residual layers scaled by
  // residual_init_std / init_std. The output layer keeps init_std.
  enum class Init { fixed, fan_in } init = Init::fixed;

  static constexpr int kFirstTrunkLayer = 2;
  static constexpr int kLastTrunkLayer = 8;
  static constexpr int kOutputLayer = 9;

  int bank_out() const { return 4 * bank_width; }
  int trunk_in(int layer) const { return layer == kFirstTrunkLayer ? bank_out() : trunk_widths[layer - 3]; }
  int trunk_out(int layer) const { return trunk_widths[layer - 2]; }
  int feature_width() const { return trunk_widths.back(); }
  bool is_residual(int layer) const {
    return std::find(residual_layers.begin(), residual_layers.end(), layer) != residual_layers.end();
  }
  bool has_dropout(int layer) const {
    return std::find(dropout_layers.begin(), dropout_layers.end(), layer) != dropout_layers.end();
  }

  void validate() const {
    if (in_channels <= 0) throw ConfigError("detector needs at least one input channel");
    if (bank_filter_sizes != std::array<int, 4>{1, 5, 9, 13})
      throw ConfigError("filter bank sizes must be 1, 5, 9, 13 (25 x 25 receptive field)");
    if (bank_width <= 0 || output_units <= 0) throw ConfigError("detector widths must be positive");
    if (trunk_widths.size() != 7) throw ConfigError("detector needs 7 trunk widths (layers 2-8)");
    for (int w : trunk_widths)
      if (w <= 0) throw ConfigError("detector trunk widths must be positive");
    for (int l : residual_layers) {
      if (l <= kFirstTrunkLayer || l > kLastTrunkLayer) throw ConfigError("residual layers must lie in 3..8");
      if (trunk_in(l) != trunk_out(l))
        throw ConfigError("residual layer " + std::to_string(l) + " joins unequal widths");
    }
    for (int l : dropout_layers)
      if (l < kFirstTrunkLayer || l > kLastTrunkLayer) throw ConfigError("dropout layers must lie in 2..8");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  }
};

inline std::string bank_weight_name(int k) { return "bank.k" + std::to_string(k) + ".weight"; }
inline std::string bank_bias_name(int k) { return "bank.k" + std::to_string(k) + ".bias"; }
inline std::string layer_weight_name(int l) { return "conv" + std::to_string(l) + ".weight"; }
inline std::string layer_bias_name(int l) { return "conv" + std::to_string(l) + ".bias"; }

template <typename T>
ModelParams<T> detector_param_layout(const DetectorSpec& spec) {
  spec.validate();
  ModelParams<T> p;
  const bool fan_in = spec.init == DetectorSpec::Init::fan_in;
  auto weight_init = [&](int fan, bool residual) {
    const double std = fan_in ? std::sqrt(2.0 / fan) : spec.init_std;
    return InitSpec{0.0, residual ? std * spec.residual_init_std / spec.init_std : std};
  };
  const InitSpec bias{};
  for (int k : spec.bank_filter_sizes) {
    p.add(bank_weight_name(k), {spec.bank_width, spec.in_channels, k, k},
          weight_init(spec.in_channels * k * k, false));
    p.add(bank_bias_name(k), {spec.bank_width}, bias);
  }
  for (int l = DetectorSpec::kFirstTrunkLayer; l <= DetectorSpec::kLastTrunkLayer; ++l) {
    p.add(layer_weight_name(l), {spec.trunk_out(l), spec.trunk_in(l)},
          weight_init(spec.trunk_in(l), spec.is_residual(l)));
    p.add(layer_bias_name(l), {spec.trunk_out(l)}, bias);
  }
  p.add(layer_weight_name(DetectorSpec::kOutputLayer), {spec.output_units, spec.feature_width()},
        InitSpec{0.0, spec.init_std});
  p.add(layer_bias_name(DetectorSpec::kOutputLayer), {spec.output_units}, bias);
  return p;
}

template <typename T>
ModelParams<T> init_detector(const DetectorSpec& spec, std::uint64_t seed) {
  auto p = detector_param_layout<T>(spec);
  p.initialize(seed);
  return p;
}

// ---------------------------------------------------------------- training mode

template <typename T>
struct DetectorTrace {
  Tensor<T> input;
  std::array<std::vector<int>, 4> argmax;  // per branch, [bank_width x N] flat index into the k x k map
  std::vector<nn::Mat<T>> act;             // act[0]: rectified bank output; act[l-1]: output of layer l
  std::vector<nn::Mat<T>> relu_out;        // relu_out[l-2]: rectified conv output of layer l
  std::vector<nn::Mat<T>> keep;            // keep[l-2]: dropout scale (0 or 1/(1-p)); empty when inactive
};

template <typename T>
struct DetectorGrads {
  ModelParams<T> params;
  Tensor<T> input;  // empty unless requested
};

namespace detector_detail {

inline int crop_offset(int k) { return kPatchRadius - (k - 1); }

template <typename T>
void dense(const Tensor<T>& w, const Tensor<T>& b, const nn::Mat<T>& x, nn::Mat<T>& y) {
  nn::ConstRowMap<T> wm(w.data(), w.dim(0), w.dim(1));
  y.noalias() = wm * x;
  y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(b.data(), b.dim(0));
}

}  // namespace detector_detail

// Returns logits [output_units x N] for a batch of N x C x 25 x 25 patches.
// Dropout is active iff `dropout_rng` is non-null.
template <typename T>
nn::Mat<T> detector_train_forward(const ModelParams<T>& params, const DetectorSpec& spec, const Tensor<T>& input,
                                  Rng* dropout_rng = nullptr, DetectorTrace<T>* trace = nullptr) {
  using namespace detector_detail;
  if (input.rank() != 4 || input.dim(1) != spec.in_channels || input.dim(2) != kPatchSize ||
      input.dim(3) != kPatchSize)
    throw ShapeError("training-mode detector input must be N x " + std::to_string(spec.in_channels) +
                     " x 25 x 25, got " + shape_str(input.shape()));
  const int n = input.dim(0), channels = spec.in_channels, bw = spec.bank_width;
  const std::size_t patch_len = static_cast<std::size_t>(channels) * kPatchSize * kPatchSize;

  nn::Mat<T> bank(spec.bank_out(), n);
  std::array<std::vector<int>, 4> argmax;
  for (int j = 0; j < 4; ++j) {
    const int k = spec.bank_filter_sizes[j], side = 2 * k - 1, off = crop_offset(k);
    const int kk = channels * k * k, positions = k * k;
    argmax[j].assign(static_cast<std::size_t>(bw) * n, 0);
    const Tensor<T>& w = params[bank_weight_name(k)];
    const Tensor<T>& b = params[bank_bias_name(k)];
    nn::ConstRowMap<T> wm(w.data(), bw, kk);
    std::vector<T> crop(static_cast<std::size_t>(channels) * side * side);
    std::vector<T> cols(static_cast<std::size_t>(kk) * positions);
    nn::RowMat<T> resp(bw, positions);
    for (int s = 0; s < n; ++s) {
      const T* patch = input.data() + s * patch_len;
      for (int c = 0; c < channels; ++c)
        for (int y = 0; y < side; ++y)
          std::copy_n(patch + (static_cast<std::size_t>(c) * kPatchSize + off + y) * kPatchSize + off, side,
                      crop.data() + (static_cast<std::size_t>(c) * side + y) * side);
      nn::im2col(crop.data(), channels, side, side, k, 1, 0, k, k, cols.data());
      resp.noalias() = wm * nn::ConstRowMap<T>(cols.data(), kk, positions);
      for (int o = 0; o < bw; ++o) {
        int best = 0;
        for (int q = 1; q < positions; ++q)
          if (resp(o, q) > resp(o, best)) best = q;
        argmax[j][static_cast<std::size_t>(o) * n + s] = best;
        const T v = resp(o, best) + b[o];
        bank(j * bw + o, s) = v > T{0} ? v : T{0};
      }
    }
  }

  std::vector<nn::Mat<T>> act{bank};
  std::vector<nn::Mat<T>> relu_out, keep;
  nn::Mat<T> z;
  for (int l = DetectorSpec::kFirstTrunkLayer; l <= DetectorSpec::kLastTrunkLayer; ++l) {
    const nn::Mat<T>& prev = act.back();
    dense(params[layer_weight_name(l)], params[layer_bias_name(l)], prev, z);
    nn::Mat<T> r = z.cwiseMax(T{0});
    nn::Mat<T> a = spec.is_residual(l) ? nn::Mat<T>(prev + r) : r;
    nn::Mat<T> mask;
    if (dropout_rng && spec.has_dropout(l) && spec.dropout_rate > 0.0) {
      const T scale = static_cast<T>(1.0 / (1.0 - spec.dropout_rate));
      mask.resize(a.rows(), a.cols());
      for (Eigen::Index c = 0; c < a.cols(); ++c)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
          mask(i, c) = uniform01(*dropout_rng) >= spec.dropout_rate ? scale : T{0};
      a = a.cwiseProduct(mask);
    }
    relu_out.push_back(std::move(r));
    keep.push_back(std::move(mask));
    act.push_back(std::move(a));
  }
  nn::Mat<T> logits;
  dense(params[layer_weight_name(DetectorSpec::kOutputLayer)], params[layer_bias_name(DetectorSpec::kOutputLayer)],
        act.back(), logits);
  if (trace) {
    trace->input = input;
    trace->argmax = std::move(argmax);
    trace->act = std::move(act);
    trace->relu_out = std::move(relu_out);
    trace->keep = std::move(keep);
  }
  return logits;
}

// Backpropagates dL/dlogits ([output_units x N]) through a traced forward pass.
template <typename T>
DetectorGrads<T> detector_train_backward(const ModelParams<T>& params, const DetectorSpec& spec,
                                         const DetectorTrace<T>& trace, const nn::Mat<T>& dlogits,
                                         bool need_input_grad = false) {
  const int n = trace.input.dim(0), channels = spec.in_channels, bw = spec.bank_width;
  DetectorGrads<T> g{params.zeros_like(), need_input_grad ? zeros_like(trace.input) : Tensor<T>{}};

  auto accumulate_dense = [&](int l, const nn::Mat<T>& dz, const nn::Mat<T>& x) {
    Tensor<T>& dw = g.params[layer_weight_name(l)];
    Tensor<T>& db = g.params[layer_bias_name(l)];
    nn::RowMap<T>(dw.data(), dw.dim(0), dw.dim(1)).noalias() += dz * x.transpose();
    for (Eigen::Index r = 0; r < dz.rows(); ++r) {
      T acc{0};
      for (Eigen::Index c = 0; c < dz.cols(); ++c) acc += dz(r, c);
      db[static_cast<std::size_t>(r)] += acc;
    }
  };
  auto weight = [&](int l) {
    const Tensor<T>& w = params[layer_weight_name(l)];
    return nn::ConstRowMap<T>(w.data(), w.dim(0), w.dim(1));
  };

  accumulate_dense(DetectorSpec::kOutputLayer, dlogits, trace.act.back());
  nn::Mat<T> da = weight(DetectorSpec::kOutputLayer).transpose() * dlogits;
  for (int l = DetectorSpec::kLastTrunkLayer; l >= DetectorSpec::kFirstTrunkLayer; --l) {
    const std::size_t i = static_cast<std::size_t>(l - 2);
    if (trace.keep[i].size() > 0) da = da.cwiseProduct(trace.keep[i]);
    nn::Mat<T> dz = da;
    const nn::Mat<T>& r = trace.relu_out[i];
    for (Eigen::Index e = 0; e < dz.size(); ++e)
      if (!(r.data()[e] > T{0})) dz.data()[e] = T{0};
    const nn::Mat<T>& prev = trace.act[i];
    accumulate_dense(l, dz, prev);
    nn::Mat<T> dprev = weight(l).transpose() * dz;
    if (spec.is_residual(l)) dprev += da;
    da = std::move(dprev);
  }

  // Layer 1: only the pooled maximum of each branch channel receives gradient.
  const std::size_t patch_len = static_cast<std::size_t>(channels) * kPatchSize * kPatchSize;
  for (int j = 0; j < 4; ++j) {
    const int k = spec.bank_filter_sizes[j], off = detector_detail::crop_offset(k);
    const Tensor<T>& w = params[bank_weight_name(k)];
    Tensor<T>& dw = g.params[bank_weight_name(k)];
    Tensor<T>& db = g.params[bank_bias_name(k)];
    for (int o = 0; o < bw; ++o)
      for (int s = 0; s < n; ++s) {
        if (!(trace.act[0](j * bw + o, s) > T{0})) continue;
        const T gv = da(j * bw + o, s);
        if (gv == T{0}) continue;
        const int pos = trace.argmax[j][static_cast<std::size_t>(o) * n + s];
        const int r0 = off + pos / k, c0 = off + pos % k;
        db[o] += gv;
        const T* patch = trace.input.data() + s * patch_len;
        T* dpatch = need_input_grad ? g.input.data() + s * patch_len : nullptr;
        for (int c = 0; c < channels; ++c)
          for (int dy = 0; dy < k; ++dy) {
            const std::size_t prow = (static_cast<std::size_t>(c) * kPatchSize + r0 + dy) * kPatchSize + c0;
            const std::size_t wrow = ((static_cast<std::size_t>(o) * channels + c) * k + dy) * k;
            for (int dx = 0; dx < k; ++dx) {
              dw[wrow + dx] += gv * patch[prow + dx];
              if (dpatch) dpatch[prow + dx] += gv * w[wrow + dx];
            }
          }
      }
  }
  return g;
}

// Layer-8 activations (after ReLU, no dropout) for a batch of patches; one
// column per patch.
template <typename T>
nn::Mat<T> detector_features(const ModelParams<T>& params, const DetectorSpec& spec, const Tensor<T>& input) {
  DetectorTrace<T> trace;
  detector_train_forward(params, spec, input, nullptr, &trace);
  return trace.act.back();
}

// ---------------------------------------------------------------- test mode

enum class MapRegion {
  full,  // every input pixel, zero padding at the borders
  valid  // only pixels at least 12 from the border: (H-24) x (W-24)
};

template <typename T>
struct DetectorMap {
  int row0 = 0;  // placement of the map within the input image
  int col0 = 0;
  int height = 0;
  int width = 0;
  Tensor<T> logits;    // output_units x height x width
  Tensor<T> features;  // feature_width x height x width, only when requested
};

namespace detector_detail {

// Computes branch-k responses for output rows [r0, r1) and cols [c0, c1) of an
// image (C x H x W) and writes rectified pooled planes into `out`
// (bank_width planes of (r1-r0) x (c1-c0)). Each response is accumulated in a
// fixed (channel, dy, dx) order, so a pixel's value does not depend on the
// requested region.
template <typename T>
void bank_branch_planes(const Tensor<T>& w, const Tensor<T>& b, int k, const T* image, int channels, int height,
                        int width, int r0, int r1, int c0, int c1, T* out) {
  const int h = (k - 1) / 2, bw = w.dim(0);
  const int cr0 = std::max(0, r0 - h), cr1 = std::min(height, r1 + h);
  const int cc0 = std::max(0, c0 - h), cc1 = std::min(width, c1 + h);
  const int ch = cr1 - cr0, cw = cc1 - cc0;
  const int oh = r1 - r0, ow = c1 - c0;
  std::vector<T> resp(static_cast<std::size_t>(ch) * cw);
  std::vector<T> hmax(static_cast<std::size_t>(ch) * ow);
  for (int o = 0; o < bw; ++o) {
    std::fill(resp.begin(), resp.end(), b[o]);
    for (int c = 0; c < channels; ++c) {
      const T* band = image + static_cast<std::size_t>(c) * height * width;
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx) {
          const T wv = w[((static_cast<std::size_t>(o) * channels + c) * k + dy) * k + dx];
          const int xs = std::max(cc0, h - dx), xe = std::min(cc1, width + h - dx);
          if (xs >= xe) continue;
          for (int y = cr0; y < cr1; ++y) {
            const int iy = y - h + dy;
            if (iy < 0 || iy >= height) continue;
            const T* src = band + static_cast<std::size_t>(iy) * width + (xs - h + dx);
            T* dst = resp.data() + static_cast<std::size_t>(y - cr0) * cw + (xs - cc0);
            const int len = xe - xs;
            for (int x = 0; x < len; ++x) dst[x] += wv * src[x];
          }
        }
    }
    // Separable k x k max pool, clipped to the image.
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < ow; ++x) {
        const int ax = c0 + x;
        const int lo = std::max(cc0, ax - h) - cc0, hi = std::min(cc1 - 1, ax + h) - cc0;
        const T* row = resp.data() + static_cast<std::size_t>(y) * cw;
        T m = row[lo];
        for (int q = lo + 1; q <= hi; ++q) m = row[q] > m ? row[q] : m;
        hmax[static_cast<std::size_t>(y) * ow + x] = m;
      }
    T* plane = out + static_cast<std::size_t>(o) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const int ay = r0 + y;
      const int lo = std::max(cr0, ay - h) - cr0, hi = std::min(cr1 - 1, ay + h) - cr0;
      for (int x = 0; x < ow; ++x) {
        T m = hmax[static_cast<std::size_t>(lo) * ow + x];
        for (int q = lo + 1; q <= hi; ++q) {
          const T v = hmax[static_cast<std::size_t>(q) * ow + x];
          m = v > m ? v : m;
        }
        plane[static_cast<std::size_t>(y) * ow + x] = m > T{0} ? m : T{0};
      }
    }
  }
}

// y[o][p] = b[o] + sum_i w[o][i] x[i][p], accumulated in ascending i.
template <typename T>
void dense_planes(const Tensor<T>& w, const Tensor<T>& b, const T* x, std::size_t pixels, T* y) {
  const int out = w.dim(0), in = w.dim(1);
  for (int o = 0; o < out; ++o) {
    T* dst = y + static_cast<std::size_t>(o) * pixels;
    std::fill(dst, dst + pixels, b[o]);
    for (int i = 0; i < in; ++i) {
      const T wv = w[static_cast<std::size_t>(o) * in + i];
      const T* src = x + static_cast<std::size_t>(i) * pixels;
      for (std::size_t p = 0; p < pixels; ++p) dst[p] += wv * src[p];
    }
  }
}

}  // namespace detector_detail

// Dense test-mode evaluation over an image (C x H x W, H, W >= 25). Rows are
// processed in strips of `strip_rows` to bound the working set.
template <typename T>
DetectorMap<T> detector_test_forward(const ModelParams<T>& params, const DetectorSpec& spec, const T* image,
                                     int channels, int height, int width, MapRegion region,
                                     bool want_features = false, int strip_rows = 64) {
  using namespace detector_detail;
  if (channels != spec.in_channels)
    throw ShapeError("detector expects " + std::to_string(spec.in_channels) + " channels, got " +
                     std::to_string(channels));
  if (height < kPatchSize || width < kPatchSize)
    throw ShapeError("test-mode input must be at least 25 x 25, got " + std::to_string(height) + " x " +
                     std::to_string(width));
  DetectorMap<T> map;
  const int margin = region == MapRegion::valid ? kPatchRadius : 0;
  map.row0 = margin;
  map.col0 = margin;
  map.height = height - 2 * margin;
  map.width = width - 2 * margin;
  map.logits = Tensor<T>({spec.output_units, map.height, map.width});
  if (want_features) map.features = Tensor<T>({spec.feature_width(), map.height, map.width});

  const int c0 = map.col0, c1 = map.col0 + map.width;
  const int widest = *std::max_element(spec.trunk_widths.begin(), spec.trunk_widths.end());
  for (int sr0 = map.row0; sr0 < map.row0 + map.height; sr0 += strip_rows) {
    const int sr1 = std::min(map.row0 + map.height, sr0 + strip_rows);
    const std::size_t pixels = static_cast<std::size_t>(sr1 - sr0) * (c1 - c0);
    std::vector<T> cur(static_cast<std::size_t>(std::max(spec.bank_out(), widest)) * pixels);
    std::vector<T> nxt(static_cast<std::size_t>(widest) * pixels);
    for (int j = 0; j < 4; ++j) {
      const int k = spec.bank_filter_sizes[j];
      bank_branch_planes(params[bank_weight_name(k)], params[bank_bias_name(k)], k, image, channels, height, width,
                         sr0, sr1, c0, c1, cur.data() + static_cast<std::size_t>(j) * spec.bank_width * pixels);
    }
    for (int l = DetectorSpec::kFirstTrunkLayer; l <= DetectorSpec::kLastTrunkLayer; ++l) {
      const int out = spec.trunk_out(l);
      dense_planes(params[layer_weight_name(l)], params[layer_bias_name(l)], cur.data(), pixels, nxt.data());
      const std::size_t len = static_cast<std::size_t>(out) * pixels;
      if (spec.is_residual(l)) {
        for (std::size_t e = 0; e < len; ++e) nxt[e] = cur[e] + (nxt[e] > T{0} ? nxt[e] : T{0});
      } else {
        for (std::size_t e = 0; e < len; ++e) nxt[e] = nxt[e] > T{0} ? nxt[e] : T{0};
      }
      std::swap(cur, nxt);
    }
    std::vector<T> logits(static_cast<std::size_t>(spec.output_units) * pixels);
    dense_planes(params[layer_weight_name(DetectorSpec::kOutputLayer)],
                 params[layer_bias_name(DetectorSpec::kOutputLayer)], cur.data(), pixels, logits.data());
    const std::size_t row_off = static_cast<std::size_t>(sr0 - map.row0) * map.width;
    const std::size_t plane = static_cast<std::size_t>(map.height) * map.width;
    for (int o = 0; o < spec.output_units; ++o)
      std::copy_n(logits.data() + o * pixels, pixels, map.logits.data() + o * plane + row_off);
    if (want_features)
      for (int f = 0; f < spec.feature_width(); ++f)
        std::copy_n(cur.data() + f * pixels, pixels, map.features.data() + f * plane + row_off);
  }
  return map;
}

template <typename T>
DetectorMap<T> detector_test_forward(const ModelParams<T>& params, const DetectorSpec& spec, const Tensor<T>& image,
                                     MapRegion region, bool want_features = false) {
  if (image.rank() != 3) throw ShapeError("test-mode input must be C x H x W");
  return detector_test_forward(params, spec, image.data(), image.dim(0), image.dim(1), image.dim(2), region,
                               want_features);
}

}  // namespace rtd
