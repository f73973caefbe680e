#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rtd/core/error.hpp"
#include "rtd/data/patch.hpp"
#include "rtd/models/params.hpp"
#include "rtd/nn/ops.hpp"

namespace rtd {

// Hard negative generator: a ten-layer conv-deconv network (eight
// convolutions, two transposed convolutions) with U-Net style skips, mapping a
// C x 25 x 25 patch to a patch of the same shape.
//
//   conv1  C  -> w   25x25        conv5  2w -> 4w  s2 -> 7x7
//   conv2  w  -> w   25x25  [A]   conv6  4w -> 4w  7x7
//   conv3  w  -> 2w  s2 -> 13x13  deconv1 4w -> 2w s2 -> 13x13, concat B
//   conv4  2w -> 2w  13x13  [B]   conv7  4w -> 2w  13x13
//                                 deconv2 2w -> w  s2 -> 25x25, concat A
//                                 conv8  2w -> C   25x25 (linear)
//
// With `residual_output` the network predicts an additive perturbation of its
// input; otherwise conv8 emits the patch directly.
struct GeneratorSpec {
  int in_channels = 8;
  int base_width = 16;
  bool residual_output = true;
  double init_std = 0.02;
  double last_init_std = 50.0;
  // Residual mode only: the perturbation is bound * tanh(raw / bound); 0
  // leaves it unbounded.
  double output_bound = 3.0;

  void validate() const {
    if (in_channels <= 0 || base_width <= 0) throw ConfigError("generator widths must be positive");
    if (output_bound < 0.0) throw ConfigError("generator output bound must be >= 0");
  }
};

namespace generator_detail {

struct LayerDef {
  const char* name;
  bool transposed;
  int in_mult;   // multiples of base width; 0 means in_channels
  int out_mult;  // 0 means in_channels
  int stride;
};

inline constexpr LayerDef kLayers[] = {
    {"conv1", false, 0, 1, 1}, {"conv2", false, 1, 1, 1},   {"conv3", false, 1, 2, 2},
    {"conv4", false, 2, 2, 1}, {"conv5", false, 2, 4, 2},   {"conv6", false, 4, 4, 1},
    {"deconv1", true, 4, 2, 2}, {"conv7", false, 4, 2, 1},  {"deconv2", true, 2, 1, 2},
    {"conv8", false, 2, 0, 1},
};
inline constexpr int kLayerCount = 10;

inline nn::ConvGeometry geometry(const GeneratorSpec& spec, const LayerDef& d) {
  auto ch = [&](int mult) { return mult == 0 ? spec.in_channels : mult * spec.base_width; };
  return {ch(d.in_mult), ch(d.out_mult), 3, d.stride, 1};
}

}  // namespace generator_detail

template <typename T>
ModelParams<T> generator_param_layout(const GeneratorSpec& spec) {
  using namespace generator_detail;
  spec.validate();
  ModelParams<T> p;
  for (int i = 0; i < kLayerCount; ++i) {
    const auto& d = kLayers[i];
    const auto g = geometry(spec, d);
    const InitSpec init{0.0, i == kLayerCount - 1 ? spec.last_init_std : spec.init_std};
    if (d.transposed) p.add(std::string(d.name) + ".weight", {g.in_channels, g.out_channels, 3, 3}, init);
    else p.add(std::string(d.name) + ".weight", {g.out_channels, g.in_channels, 3, 3}, init);
    p.add(std::string(d.name) + ".bias", {g.out_channels}, InitSpec{});
  }
  return p;
}

template <typename T>
ModelParams<T> init_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  auto p = generator_param_layout<T>(spec);
  p.initialize(seed);
  return p;
}

template <typename T>
struct GeneratorTrace {
  std::vector<Tensor<T>> inputs;   // input of each layer
  std::vector<Tensor<T>> outputs;  // rectified output of each layer (raw for the last)
};

// Generates a batch (N x C x 25 x 25) from real negative patches.
template <typename T>
Tensor<T> generator_forward(const ModelParams<T>& params, const GeneratorSpec& spec, const Tensor<T>& input,
                            GeneratorTrace<T>* trace = nullptr) {
  using namespace generator_detail;
  if (input.rank() != 4 || input.dim(1) != spec.in_channels || input.dim(2) != kPatchSize ||
      input.dim(3) != kPatchSize)
    throw ShapeError("generator input must be N x " + std::to_string(spec.in_channels) + " x 25 x 25, got " +
                     shape_str(input.shape()));
  std::vector<Tensor<T>> ins, outs;
  Tensor<T> x = input, skip_a, skip_b;
  for (int i = 0; i < kLayerCount; ++i) {
    const auto& d = kLayers[i];
    const auto g = geometry(spec, d);
    const std::string name(d.name);
    ins.push_back(x);
    Tensor<T> y = d.transposed ? nn::deconv2d(x, params[name + ".weight"], params[name + ".bias"], g)
                               : nn::conv2d(x, params[name + ".weight"], params[name + ".bias"], g);
    if (i != kLayerCount - 1) nn::relu_inplace(y);
    outs.push_back(y);
    if (name == "conv2") skip_a = y;
    if (name == "conv4") skip_b = y;
    if (name == "deconv1") y = nn::concat_channels(y, skip_b);
    if (name == "deconv2") y = nn::concat_channels(y, skip_a);
    x = std::move(y);
  }
  if (spec.residual_output) {
    if (spec.output_bound > 0.0) {
      const T b = static_cast<T>(spec.output_bound);
      for (T& v : x.values()) v = b * std::tanh(v / b);
    }
    nn::add_inplace(x, input);
  }
  if (trace) {
    trace->inputs = std::move(ins);
    trace->outputs = std::move(outs);
  }
  return x;
}

// Parameter gradients given dL/d(output).
template <typename T>
ModelParams<T> generator_backward(const ModelParams<T>& params, const GeneratorSpec& spec,
                                  const GeneratorTrace<T>& trace, const Tensor<T>& doutput) {
  using namespace generator_detail;
  ModelParams<T> grads = params.zeros_like();
  Tensor<T> dy = doutput;
  if (spec.residual_output && spec.output_bound > 0.0) {
    const T b = static_cast<T>(spec.output_bound);
    const Tensor<T>& raw = trace.outputs.back();
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const T t = std::tanh(raw[i] / b);
      dy[i] *= T{1} - t * t;
    }
  }
  Tensor<T> dskip_a, dskip_b;
  for (int i = kLayerCount - 1; i >= 0; --i) {
    const auto& d = kLayers[i];
    const auto g = geometry(spec, d);
    const std::string name(d.name);
    if (name == "deconv1" || name == "deconv2") {
      auto [mine, skip] = nn::split_channels(dy, g.out_channels);
      (name == "deconv1" ? dskip_b : dskip_a) = std::move(skip);
      dy = std::move(mine);
    }
    if (name == "conv4") nn::add_inplace(dy, dskip_b);
    if (name == "conv2") nn::add_inplace(dy, dskip_a);
    if (i != kLayerCount - 1) nn::relu_backward_inplace(dy, trace.outputs[i]);
    auto cg = d.transposed ? nn::deconv2d_backward(trace.inputs[i], params[name + ".weight"], dy, g, i > 0)
                           : nn::conv2d_backward(trace.inputs[i], params[name + ".weight"], dy, g, i > 0);
    grads[name + ".weight"] = std::move(cg.dw);
    grads[name + ".bias"] = std::move(cg.db);
    dy = std::move(cg.dx);
  }
  return grads;
}

}  // namespace rtd
