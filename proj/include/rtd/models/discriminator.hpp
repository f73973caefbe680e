#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "rtd/core/error.hpp"
#include "rtd/data/patch.hpp"
#include "rtd/models/params.hpp"
#include "rtd/nn/ops.hpp"

namespace rtd {

// Real-vs-generated classifier: four stride-2 3x3 convolutions with ReLU
// (25 -> 13 -> 7 -> 4 -> 2) and one fully-connected layer to a single logit.
struct DiscriminatorSpec {
  int in_channels = 8;
  std::array<int, 4> widths{32, 64, 128, 256};
  // Weights use N(0, sqrt(2 / fan_in)) scaled by this factor.
  double init_gain = 1.0;

  static constexpr int kFinalSide = 2;

  void validate() const {
    if (in_channels <= 0) throw ConfigError("discriminator needs input channels");
    for (int w : widths)
      if (w <= 0) throw ConfigError("discriminator widths must be positive");
  }
  nn::ConvGeometry conv(int i) const {
    return {i == 0 ? in_channels : widths[i - 1], widths[i], 3, 2, 1};
  }
  int fc_in() const { return widths[3] * kFinalSide * kFinalSide; }
};

template <typename T>
ModelParams<T> discriminator_param_layout(const DiscriminatorSpec& spec) {
  spec.validate();
  ModelParams<T> p;
  for (int i = 0; i < 4; ++i) {
    const auto g = spec.conv(i);
    const double std = spec.init_gain * std::sqrt(2.0 / (g.in_channels * 9.0));
    p.add("conv" + std::to_string(i + 1) + ".weight", {g.out_channels, g.in_channels, 3, 3}, {0.0, std});
    p.add("conv" + std::to_string(i + 1) + ".bias", {g.out_channels}, {});
  }
  p.add("fc.weight", {1, spec.fc_in()}, {0.0, spec.init_gain * std::sqrt(1.0 / spec.fc_in())});
  p.add("fc.bias", {1}, {});
  return p;
}

template <typename T>
ModelParams<T> init_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed) {
  auto p = discriminator_param_layout<T>(spec);
  p.initialize(seed);
  return p;
}

template <typename T>
struct DiscriminatorTrace {
  std::vector<Tensor<T>> inputs;
  std::vector<Tensor<T>> outputs;
};

// Returns one logit per patch.
template <typename T>
std::vector<T> discriminator_forward(const ModelParams<T>& params, const DiscriminatorSpec& spec,
                                     const Tensor<T>& input, DiscriminatorTrace<T>* trace = nullptr) {
  if (input.rank() != 4 || input.dim(1) != spec.in_channels || input.dim(2) != kPatchSize ||
      input.dim(3) != kPatchSize)
    throw ShapeError("discriminator input must be N x " + std::to_string(spec.in_channels) + " x 25 x 25, got " +
                     shape_str(input.shape()));
  const int n = input.dim(0);
  Tensor<T> x = input;
  std::vector<Tensor<T>> ins, outs;
  for (int i = 0; i < 4; ++i) {
    const std::string name = "conv" + std::to_string(i + 1);
    ins.push_back(x);
    x = nn::conv2d(x, params[name + ".weight"], params[name + ".bias"], spec.conv(i));
    nn::relu_inplace(x);
    outs.push_back(x);
  }
  const Tensor<T>& w = params["fc.weight"];
  std::vector<T> logits(static_cast<std::size_t>(n));
  const std::size_t f_in = static_cast<std::size_t>(spec.fc_in());
  for (int s = 0; s < n; ++s) {
    const T* xs = x.data() + static_cast<std::size_t>(s) * f_in;
    T acc = 0;
    for (std::size_t f = 0; f < f_in; ++f) acc += xs[f] * w[f];
    logits[static_cast<std::size_t>(s)] = acc + params["fc.bias"][0];
  }
  if (trace) {
    trace->inputs = std::move(ins);
    trace->outputs = std::move(outs);
  }
  return logits;
}

template <typename T>
struct DiscriminatorGrads {
  ModelParams<T> params;
  Tensor<T> input;
};

template <typename T>
DiscriminatorGrads<T> discriminator_backward(const ModelParams<T>& params, const DiscriminatorSpec& spec,
                                             const DiscriminatorTrace<T>& trace, const std::vector<T>& dlogits,
                                             bool need_input_grad = false) {
  const int n = static_cast<int>(dlogits.size());
  DiscriminatorGrads<T> g{params.zeros_like(), {}};
  const Tensor<T>& last = trace.outputs.back();
  const Tensor<T>& w = params["fc.weight"];
  Tensor<T>& dw = g.params["fc.weight"];
  Tensor<T> dx(last.shape());
  for (int s = 0; s < n; ++s) {
    const T d = dlogits[s];
    g.params["fc.bias"][0] += d;
    for (int f = 0; f < spec.fc_in(); ++f) {
      dw[f] += d * last[static_cast<std::size_t>(s) * spec.fc_in() + f];
      dx[static_cast<std::size_t>(s) * spec.fc_in() + f] = d * w[f];
    }
  }
  for (int i = 3; i >= 0; --i) {
    const std::string name = "conv" + std::to_string(i + 1);
    nn::relu_backward_inplace(dx, trace.outputs[i]);
    auto cg = nn::conv2d_backward(trace.inputs[i], params[name + ".weight"], dx, spec.conv(i), i > 0 || need_input_grad);
    g.params[name + ".weight"] = std::move(cg.dw);
    g.params[name + ".bias"] = std::move(cg.db);
    dx = std::move(cg.dx);
  }
  if (need_input_grad) g.input = std::move(dx);
  return g;
}

}  // namespace rtd
