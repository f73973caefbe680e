#pragma once

#include <cmath>
#include <string>

#include "rtd/core/error.hpp"
#include "rtd/models/params.hpp"

namespace rtd {

// Step schedule: lr(t) = base_lr / factor^floor(t / drop_every).
struct StageSchedule {
  int iterations = 1250;
  double base_lr = 0.01;
  int lr_drop_every = 500;
  double lr_drop_factor = 10.0;
  double momentum = 0.9;
  double weight_decay = 0.0005;

  double lr_at(int t) const {
    if (lr_drop_every <= 0) return base_lr;
    return base_lr / std::pow(lr_drop_factor, t / lr_drop_every);
  }

  void validate(const std::string& what) const {
    if (iterations < 0) throw ConfigError(what + ": iterations must be >= 0");
    if (!(base_lr > 0.0)) throw ConfigError(what + ": base learning rate must be positive");
    if (lr_drop_factor <= 0.0) throw ConfigError(what + ": lr drop factor must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError(what + ": momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError(what + ": weight decay must be >= 0");
  }
};

// Classic momentum SGD with weight decay folded into the gradient:
//   v <- momentum * v + lr * (g + weight_decay * p);  p <- p - v.
// Every gradient is checked before anything is modified.
template <typename T>
void sgd_step(ModelParams<T>& params, const ModelParams<T>& grads, ModelParams<T>& velocity, double lr,
              double momentum, double weight_decay) {
  auto& pe = params.entries();
  const auto& ge = grads.entries();
  auto& ve = velocity.entries();
  if (ge.size() != pe.size() || ve.size() != pe.size()) throw ShapeError("optimizer buffers differ in layout");
  for (std::size_t i = 0; i < pe.size(); ++i) {
    if (ge[i].tensor.shape() != pe[i].tensor.shape() || ve[i].tensor.shape() != pe[i].tensor.shape())
      throw ShapeError("optimizer buffers for " + pe[i].name + " differ in shape");
    for (T g : ge[i].tensor.values())
      if (!std::isfinite(static_cast<double>(g))) throw DivergenceError("non-finite gradient in " + pe[i].name);
  }
  for (std::size_t i = 0; i < pe.size(); ++i) {
    T* p = pe[i].tensor.data();
    T* v = ve[i].tensor.data();
    const T* g = ge[i].tensor.data();
    for (std::size_t j = 0; j < pe[i].tensor.size(); ++j) {
      v[j] = static_cast<T>(momentum * v[j] + lr * (g[j] + weight_decay * p[j]));
      p[j] -= v[j];
    }
  }
}

}  // namespace rtd
