#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "rtd/core/error.hpp"

// Training objectives. Scores are probabilities in (0, 1); log arguments are
// clamped to [eps, 1 - eps] and every clamp is counted in the result.
namespace rtd::losses {

inline constexpr double kEpsilon = 1e-7;

struct LossValue {
  double scalar = 0.0;
  std::vector<double> per_example;
  int clamped = 0;
};

inline double clamp_prob(double s, int* clamped = nullptr) {
  if (s < kEpsilon) {
    if (clamped) ++*clamped;
    return kEpsilon;
  }
  if (s > 1.0 - kEpsilon) {
    if (clamped) ++*clamped;
    return 1.0 - kEpsilon;
  }
  return s;
}

// Binary cross-entropy of one probability against target y in {0, 1}.
inline double bce(double s, double y, int* clamped = nullptr) {
  const double c = clamp_prob(s, clamped);
  return -(y * std::log(c) + (1.0 - y) * std::log(1.0 - c));
}

inline double bce_derivative(double s, double y) {
  const double c = clamp_prob(s);
  return -y / c + (1.0 - y) / (1.0 - c);
}

inline LossValue finish(std::vector<double> per, int clamped) {
  LossValue v;
  v.per_example = std::move(per);
  v.clamped = clamped;
  v.scalar = v.per_example.empty()
                 ? 0.0
                 : std::accumulate(v.per_example.begin(), v.per_example.end(), 0.0) / v.per_example.size();
  return v;
}

// Mean binary cross-entropy between detector scores and binary labels.
template <typename S>
LossValue detector_loss(std::span<const S> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
  std::vector<double> per(scores.size());
  int clamped = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw LabelError("binary label must be 0 or 1");
    per[i] = bce(static_cast<double>(scores[i]), labels[i], &clamped);
  }
  return finish(std::move(per), clamped);
}

template <typename S>
LossValue detector_loss(std::span<const S> scores, int label) {
  std::vector<int> labels(scores.size(), label);
  return detector_loss<S>(scores, std::span<const int>(labels));
}

// dL/ds of the mean loss.
template <typename S>
std::vector<double> detector_loss_grad(std::span<const S> scores, std::span<const int> labels) {
  std::vector<double> g(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    g[i] = bce_derivative(static_cast<double>(scores[i]), labels[i]) / static_cast<double>(scores.size());
  return g;
}

// dL/dz for sigmoid logits z of a mean BCE loss over `count` examples:
// (s - y) / count. Exact through the sigmoid, so it does not saturate.
template <typename S>
S logit_grad(S score, double target, std::size_t count) {
  return static_cast<S>((static_cast<double>(score) - target) / static_cast<double>(count));
}

// H(D(N), 1) + H(D(G(N)), 0); per_example pairs each real patch with the
// patch generated from it.
template <typename S>
LossValue discriminator_loss(std::span<const S> real_scores, std::span<const S> generated_scores) {
  if (real_scores.empty() || generated_scores.empty()) throw ShapeError("discriminator loss needs scores");
  if (real_scores.size() != generated_scores.size())
    throw ShapeError("discriminator loss pairs real and generated scores; sizes differ");
  std::vector<double> per(real_scores.size());
  int clamped = 0;
  for (std::size_t i = 0; i < per.size(); ++i)
    per[i] = bce(static_cast<double>(real_scores[i]), 1.0, &clamped) +
             bce(static_cast<double>(generated_scores[i]), 0.0, &clamped);
  return finish(std::move(per), clamped);
}

// H(F(G(N)), 1) + H(D(G(N)), 1): the generator wants its outputs scored as
// positives by the detector and as real by the discriminator.
template <typename S>
LossValue hng_loss(std::span<const S> detector_scores, std::span<const S> discriminator_scores) {
  if (detector_scores.size() != discriminator_scores.size())
    throw ShapeError("generator loss needs equally many detector and discriminator scores");
  std::vector<double> per(detector_scores.size());
  int clamped = 0;
  for (std::size_t i = 0; i < per.size(); ++i)
    per[i] = bce(static_cast<double>(detector_scores[i]), 1.0, &clamped) +
             bce(static_cast<double>(discriminator_scores[i]), 1.0, &clamped);
  return finish(std::move(per), clamped);
}

// Multi-label form for category mode: scores is N x K row-major per-class
// sigmoid outputs; per-example loss sums the K binary cross-entropies against
// the one-hot target.
template <typename S>
LossValue hsi_detector_loss(std::span<const S> scores, std::span<const int> labels, int classes) {
  if (classes <= 0 || scores.size() != labels.size() * static_cast<std::size_t>(classes))
    throw ShapeError("category scores must be N x K");
  std::vector<double> per(labels.size());
  int clamped = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw LabelError("category " + std::to_string(labels[i]) + " out of range");
    double acc = 0.0;
    for (int k = 0; k < classes; ++k)
      acc += bce(static_cast<double>(scores[i * classes + k]), labels[i] == k ? 1.0 : 0.0, &clamped);
    per[i] = acc;
  }
  return finish(std::move(per), clamped);
}

template <typename S>
std::vector<double> hsi_detector_loss_grad(std::span<const S> scores, std::span<const int> labels, int classes) {
  std::vector<double> g(scores.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (int k = 0; k < classes; ++k)
      g[i * classes + k] = bce_derivative(static_cast<double>(scores[i * classes + k]), labels[i] == k ? 1.0 : 0.0) /
                           static_cast<double>(labels.size());
  return g;
}

// Loss of one example under each candidate label: entry l is the category
// loss the example would incur if its label were l.
template <typename S>
std::vector<double> per_category_losses(std::span<const S> class_scores) {
  const int classes = static_cast<int>(class_scores.size());
  std::vector<double> out(classes);
  for (int l = 0; l < classes; ++l) {
    double acc = 0.0;
    for (int k = 0; k < classes; ++k) acc += bce(static_cast<double>(class_scores[k]), l == k ? 1.0 : 0.0);
    out[l] = acc;
  }
  return out;
}

struct NoAdversaryError : Error {
  explicit NoAdversaryError(const std::string& what) : Error(ErrorClass::config, "no adversary: " + what) {}
};

// Adversarial target for the hard example generator: the highest-loss
// category other than the true one; ties go to the lowest index.
inline int heg_adversarial_label(std::span<const double> losses, int true_category) {
  if (losses.size() < 2) throw NoAdversaryError("adversarial labels need at least two categories");
  if (true_category < 0 || true_category >= static_cast<int>(losses.size()))
    throw LabelError("true category out of range");
  int best = -1;
  for (int l = 0; l < static_cast<int>(losses.size()); ++l) {
    if (l == true_category) continue;
    if (best < 0 || losses[l] > losses[best]) best = l;
  }
  return best;
}

}  // namespace rtd::losses
