#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rtd/core/error.hpp"
#include "rtd/core/rng.hpp"
#include "rtd/core/tensor.hpp"

namespace rtd {

struct InitSpec {
  double mean = 0.0;
  double stddev = 0.0;  // 0 means constant `mean` (biases)
  friend bool operator==(const InitSpec&, const InitSpec&) = default;
};

// Ordered, named parameter tensors of one network.
template <typename T>
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    InitSpec init;
  };

  void add(std::string name, Shape shape, InitSpec init) {
    if (find(name)) throw ConfigError("duplicate parameter " + name);
    entries_.push_back({std::move(name), Tensor<T>(std::move(shape)), init});
  }

  Tensor<T>& operator[](const std::string& name) {
    if (auto* e = find(name)) return e->tensor;
    throw ConfigError("no parameter named " + name);
  }
  const Tensor<T>& operator[](const std::string& name) const {
    if (const auto* e = find(name)) return e->tensor;
    throw ConfigError("no parameter named " + name);
  }

  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::uint64_t seed() const noexcept { return seed_; }

  // Draws every tensor from its InitSpec, in declaration order, from one
  // engine seeded with `seed`.
  void initialize(std::uint64_t seed) {
    seed_ = seed;
    Rng rng(seed);
    for (auto& e : entries_) {
      if (e.init.stddev == 0.0) {
        e.tensor.fill(static_cast<T>(e.init.mean));
        continue;
      }
      std::normal_distribution<double> dist(e.init.mean, e.init.stddev);
      for (T& v : e.tensor.values()) v = static_cast<T>(dist(rng));
    }
  }

  ModelParams zeros_like() const {
    ModelParams out;
    out.seed_ = seed_;
    for (const auto& e : entries_) out.entries_.push_back({e.name, Tensor<T>(e.tensor.shape()), e.init});
    return out;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& e : entries_) {
      out.add(e.name, e.tensor.shape(), e.init);
      out[e.name] = e.tensor.template cast<U>();
    }
    out.set_seed(seed_);
    return out;
  }

  void set_seed(std::uint64_t s) noexcept { seed_ = s; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i)
      if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].tensor == b.entries_[i].tensor)) return false;
    return true;
  }

 private:
  Entry* find(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }
  const Entry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  std::vector<Entry> entries_;
  std::uint64_t seed_ = 0;
};

}  // namespace rtd
