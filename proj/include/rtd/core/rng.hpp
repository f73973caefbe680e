#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "rtd/core/error.hpp"

namespace rtd {

// All stochastic components draw from this engine. Its state round-trips
// through text so checkpoints can resume bit-exactly.
using Rng = std::mt19937_64;

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void restore_rng(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw FormatError("corrupt rng state");
}

// Derives an independent child seed; used to hand seeds to per-call consumers
// (dropout masks, sub-samplers) without sharing engine state.
inline std::uint64_t split_seed(Rng& rng) { return rng(); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  return std::uniform_int_distribution<int>(lo, hi_inclusive)(rng);
}

inline double gaussian(Rng& rng, double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

}  // namespace rtd
