#pragma once

#include <cstdint>
#include <random>

#include "terracer/tensor.hpp"

namespace terracer {

/// splitmix64 step; used to derive independent seed streams from one
/// user-facing seed so that, e.g., weight init and batch sampling do not
/// share a generator.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(seed); }

template <typename T>
void fill_uniform(Tensor<T>& t, std::mt19937_64& rng, T lo, T hi) {
  std::uniform_real_distribution<double> d(static_cast<double>(lo),
                                           static_cast<double>(hi));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(d(rng));
}

template <typename T>
void fill_normal(Tensor<T>& t, std::mt19937_64& rng, T mean, T stddev) {
  std::normal_distribution<double> d(static_cast<double>(mean),
                                     static_cast<double>(stddev));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(d(rng));
}

/// Pushes values out of the band |v| < margin. Gradient suites use this to
/// keep finite-difference probes away from the relu and max-pool kinks.
template <typename T>
void avoid_kinks(Tensor<T>& t, T margin) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (t[i] >= T(0) && t[i] < margin) t[i] += margin;
    if (t[i] < T(0) && t[i] > -margin) t[i] -= margin;
  }
}

}  // namespace terracer
