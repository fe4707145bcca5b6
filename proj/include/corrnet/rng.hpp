#pragma once

#include "corrnet/tensor.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace corrnet {

/// One splitmix64 step; advances `state` and returns the mixed output.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seed for stream `index` of a master seed: splitmix64 of (master + index * golden).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t state = master + index * 0x9E3779B97F4A7C15ULL;
  return splitmix64(state);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Seed for a named parameter, independent of creation order.
inline std::uint64_t param_seed(std::uint64_t master, std::string_view name) {
  return derive_seed(master, fnv1a(name));
}

namespace init {

template <typename S>
Tensor<S> normal(Shape shape, double stddev, std::uint64_t seed) {
  Tensor<S> t(std::move(shape));
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(dist(gen));
  return t;
}

template <typename S>
Tensor<S> uniform(Shape shape, double bound, std::uint64_t seed) {
  Tensor<S> t(std::move(shape));
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(dist(gen));
  return t;
}

}  // namespace init
}  // namespace corrnet
