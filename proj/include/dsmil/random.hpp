#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "dsmil/tensor.hpp"

namespace dsmil {

using Rng = std::mt19937_64;

// Independent stream for (seed, index); used per image and per parameter block.
inline Rng make_stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

// Glorot/Xavier uniform: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_parameter(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = dist(rng);
  return Tensor::parameter(fan_in, fan_out, std::move(v));
}

inline Tensor zero_parameter(std::size_t rows, std::size_t cols) {
  return Tensor::parameter(rows, cols, std::vector<double>(rows * cols, 0.0));
}

}  // namespace dsmil
