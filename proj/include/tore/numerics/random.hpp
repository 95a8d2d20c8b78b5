#pragma once

#include <cstdint>
#include <random>

#include "tore/numerics/tensor.hpp"

namespace tore {

using Rng = std::mt19937_64;

/// Independent stream seed for (seed, stream), e.g. per worker or per sample.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

template <typename T>
BasicTensor<T> randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return BasicTensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
BasicTensor<T> randu(Shape shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return BasicTensor<T>::from(std::move(shape), std::move(v));
}

}  // namespace tore
