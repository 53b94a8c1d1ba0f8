#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "zsl/numkernel.hpp"

namespace zsl {

// Seeded generator. Components derive their own stream with fork(label) so
// adding draws in one stage never perturbs another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

  Rng fork(std::string_view label) const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char c : label) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return Rng(mix(seed_ ^ h));
  }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  Matrix normal_matrix(std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = normal();
    return m;
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {  // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace zsl
