#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "zsl/numkernel.hpp"

namespace zsl::test {

// Monte-Carlo E_q[log q(z) - log p(z)] for q = N(mean, diag exp(logvar)) and
// p = N(prior, I), one row each. Normalizing constants cancel and are left out.
inline double kl_monte_carlo(const Matrix& mean, const Matrix& logvar, const Matrix& prior,
                             std::size_t samples, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t k = mean.cols();
  double total = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double log_ratio = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double sd = std::exp(0.5 * logvar(0, j));
      double z = mean(0, j) + sd * normal(gen);
      double u = (z - mean(0, j)) / sd;
      double log_q = -0.5 * u * u - 0.5 * logvar(0, j);
      double log_p = -0.5 * (z - prior(0, j)) * (z - prior(0, j));
      log_ratio += log_q - log_p;
    }
    total += log_ratio;
  }
  return total / static_cast<double>(samples);
}

}  // namespace zsl::test
