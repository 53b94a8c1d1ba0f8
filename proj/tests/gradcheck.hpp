#pragma once

// Compares a model's analytic gradient against central differences taken
// parameter by parameter.

#include <algorithm>
#include <cstdint>
#include <string>

#include "test_util.hpp"
#include "zsl/cvae.hpp"
#include "zsl/embednet.hpp"
#include "zsl/numkernel.hpp"

namespace zsl::test {

struct GradReport {
  double max_error = 0.0;
  std::string worst_param;
};

// loss(model) must be a pure function of the parameters.
template <typename Model, typename LossFn>
GradReport check_model_grad(const Model& m, const Model& analytic, LossFn&& loss) {
  GradReport rep;
  for (const auto& [name, member] : Model::kParams) {
    ScalarFn f = [&, member = member](const Matrix& p) {
      Model probe = m;
      probe.*member = p;
      return loss(probe);
    };
    double err = max_relative_error(analytic.*member, finite_difference_grad(f, m.*member));
    if (err > rep.max_error) rep.max_error = err, rep.worst_param = name;
  }
  return rep;
}

// Every parameter, biases included, drawn from U(-0.5, 0.5) so that no ReLU
// unit starts dead.
inline EmbedModel random_embed_model(const EmbedDims& dims, std::uint64_t seed) {
  EmbedModel m = EmbedModel::zeros(dims);
  std::uint64_t s = seed * 1000;
  m.for_each_param([&](const char*, Matrix& p) {
    p = random_matrix(p.rows(), p.cols(), ++s, -0.5, 0.5);
  });
  return m;
}

inline CvaeModel random_cvae_model(std::size_t d, std::size_t k, std::size_t hidden,
                                   std::uint64_t seed) {
  CvaeModel m = CvaeModel::zeros(d, k, hidden);
  std::uint64_t s = seed * 1000 + 7;
  m.for_each_param([&](const char*, Matrix& p) {
    p = random_matrix(p.rows(), p.cols(), ++s, -0.5, 0.5);
  });
  return m;
}

}  // namespace zsl::test
