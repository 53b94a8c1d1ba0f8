#pragma once

// Conditional VAE whose posterior is pulled towards N(a_y, I), a_y being the
// prototype of the sample's class. The encoder mean of an unlabeled visual
// sample then serves as a synthesized semantic feature for it.
//
//   trunk   t = relu(x E^T + e)
//   heads   mu = t M^T + m,  logvar = t V^T + v
//   sample  z = mu + exp(logvar / 2) * eps
//   decoder x' = relu(z D1^T + d1) D2^T + d2

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "zsl/checkpoint.hpp"
#include "zsl/datamodel.hpp"
#include "zsl/numkernel.hpp"
#include "zsl/rng.hpp"

namespace zsl {

struct CvaeModel {
  Matrix encoder_weight;  // hidden x d
  Matrix encoder_bias;
  Matrix mean_weight;     // k x hidden
  Matrix mean_bias;
  Matrix logvar_weight;   // k x hidden
  Matrix logvar_bias;
  Matrix decoder_weight1;  // hidden x k
  Matrix decoder_bias1;
  Matrix decoder_weight2;  // d x hidden
  Matrix decoder_bias2;

  static CvaeModel zeros(std::size_t visual_dim, std::size_t proto_dim, std::size_t hidden);
  CvaeModel zeros_like() const;

  std::size_t visual_dim() const { return encoder_weight.cols(); }
  std::size_t latent_dim() const { return mean_weight.rows(); }
  std::size_t hidden_dim() const { return encoder_weight.rows(); }

  template <typename F>
  void for_each_param(F&& f) {
    for (const auto& [name, member] : kParams) f(name, this->*member);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    for (const auto& [name, member] : kParams) f(name, this->*member);
  }
  void add_scaled(double alpha, const CvaeModel& other) {
    for (const auto& [name, member] : kParams) axpy(this->*member, alpha, other.*member);
  }

  ParamList to_params() const;
  static CvaeModel from_params(const ParamList& params);

  friend bool operator==(const CvaeModel&, const CvaeModel&) = default;

  static const std::array<std::pair<const char*, Matrix CvaeModel::*>, 10> kParams;
};

inline const std::array<std::pair<const char*, Matrix CvaeModel::*>, 10>
    CvaeModel::kParams = {{
        {"cvae.encoder.weight", &CvaeModel::encoder_weight},
        {"cvae.encoder.bias", &CvaeModel::encoder_bias},
        {"cvae.mean.weight", &CvaeModel::mean_weight},
        {"cvae.mean.bias", &CvaeModel::mean_bias},
        {"cvae.logvar.weight", &CvaeModel::logvar_weight},
        {"cvae.logvar.bias", &CvaeModel::logvar_bias},
        {"cvae.decoder.weight1", &CvaeModel::decoder_weight1},
        {"cvae.decoder.bias1", &CvaeModel::decoder_bias1},
        {"cvae.decoder.weight2", &CvaeModel::decoder_weight2},
        {"cvae.decoder.bias2", &CvaeModel::decoder_bias2},
    }};

// Glorot-uniform weights and zero biases, except the log-variance head which
// starts at zero so the initial posterior has unit variance.
CvaeModel init_cvae_model(std::size_t visual_dim, std::size_t proto_dim,
                          std::size_t hidden, std::uint64_t seed);

struct CvaeEncoding {
  Matrix mean;
  Matrix logvar;
};

CvaeEncoding cvae_encode(const CvaeModel& m, const Matrix& x);
Matrix cvae_decode(const CvaeModel& m, const Matrix& z);
// mean + exp(logvar / 2) * noise
Matrix reparameterize(const Matrix& mean, const Matrix& logvar, const Matrix& noise);

// KL(N(mean, diag exp(logvar)) || N(prior_mean, I)) summed over rows.
double kl_to_unit_gaussian(const Matrix& mean, const Matrix& logvar,
                           const Matrix& prior_mean);

struct CvaeLoss {
  double loss = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  CvaeModel grad;
};

// Squared reconstruction error of x from the reparameterized code plus the KL
// term towards N(prototype, I). `noise` holds the standard-normal draws.
CvaeLoss cvae_loss(const CvaeModel& m, const Matrix& x, const Matrix& prototypes,
                   const Matrix& noise);

struct CvaeConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t hidden = 512;
  std::uint64_t seed = 1;

  void validate() const;
};

struct CvaeEpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double mean_reconstruction = 0.0;
  double mean_kl = 0.0;
};

struct CvaeTrainResult {
  CvaeModel model;
  std::vector<CvaeEpochRecord> history;
};

// Adam over shuffled seen-train batches; noise comes from the "noise" stream
// of cfg.seed.
CvaeTrainResult train_cvae(CvaeModel m, const Dataset& ds, const CvaeConfig& cfg);

// Encoder mean per row.
Matrix synthesize_semantic(const CvaeModel& m, const Matrix& x);
// One posterior sample per row instead of the mean.
Matrix synthesize_semantic_sampled(const CvaeModel& m, const Matrix& x, Rng& rng);

}  // namespace zsl
