#pragma once

// Shallow visual/semantic embedding model:
//   visual encoder   h = relu(x W^T + b_enc)
//   tied decoder     x' = relu(h W + b_dec)
//   semantic encoder s = relu(relu(a S1^T + b1) S2^T + b2)
//   classifier       logits = h C^T + b_c
// with hand-derived gradients for every loss term.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "zsl/checkpoint.hpp"
#include "zsl/datamodel.hpp"
#include "zsl/numkernel.hpp"

namespace zsl {

struct EmbedDims {
  std::size_t visual_dim = 0;
  std::size_t proto_dim = 0;
  std::size_t latent_dim = 1000;
  std::size_t semantic_hidden = 750;
  std::size_t classes = 0;
};

struct EmbedModel {
  Matrix visual_weight;  // l x d, shared by encoder and (transposed) decoder
  Matrix visual_bias;    // 1 x l
  Matrix decoder_bias;   // 1 x d
  Matrix semantic_weight1;  // hidden x k
  Matrix semantic_bias1;
  Matrix semantic_weight2;  // l x hidden
  Matrix semantic_bias2;
  Matrix classifier_weight;  // C x l
  Matrix classifier_bias;

  // Same shapes, all zero. Gradients use this layout too.
  static EmbedModel zeros(const EmbedDims& dims);
  EmbedModel zeros_like() const;

  EmbedDims dims() const;
  std::size_t num_classes() const { return classifier_weight.rows(); }

  // Visits (name, parameter) in a fixed order.
  template <typename F>
  void for_each_param(F&& f) {
    for (const auto& [name, member] : kParams) f(name, this->*member);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    for (const auto& [name, member] : kParams) f(name, this->*member);
  }

  // this += alpha * other, parameter by parameter.
  void add_scaled(double alpha, const EmbedModel& other) {
    for (const auto& [name, member] : kParams) axpy(this->*member, alpha, other.*member);
  }

  ParamList to_params() const;
  static EmbedModel from_params(const ParamList& params);

  friend bool operator==(const EmbedModel&, const EmbedModel&) = default;

  static const std::array<std::pair<const char*, Matrix EmbedModel::*>, 9> kParams;
};

inline const std::array<std::pair<const char*, Matrix EmbedModel::*>, 9>
    EmbedModel::kParams = {{
        {"visual.weight", &EmbedModel::visual_weight},
        {"visual.bias", &EmbedModel::visual_bias},
        {"decoder.bias", &EmbedModel::decoder_bias},
        {"semantic.weight1", &EmbedModel::semantic_weight1},
        {"semantic.bias1", &EmbedModel::semantic_bias1},
        {"semantic.weight2", &EmbedModel::semantic_weight2},
        {"semantic.bias2", &EmbedModel::semantic_bias2},
        {"classifier.weight", &EmbedModel::classifier_weight},
        {"classifier.bias", &EmbedModel::classifier_bias},
    }};

// Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases. Draw order is
// visual, semantic, classifier so models that differ only in classifier width
// share every other parameter for a given seed.
EmbedModel init_embed_model(const EmbedDims& dims, std::uint64_t seed);

Matrix encode_visual(const EmbedModel& m, const Matrix& x);
Matrix decode_visual(const EmbedModel& m, const Matrix& h);
Matrix encode_semantic(const EmbedModel& m, const Matrix& a);
Matrix classify_latent(const EmbedModel& m, const Matrix& h);

struct ModelLoss {
  double loss = 0.0;
  EmbedModel grad;
};

// sum ||g(f_v(x_i)) - target_i||^2 over rows; target_i is a same-class partner
// of x_i. With target == x this is the plain autoencoder loss.
ModelLoss loss_class_encoder(const EmbedModel& m, const Matrix& x, const Matrix& target);
ModelLoss loss_autoencoder(const EmbedModel& m, const Matrix& x);

// sum ||f_v(x_i) - f_s(a_i)||^2 with a_i the i-th row of `semantics`.
ModelLoss loss_latent_align(const EmbedModel& m, const Matrix& x, const Matrix& semantics);
// Same loss with a_i = semantics.row(index[i]); each distinct semantic row is
// encoded once.
ModelLoss loss_latent_align(const EmbedModel& m, const Matrix& x, const Matrix& semantics,
                            std::span<const Index> index);

// sum ||f_v(mean_i) - f_s(a_i)||^2: class means are taken in visual space and
// then encoded.
ModelLoss loss_structure_align(const EmbedModel& m, const Matrix& class_visual_means,
                               const Matrix& prototypes);

// Softmax cross-entropy of the latent classifier, mean over rows.
ModelLoss loss_classifier(const EmbedModel& m, const Matrix& x,
                          std::span<const Index> slots);

// Sum of squared entries of every parameter.
ModelLoss regularization(const EmbedModel& m);

struct LossWeights {
  double class_encoder = 1.0;   // alpha1
  double latent_align = 1.0;    // alpha2
  double structure_align = 1.0; // alpha3
  double classifier = 1.0;      // alpha4
  double l2 = 1e-4;             // beta

  void validate() const;
};

struct LossTerms {
  double class_encoder = 0.0;
  double latent_align = 0.0;
  double structure_align = 0.0;
  double classifier = 0.0;
  double l2 = 0.0;
};

// One optimization step's inputs. Row i of `input` is reconstructed towards
// row i of `target`, aligned with semantics.row(semantic_index[i]) and
// classified as slots[i]. Structure alignment pairs the rows of sa_means and
// sa_semantics; it is skipped when sa_means is empty.
struct EmbedBatch {
  Matrix input;
  Matrix target;
  Matrix semantics;
  IndexList semantic_index;
  IndexList slots;
  Matrix sa_means;
  Matrix sa_semantics;
};

struct TotalLoss {
  double loss = 0.0;
  LossTerms terms;  // unweighted component values
  EmbedModel grad;
};

// a1 L_CE + a2 L_LE + a3 L_SA + a4 L_CLFR + beta R. Terms with zero weight are
// not evaluated and report 0.
TotalLoss total_loss(const EmbedModel& m, const EmbedBatch& batch, const LossWeights& w);

enum class TrainMode { kInductive, kTransductive };

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  LossWeights weights;
  TrainMode mode = TrainMode::kInductive;
  // Transductive only: epochs trained on the initial pseudo-labels before the
  // classifier starts reassigning them. An untrained classifier sends every
  // unseen row to the same slot and the labels never recover.
  std::size_t prune_warmup = 50;

  void validate() const;
  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
};

struct StepRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  LossTerms terms;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  LossTerms mean_terms;
  std::size_t churn = 0;  // pseudo-labels changed by the end-of-epoch reassignment
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct EmbedTrainResult {
  EmbedModel model;
  TrainHistory history;
};

// Mini-batch Adam on the total loss over the seen-train rows. Each sample is
// paired with a uniformly drawn partner of its class (itself included); class
// means are recomputed at the start of every epoch.
EmbedTrainResult train_inductive(EmbedModel m, const Dataset& ds, const TrainConfig& cfg,
                                 const EpochCallback& on_epoch = {});

// Adam optimizer over every parameter of an EmbedModel.
class EmbedOptimizer {
 public:
  EmbedOptimizer(const EmbedModel& m, AdamConfig cfg);
  void step(EmbedModel& m, const EmbedModel& grad);

 private:
  std::vector<AdamState> states_;
};

// Slot of each seen class in the classifier: position in ds.seen_classes.
std::vector<std::size_t> seen_slot_table(const Dataset& ds);

}  // namespace zsl
