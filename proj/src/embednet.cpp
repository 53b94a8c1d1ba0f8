#include "zsl/embednet.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>

#include "zsl/errors.hpp"
#include "zsl/rng.hpp"

namespace zsl {

namespace {

void require_cols(const Matrix& x, std::size_t cols, const char* what) {
  if (x.cols() != cols) {
    throw InputError(std::string(what) + ": expected " + std::to_string(cols) +
                     " columns, got " + std::to_string(x.cols()));
  }
}

void add_to(Matrix& acc, const Matrix& delta) { axpy(acc, 1.0, delta); }

struct VisualPass {
  Matrix pre;
  Matrix latent;
};

VisualPass visual_forward(const EmbedModel& m, const Matrix& x) {
  require_cols(x, m.visual_weight.cols(), "encode_visual");
  VisualPass p;
  p.pre = affine(x, m.visual_weight, m.visual_bias);
  p.latent = relu(p.pre);
  return p;
}

void visual_backward(const EmbedModel&, const Matrix& x, const VisualPass& p,
                     const Matrix& d_latent, EmbedModel& g) {
  const Matrix d_pre = relu_backward(d_latent, p.pre);
  add_to(g.visual_weight, matmul_tn(d_pre, x));
  add_to(g.visual_bias, column_sums(d_pre));
}

struct DecoderPass {
  Matrix pre;
  Matrix output;
};

DecoderPass decoder_forward(const EmbedModel& m, const Matrix& h) {
  require_cols(h, m.visual_weight.rows(), "decode_visual");
  DecoderPass p;
  p.pre = matmul(h, m.visual_weight);
  for (std::size_t i = 0; i < p.pre.rows(); ++i) {
    auto r = p.pre.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += m.decoder_bias(0, j);
  }
  p.output = relu(p.pre);
  return p;
}

// Returns the gradient with respect to the decoder input.
Matrix decoder_backward(const EmbedModel& m, const Matrix& h, const DecoderPass& p,
                        const Matrix& d_out, EmbedModel& g) {
  const Matrix d_pre = relu_backward(d_out, p.pre);
  add_to(g.visual_weight, matmul_tn(h, d_pre));
  add_to(g.decoder_bias, column_sums(d_pre));
  return matmul_nt(d_pre, m.visual_weight);
}

struct SemanticPass {
  Matrix pre1;
  Matrix hidden;
  Matrix pre2;
  Matrix latent;
};

SemanticPass semantic_forward(const EmbedModel& m, const Matrix& a) {
  require_cols(a, m.semantic_weight1.cols(), "encode_semantic");
  SemanticPass p;
  p.pre1 = affine(a, m.semantic_weight1, m.semantic_bias1);
  p.hidden = relu(p.pre1);
  p.pre2 = affine(p.hidden, m.semantic_weight2, m.semantic_bias2);
  p.latent = relu(p.pre2);
  return p;
}

void semantic_backward(const EmbedModel& m, const Matrix& a, const SemanticPass& p,
                       const Matrix& d_latent, EmbedModel& g) {
  const Matrix d_pre2 = relu_backward(d_latent, p.pre2);
  add_to(g.semantic_weight2, matmul_tn(d_pre2, p.hidden));
  add_to(g.semantic_bias2, column_sums(d_pre2));
  const Matrix d_pre1 = relu_backward(matmul(d_pre2, m.semantic_weight2), p.pre1);
  add_to(g.semantic_weight1, matmul_tn(d_pre1, a));
  add_to(g.semantic_bias1, column_sums(d_pre1));
}

Matrix glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

void check_finite(double loss, const char* where) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(where) + ": loss became non-finite");
  }
}

void accumulate_terms(LossTerms& acc, const LossTerms& t, double scale) {
  acc.class_encoder += scale * t.class_encoder;
  acc.latent_align += scale * t.latent_align;
  acc.structure_align += scale * t.structure_align;
  acc.classifier += scale * t.classifier;
  acc.l2 += scale * t.l2;
}

}  // namespace

EmbedModel EmbedModel::zeros(const EmbedDims& d) {
  EmbedModel m;
  m.visual_weight = Matrix(d.latent_dim, d.visual_dim);
  m.visual_bias = Matrix(1, d.latent_dim);
  m.decoder_bias = Matrix(1, d.visual_dim);
  m.semantic_weight1 = Matrix(d.semantic_hidden, d.proto_dim);
  m.semantic_bias1 = Matrix(1, d.semantic_hidden);
  m.semantic_weight2 = Matrix(d.latent_dim, d.semantic_hidden);
  m.semantic_bias2 = Matrix(1, d.latent_dim);
  m.classifier_weight = Matrix(d.classes, d.latent_dim);
  m.classifier_bias = Matrix(1, d.classes);
  return m;
}

EmbedModel EmbedModel::zeros_like() const { return zeros(dims()); }

EmbedDims EmbedModel::dims() const {
  return {visual_weight.cols(), semantic_weight1.cols(), visual_weight.rows(),
          semantic_weight1.rows(), classifier_weight.rows()};
}

ParamList EmbedModel::to_params() const {
  ParamList out;
  for_each_param([&](const char* name, const Matrix& p) { out.push_back({name, p}); });
  return out;
}

EmbedModel EmbedModel::from_params(const ParamList& params) {
  const Matrix& w = find_param(params, "visual.weight");
  const Matrix& s1 = find_param(params, "semantic.weight1");
  const Matrix& c = find_param(params, "classifier.weight", 0, w.rows());
  EmbedDims d{w.cols(), s1.cols(), w.rows(), s1.rows(), c.rows()};
  EmbedModel m = zeros(d);
  m.for_each_param([&](const char* name, Matrix& p) {
    p = find_param(params, name, p.rows(), p.cols());
  });
  return m;
}

EmbedModel init_embed_model(const EmbedDims& d, std::uint64_t seed) {
  if (d.visual_dim == 0 || d.proto_dim == 0 || d.latent_dim == 0 ||
      d.semantic_hidden == 0 || d.classes == 0) {
    throw InputError("init_embed_model: every dimension must be >= 1");
  }
  Rng rng = Rng(seed).fork("init");
  EmbedModel m = EmbedModel::zeros(d);
  m.visual_weight = glorot(d.latent_dim, d.visual_dim, rng);
  m.semantic_weight1 = glorot(d.semantic_hidden, d.proto_dim, rng);
  m.semantic_weight2 = glorot(d.latent_dim, d.semantic_hidden, rng);
  m.classifier_weight = glorot(d.classes, d.latent_dim, rng);
  return m;
}

Matrix encode_visual(const EmbedModel& m, const Matrix& x) {
  return visual_forward(m, x).latent;
}

Matrix decode_visual(const EmbedModel& m, const Matrix& h) {
  return decoder_forward(m, h).output;
}

Matrix encode_semantic(const EmbedModel& m, const Matrix& a) {
  return semantic_forward(m, a).latent;
}

Matrix classify_latent(const EmbedModel& m, const Matrix& h) {
  require_cols(h, m.classifier_weight.cols(), "classify_latent");
  return affine(h, m.classifier_weight, m.classifier_bias);
}

namespace {

// Each *_into adds weight * d(loss)/d(params) to g and returns the unweighted
// loss. Scaling the upstream gradient once is cheaper than scaling every
// parameter gradient afterwards.

double class_encoder_into(const EmbedModel& m, const Matrix& x, const Matrix& target,
                          double weight, EmbedModel& g) {
  if (x.rows() == 0) throw InputError("loss_class_encoder: empty batch");
  if (!x.same_shape(target)) throw InputError("loss_class_encoder: pair shape mismatch");
  const VisualPass enc = visual_forward(m, x);
  const DecoderPass dec = decoder_forward(m, enc.latent);
  const LossGrad mse = mse_sum(dec.output, target);
  const Matrix d_latent = decoder_backward(m, enc.latent, dec, weight * mse.grad, g);
  visual_backward(m, x, enc, d_latent, g);
  return mse.loss;
}

double latent_align_into(const EmbedModel& m, const Matrix& x, const Matrix& semantics,
                         double weight, EmbedModel& g) {
  if (x.rows() != semantics.rows()) {
    throw InputError("loss_latent_align: " + std::to_string(x.rows()) +
                     " visual rows vs " + std::to_string(semantics.rows()) +
                     " semantic rows");
  }
  if (x.rows() == 0) return 0.0;
  const VisualPass enc = visual_forward(m, x);
  const SemanticPass sem = semantic_forward(m, semantics);
  const LossGrad mse = mse_sum(enc.latent, sem.latent);
  visual_backward(m, x, enc, weight * mse.grad, g);
  semantic_backward(m, semantics, sem, -weight * mse.grad, g);
  return mse.loss;
}

double latent_align_indexed_into(const EmbedModel& m, const Matrix& x,
                                 const Matrix& semantics, std::span<const Index> index,
                                 double weight, EmbedModel& g) {
  if (index.size() != x.rows()) {
    throw InputError("loss_latent_align: index length does not match rows");
  }
  if (x.rows() == 0) return 0.0;

  // Encode each referenced semantic row once.
  std::map<Index, std::size_t> local;
  IndexList used;
  for (Index i : index) {
    if (i >= semantics.rows()) throw InputError("loss_latent_align: index out of range");
    if (local.emplace(i, used.size()).second) used.push_back(i);
  }
  const Matrix sem_in = gather_rows(semantics, used);
  const VisualPass enc = visual_forward(m, x);
  const SemanticPass sem = semantic_forward(m, sem_in);

  double loss = 0.0;
  Matrix d_latent(x.rows(), enc.latent.cols());
  Matrix d_sem(sem_in.rows(), enc.latent.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const std::size_t u = local[index[r]];
    auto h = enc.latent.row(r);
    auto s = sem.latent.row(u);
    auto dh = d_latent.row(r);
    auto ds = d_sem.row(u);
    for (std::size_t j = 0; j < h.size(); ++j) {
      const double diff = h[j] - s[j];
      loss += diff * diff;
      dh[j] = 2.0 * weight * diff;
      ds[j] -= 2.0 * weight * diff;
    }
  }
  visual_backward(m, x, enc, d_latent, g);
  semantic_backward(m, sem_in, sem, d_sem, g);
  return loss;
}

double classifier_into(const EmbedModel& m, const Matrix& x, std::span<const Index> slots,
                       double weight, EmbedModel& g) {
  const VisualPass enc = visual_forward(m, x);
  const Matrix logits = affine(enc.latent, m.classifier_weight, m.classifier_bias);
  const LossGrad ce = softmax_cross_entropy(logits, slots);
  const Matrix d_logits = weight * ce.grad;
  add_to(g.classifier_weight, matmul_tn(d_logits, enc.latent));
  add_to(g.classifier_bias, column_sums(d_logits));
  visual_backward(m, x, enc, matmul(d_logits, m.classifier_weight), g);
  return ce.loss;
}

double regularization_into(const EmbedModel& m, double weight, EmbedModel& g) {
  double loss = 0.0;
  for (const auto& [name, member] : EmbedModel::kParams) {
    const Matrix& p = m.*member;
    loss += sum_squares(p);
    axpy(g.*member, 2.0 * weight, p);
  }
  return loss;
}

}  // namespace

ModelLoss loss_class_encoder(const EmbedModel& m, const Matrix& x, const Matrix& target) {
  ModelLoss out{0.0, m.zeros_like()};
  out.loss = class_encoder_into(m, x, target, 1.0, out.grad);
  return out;
}

ModelLoss loss_autoencoder(const EmbedModel& m, const Matrix& x) {
  return loss_class_encoder(m, x, x);
}

ModelLoss loss_latent_align(const EmbedModel& m, const Matrix& x,
                            const Matrix& semantics) {
  ModelLoss out{0.0, m.zeros_like()};
  out.loss = latent_align_into(m, x, semantics, 1.0, out.grad);
  return out;
}

ModelLoss loss_latent_align(const EmbedModel& m, const Matrix& x, const Matrix& semantics,
                            std::span<const Index> index) {
  ModelLoss out{0.0, m.zeros_like()};
  out.loss = latent_align_indexed_into(m, x, semantics, index, 1.0, out.grad);
  return out;
}

ModelLoss loss_structure_align(const EmbedModel& m, const Matrix& class_visual_means,
                               const Matrix& prototypes) {
  return loss_latent_align(m, class_visual_means, prototypes);
}

ModelLoss loss_classifier(const EmbedModel& m, const Matrix& x,
                          std::span<const Index> slots) {
  ModelLoss out{0.0, m.zeros_like()};
  out.loss = classifier_into(m, x, slots, 1.0, out.grad);
  return out;
}

ModelLoss regularization(const EmbedModel& m) {
  ModelLoss out{0.0, m.zeros_like()};
  out.loss = regularization_into(m, 1.0, out.grad);
  return out;
}

void LossWeights::validate() const {
  for (double w : {class_encoder, latent_align, structure_align, classifier, l2}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw InputError("loss weights must be finite and non-negative");
    }
  }
}

// Fused evaluation of the weighted sum: the batch input is encoded once for
// the reconstruction, latent-alignment and classifier terms, and the semantic
// branch runs once over the referenced semantic rows plus the structure rows.
// The result equals the weighted sum of the individual loss functions up to
// floating-point summation order.
TotalLoss total_loss(const EmbedModel& m, const EmbedBatch& b, const LossWeights& w) {
  w.validate();
  TotalLoss out{0.0, {}, m.zeros_like()};
  LossTerms& t = out.terms;
  EmbedModel& g = out.grad;
  const bool use_ce = w.class_encoder > 0.0;
  const bool use_le = w.latent_align > 0.0;
  const bool use_sa = w.structure_align > 0.0 && b.sa_means.rows() > 0;
  const bool use_clf = w.classifier > 0.0;

  if (use_le && b.semantic_index.size() != b.input.rows()) {
    throw InputError("loss_latent_align: index length does not match rows");
  }
  if (use_sa && b.sa_means.rows() != b.sa_semantics.rows()) {
    throw InputError("loss_structure_align: means and semantics differ in rows");
  }

  // Semantic rows: distinct LE references first, then the structure rows.
  std::map<Index, std::size_t> local;
  IndexList used;
  if (use_le) {
    for (Index i : b.semantic_index) {
      if (i >= b.semantics.rows()) throw InputError("loss_latent_align: index out of range");
      if (local.emplace(i, used.size()).second) used.push_back(i);
    }
  }
  Matrix sem_in;
  if (use_le) sem_in = gather_rows(b.semantics, used);
  if (use_sa) sem_in = vstack(sem_in, b.sa_semantics);
  std::optional<SemanticPass> sem;
  Matrix d_sem;
  if (!sem_in.empty()) {
    sem = semantic_forward(m, sem_in);
    d_sem = Matrix(sem_in.rows(), m.semantic_weight2.rows());
  }

  if (use_ce || use_le || use_clf) {
    if (b.input.rows() == 0) throw InputError("total_loss: empty batch");
    const VisualPass enc = visual_forward(m, b.input);
    Matrix d_latent(enc.latent.rows(), enc.latent.cols());
    if (use_ce) {
      if (!b.input.same_shape(b.target)) {
        throw InputError("loss_class_encoder: pair shape mismatch");
      }
      const DecoderPass dec = decoder_forward(m, enc.latent);
      const LossGrad mse = mse_sum(dec.output, b.target);
      t.class_encoder = mse.loss;
      add_to(d_latent, decoder_backward(m, enc.latent, dec, w.class_encoder * mse.grad, g));
    }
    if (use_le) {
      for (std::size_t r = 0; r < b.input.rows(); ++r) {
        const std::size_t u = local[b.semantic_index[r]];
        auto h = enc.latent.row(r);
        auto sl = sem->latent.row(u);
        auto dh = d_latent.row(r);
        auto ds = d_sem.row(u);
        for (std::size_t j = 0; j < h.size(); ++j) {
          const double diff = h[j] - sl[j];
          t.latent_align += diff * diff;
          dh[j] += 2.0 * w.latent_align * diff;
          ds[j] -= 2.0 * w.latent_align * diff;
        }
      }
    }
    if (use_clf) {
      const Matrix logits = affine(enc.latent, m.classifier_weight, m.classifier_bias);
      const LossGrad ce = softmax_cross_entropy(logits, b.slots);
      t.classifier = ce.loss;
      const Matrix d_logits = w.classifier * ce.grad;
      add_to(g.classifier_weight, matmul_tn(d_logits, enc.latent));
      add_to(g.classifier_bias, column_sums(d_logits));
      add_to(d_latent, matmul(d_logits, m.classifier_weight));
    }
    visual_backward(m, b.input, enc, d_latent, g);
  }

  if (use_sa) {
    const VisualPass enc = visual_forward(m, b.sa_means);
    Matrix d_latent(enc.latent.rows(), enc.latent.cols());
    const std::size_t offset = used.size();
    for (std::size_t r = 0; r < b.sa_means.rows(); ++r) {
      auto h = enc.latent.row(r);
      auto sl = sem->latent.row(offset + r);
      auto dh = d_latent.row(r);
      auto ds = d_sem.row(offset + r);
      for (std::size_t j = 0; j < h.size(); ++j) {
        const double diff = h[j] - sl[j];
        t.structure_align += diff * diff;
        dh[j] = 2.0 * w.structure_align * diff;
        ds[j] -= 2.0 * w.structure_align * diff;
      }
    }
    visual_backward(m, b.sa_means, enc, d_latent, g);
  }
  if (sem) semantic_backward(m, sem_in, *sem, d_sem, g);

  if (w.l2 > 0.0) t.l2 = regularization_into(m, w.l2, g);
  out.loss = w.class_encoder * t.class_encoder + w.latent_align * t.latent_align +
             w.structure_align * t.structure_align + w.classifier * t.classifier +
             w.l2 * t.l2;
  return out;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw InputError("batch size must be >= 2");
  if (!(learning_rate > 0.0)) throw InputError("learning rate must be positive");
  if (!(epsilon > 0.0)) throw InputError("Adam epsilon must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw InputError("Adam betas must be in [0, 1)");
  }
  weights.validate();
}

EmbedOptimizer::EmbedOptimizer(const EmbedModel& m, AdamConfig cfg) {
  m.for_each_param([&](const char*, const Matrix& p) {
    states_.emplace_back(p.rows(), p.cols(), cfg);
  });
}

void EmbedOptimizer::step(EmbedModel& m, const EmbedModel& grad) {
  std::size_t i = 0;
  for (const auto& [name, member] : EmbedModel::kParams) {
    adam_update(m.*member, grad.*member, states_[i++]);
  }
}

std::vector<std::size_t> seen_slot_table(const Dataset& ds) {
  std::vector<std::size_t> slot(ds.num_classes(), ds.num_classes());
  for (std::size_t i = 0; i < ds.seen_classes.size(); ++i) slot[ds.seen_classes[i]] = i;
  return slot;
}

EmbedTrainResult train_inductive(EmbedModel m, const Dataset& ds, const TrainConfig& cfg,
                                 const EpochCallback& on_epoch) {
  cfg.validate();
  if (ds.seen_train.empty()) throw InputError("train_inductive: no seen-train rows");
  if (m.num_classes() != ds.seen_classes.size()) {
    throw InputError("train_inductive: classifier has " + std::to_string(m.num_classes()) +
                     " outputs for " + std::to_string(ds.seen_classes.size()) +
                     " seen classes");
  }
  require_cols(ds.visual, m.visual_weight.cols(), "train_inductive");
  require_cols(ds.prototypes, m.semantic_weight1.cols(), "train_inductive");

  const auto slot = seen_slot_table(ds);
  const Matrix seen_protos = gather_rows(ds.prototypes, ds.seen_classes);
  std::vector<IndexList> members(ds.seen_classes.size());
  for (Index r : ds.seen_train) members[slot[ds.labels[r]]].push_back(r);
  const Matrix train_visual = gather_rows(ds.visual, ds.seen_train);
  IndexList train_labels;
  for (Index r : ds.seen_train) train_labels.push_back(ds.labels[r]);

  Rng rng = Rng(cfg.seed).fork("pairs");
  EmbedOptimizer opt(m, cfg.adam());
  EmbedTrainResult result;
  IndexList order = ds.seen_train;
  const std::size_t steps_per_epoch =
      (order.size() + cfg.batch_size - 1) / cfg.batch_size;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const Matrix means = class_means(train_visual, train_labels, ds.seen_classes);
    std::shuffle(order.begin(), order.end(), rng.engine());
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * cfg.batch_size;
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const Index> rows(order.data() + begin, end - begin);
      EmbedBatch batch;
      IndexList partners;
      for (Index r : rows) {
        const IndexList& mine = members[slot[ds.labels[r]]];
        partners.push_back(mine[rng.index(mine.size())]);
        batch.slots.push_back(slot[ds.labels[r]]);
      }
      batch.input = gather_rows(ds.visual, rows);
      batch.target = gather_rows(ds.visual, partners);
      batch.semantics = seen_protos;
      batch.semantic_index = batch.slots;
      batch.sa_means = means;
      batch.sa_semantics = seen_protos;

      const TotalLoss tl = total_loss(m, batch, cfg.weights);
      check_finite(tl.loss, "train_inductive");
      opt.step(m, tl.grad);
      result.history.steps.push_back({epoch, tl.loss, tl.terms});
      rec.mean_loss += tl.loss / static_cast<double>(steps_per_epoch);
      accumulate_terms(rec.mean_terms, tl.terms, 1.0 / static_cast<double>(steps_per_epoch));
    }
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.model = std::move(m);
  return result;
}

}  // namespace zsl
