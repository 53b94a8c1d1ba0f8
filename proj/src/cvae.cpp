#include "zsl/cvae.hpp"

#include <algorithm>
#include <cmath>

#include "zsl/errors.hpp"

namespace zsl {

namespace {

Matrix glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

struct Pass {
  Matrix trunk_pre;
  Matrix trunk;
  Matrix mean;
  Matrix logvar;
  Matrix z;
  Matrix dec_pre;
  Matrix dec_hidden;
  Matrix output;
};

Pass forward(const CvaeModel& m, const Matrix& x, const Matrix& noise) {
  if (x.cols() != m.visual_dim()) {
    throw InputError("cvae: expected " + std::to_string(m.visual_dim()) +
                     " visual columns, got " + std::to_string(x.cols()));
  }
  Pass p;
  p.trunk_pre = affine(x, m.encoder_weight, m.encoder_bias);
  p.trunk = relu(p.trunk_pre);
  p.mean = affine(p.trunk, m.mean_weight, m.mean_bias);
  p.logvar = affine(p.trunk, m.logvar_weight, m.logvar_bias);
  p.z = reparameterize(p.mean, p.logvar, noise);
  p.dec_pre = affine(p.z, m.decoder_weight1, m.decoder_bias1);
  p.dec_hidden = relu(p.dec_pre);
  p.output = affine(p.dec_hidden, m.decoder_weight2, m.decoder_bias2);
  return p;
}

}  // namespace

CvaeModel CvaeModel::zeros(std::size_t d, std::size_t k, std::size_t h) {
  CvaeModel m;
  m.encoder_weight = Matrix(h, d);
  m.encoder_bias = Matrix(1, h);
  m.mean_weight = Matrix(k, h);
  m.mean_bias = Matrix(1, k);
  m.logvar_weight = Matrix(k, h);
  m.logvar_bias = Matrix(1, k);
  m.decoder_weight1 = Matrix(h, k);
  m.decoder_bias1 = Matrix(1, h);
  m.decoder_weight2 = Matrix(d, h);
  m.decoder_bias2 = Matrix(1, d);
  return m;
}

CvaeModel CvaeModel::zeros_like() const {
  return zeros(visual_dim(), latent_dim(), hidden_dim());
}

ParamList CvaeModel::to_params() const {
  ParamList out;
  for_each_param([&](const char* name, const Matrix& p) { out.push_back({name, p}); });
  return out;
}

CvaeModel CvaeModel::from_params(const ParamList& params) {
  const Matrix& enc = find_param(params, "cvae.encoder.weight");
  const Matrix& mean = find_param(params, "cvae.mean.weight", 0, enc.rows());
  CvaeModel m = zeros(enc.cols(), mean.rows(), enc.rows());
  m.for_each_param([&](const char* name, Matrix& p) {
    p = find_param(params, name, p.rows(), p.cols());
  });
  return m;
}

CvaeModel init_cvae_model(std::size_t d, std::size_t k, std::size_t h, std::uint64_t seed) {
  if (d == 0 || k == 0 || h == 0) throw InputError("init_cvae_model: zero dimension");
  Rng rng = Rng(seed).fork("cvae-init");
  CvaeModel m = CvaeModel::zeros(d, k, h);
  m.encoder_weight = glorot(h, d, rng);
  m.mean_weight = glorot(k, h, rng);
  m.decoder_weight1 = glorot(h, k, rng);
  m.decoder_weight2 = glorot(d, h, rng);
  return m;
}

CvaeEncoding cvae_encode(const CvaeModel& m, const Matrix& x) {
  if (x.cols() != m.visual_dim()) {
    throw InputError("cvae_encode: expected " + std::to_string(m.visual_dim()) +
                     " columns, got " + std::to_string(x.cols()));
  }
  const Matrix trunk = relu(affine(x, m.encoder_weight, m.encoder_bias));
  return {affine(trunk, m.mean_weight, m.mean_bias),
          affine(trunk, m.logvar_weight, m.logvar_bias)};
}

Matrix cvae_decode(const CvaeModel& m, const Matrix& z) {
  return affine(relu(affine(z, m.decoder_weight1, m.decoder_bias1)), m.decoder_weight2,
                m.decoder_bias2);
}

Matrix reparameterize(const Matrix& mean, const Matrix& logvar, const Matrix& noise) {
  if (!mean.same_shape(logvar) || !mean.same_shape(noise)) {
    throw InputError("reparameterize: shape mismatch");
  }
  Matrix z = mean;
  auto zd = z.data();
  auto lv = logvar.data();
  auto nd = noise.data();
  for (std::size_t i = 0; i < zd.size(); ++i) zd[i] += std::exp(0.5 * lv[i]) * nd[i];
  return z;
}

double kl_to_unit_gaussian(const Matrix& mean, const Matrix& logvar,
                           const Matrix& prior_mean) {
  if (!mean.same_shape(logvar) || !mean.same_shape(prior_mean)) {
    throw InputError("kl_to_unit_gaussian: shape mismatch");
  }
  double kl = 0.0;
  auto mu = mean.data();
  auto lv = logvar.data();
  auto a = prior_mean.data();
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double diff = mu[i] - a[i];
    kl += 0.5 * (std::exp(lv[i]) + diff * diff - 1.0 - lv[i]);
  }
  return kl;
}

CvaeLoss cvae_loss(const CvaeModel& m, const Matrix& x, const Matrix& prototypes,
                   const Matrix& noise) {
  if (prototypes.rows() != x.rows() || prototypes.cols() != m.latent_dim() ||
      !noise.same_shape(prototypes)) {
    throw InputError("cvae_loss: rows of x, prototypes and noise must align with width " +
                     std::to_string(m.latent_dim()));
  }
  const Pass p = forward(m, x, noise);
  CvaeLoss out;
  out.grad = m.zeros_like();
  CvaeModel& g = out.grad;

  const LossGrad rec = mse_sum(p.output, x);
  out.reconstruction = rec.loss;
  out.kl = kl_to_unit_gaussian(p.mean, p.logvar, prototypes);
  out.loss = out.reconstruction + out.kl;

  // decoder
  axpy(g.decoder_weight2, 1.0, matmul_tn(rec.grad, p.dec_hidden));
  axpy(g.decoder_bias2, 1.0, column_sums(rec.grad));
  const Matrix d_dec_pre = relu_backward(matmul(rec.grad, m.decoder_weight2), p.dec_pre);
  axpy(g.decoder_weight1, 1.0, matmul_tn(d_dec_pre, p.z));
  axpy(g.decoder_bias1, 1.0, column_sums(d_dec_pre));
  const Matrix d_z = matmul(d_dec_pre, m.decoder_weight1);

  // reparameterization and KL
  Matrix d_mean(p.mean.rows(), p.mean.cols());
  Matrix d_logvar(p.mean.rows(), p.mean.cols());
  for (std::size_t i = 0; i < d_mean.size(); ++i) {
    const double sigma = std::exp(0.5 * p.logvar.data()[i]);
    const double dz = d_z.data()[i];
    d_mean.data()[i] = dz + (p.mean.data()[i] - prototypes.data()[i]);
    d_logvar.data()[i] =
        dz * 0.5 * sigma * noise.data()[i] + 0.5 * (sigma * sigma - 1.0);
  }

  // encoder heads and trunk
  axpy(g.mean_weight, 1.0, matmul_tn(d_mean, p.trunk));
  axpy(g.mean_bias, 1.0, column_sums(d_mean));
  axpy(g.logvar_weight, 1.0, matmul_tn(d_logvar, p.trunk));
  axpy(g.logvar_bias, 1.0, column_sums(d_logvar));
  Matrix d_trunk = matmul(d_mean, m.mean_weight);
  axpy(d_trunk, 1.0, matmul(d_logvar, m.logvar_weight));
  const Matrix d_trunk_pre = relu_backward(d_trunk, p.trunk_pre);
  axpy(g.encoder_weight, 1.0, matmul_tn(d_trunk_pre, x));
  axpy(g.encoder_bias, 1.0, column_sums(d_trunk_pre));
  return out;
}

void CvaeConfig::validate() const {
  if (batch_size < 1) throw InputError("cvae batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw InputError("cvae learning rate must be positive");
  if (hidden < 1) throw InputError("cvae hidden width must be >= 1");
}

CvaeTrainResult train_cvae(CvaeModel m, const Dataset& ds, const CvaeConfig& cfg) {
  cfg.validate();
  if (ds.seen_train.empty()) throw InputError("train_cvae: no seen-train rows");
  if (ds.visual_dim() != m.visual_dim() || ds.proto_dim() != m.latent_dim()) {
    throw InputError("train_cvae: model dimensions do not match the dataset");
  }
  Rng order_rng = Rng(cfg.seed).fork("cvae-batches");
  Rng noise_rng = Rng(cfg.seed).fork("noise");
  std::vector<AdamState> states;
  m.for_each_param([&](const char*, const Matrix& p) {
    states.emplace_back(p.rows(), p.cols(), AdamConfig{cfg.learning_rate});
  });

  CvaeTrainResult result;
  IndexList order = ds.seen_train;
  const std::size_t steps = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng.engine());
    CvaeEpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t begin = s * cfg.batch_size;
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const Index> rows(order.data() + begin, end - begin);
      IndexList classes;
      for (Index r : rows) classes.push_back(ds.labels[r]);
      const Matrix x = gather_rows(ds.visual, rows);
      const Matrix a = gather_rows(ds.prototypes, classes);
      const Matrix noise = noise_rng.normal_matrix(rows.size(), m.latent_dim());
      const CvaeLoss l = cvae_loss(m, x, a, noise);
      if (!std::isfinite(l.loss)) throw NumericError("train_cvae: loss became non-finite");
      std::size_t i = 0;
      for (const auto& [name, member] : CvaeModel::kParams) {
        adam_update(m.*member, l.grad.*member, states[i++]);
      }
      const double w = 1.0 / static_cast<double>(steps);
      rec.mean_loss += w * l.loss;
      rec.mean_reconstruction += w * l.reconstruction;
      rec.mean_kl += w * l.kl;
    }
    result.history.push_back(rec);
  }
  result.model = std::move(m);
  return result;
}

Matrix synthesize_semantic(const CvaeModel& m, const Matrix& x) {
  return cvae_encode(m, x).mean;
}

Matrix synthesize_semantic_sampled(const CvaeModel& m, const Matrix& x, Rng& rng) {
  const CvaeEncoding enc = cvae_encode(m, x);
  return reparameterize(enc.mean, enc.logvar,
                        rng.normal_matrix(enc.mean.rows(), enc.mean.cols()));
}

}  // namespace zsl
