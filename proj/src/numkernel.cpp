#include "zsl/numkernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <cblas.h>

#include "zsl/errors.hpp"

namespace zsl {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw InputError(std::string(op) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
  }
}

blasint blas_int(std::size_t n) { return static_cast<blasint>(n); }

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw InputError("Matrix: data length " + std::to_string(data_.size()) +
                     " does not equal " + std::to_string(rows_) + "x" +
                     std::to_string(cols_));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw InputError("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

// All three products go through one dgemm call. OpenBLAS is deterministic
// for a fixed thread count, which the CLI pins to 1.
Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw InputError("matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix out(a.rows(), b.cols());
  if (out.empty() || a.cols() == 0) return out;
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, blas_int(a.rows()),
              blas_int(b.cols()), blas_int(a.cols()), 1.0, a.data().data(),
              blas_int(a.cols()), b.data().data(), blas_int(b.cols()), 0.0,
              out.data().data(), blas_int(out.cols()));
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw InputError("matmul_nt: " + shape_str(a) + " * T(" + shape_str(b) + ")");
  }
  Matrix out(a.rows(), b.rows());
  if (out.empty() || a.cols() == 0) return out;
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, blas_int(a.rows()),
              blas_int(b.rows()), blas_int(a.cols()), 1.0, a.data().data(),
              blas_int(a.cols()), b.data().data(), blas_int(b.cols()), 0.0,
              out.data().data(), blas_int(out.cols()));
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw InputError("matmul_tn: T(" + shape_str(a) + ") * " + shape_str(b));
  }
  Matrix out(a.cols(), b.cols());
  if (out.empty() || a.rows() == 0) return out;
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, blas_int(a.cols()),
              blas_int(b.cols()), blas_int(a.rows()), 1.0, a.data().data(),
              blas_int(a.cols()), b.data().data(), blas_int(b.cols()), 0.0,
              out.data().data(), blas_int(out.cols()));
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& bias) {
  if (bias.rows() != 1 || bias.cols() != w.rows()) {
    throw InputError("affine: bias " + shape_str(bias) + " for weight " +
                     shape_str(w));
  }
  Matrix out = matmul_nt(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias(0, j);
  }
  return out;
}

Matrix column_sums(const Matrix& m) {
  Matrix out(1, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out(0, j) += r[j];
  }
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> index) {
  Matrix out(index.size(), m.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= m.rows()) {
      throw InputError("gather_rows: row " + std::to_string(index[i]) +
                       " out of range " + std::to_string(m.rows()));
    }
    std::copy_n(m.row(index[i]).begin(), m.cols(), out.row(i).begin());
  }
  return out;
}

Matrix mean_rows(const Matrix& m) {
  if (m.rows() == 0) throw InputError("mean_rows: empty matrix");
  Matrix out = column_sums(m);
  for (double& v : out.data()) v /= static_cast<double>(m.rows());
  return out;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.rows() == 0) return bottom;
  if (bottom.rows() == 0) return top;
  if (top.cols() != bottom.cols()) {
    throw InputError("vstack: " + shape_str(top) + " over " + shape_str(bottom));
  }
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.data().begin(), top.data().end(), out.data().begin());
  std::copy(bottom.data().begin(), bottom.data().end(),
            out.data().begin() + static_cast<std::ptrdiff_t>(top.size()));
  return out;
}

void axpy(Matrix& y, double alpha, const Matrix& x) {
  require_same_shape(y, x, "axpy");
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += alpha * xd[i];
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  axpy(out, 1.0, b);
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  axpy(out, -1.0, b);
  return out;
}

Matrix operator*(double alpha, const Matrix& m) {
  Matrix out = m;
  for (double& v : out.data()) v *= alpha;
  return out;
}

double sum_squares(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.data()) acc += v * v;
  return acc;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

Matrix relu(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Matrix relu_backward(const Matrix& upstream, const Matrix& pre) {
  require_same_shape(upstream, pre, "relu_backward");
  Matrix out = upstream;
  auto od = out.data();
  auto pd = pre.data();
  for (std::size_t i = 0; i < od.size(); ++i)
    if (pd[i] <= 0.0) od[i] = 0.0;
  return out;
}

Matrix softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

LossGrad softmax_cross_entropy(const Matrix& logits,
                               std::span<const std::size_t> targets) {
  const std::size_t n = logits.rows();
  if (n == 0) throw InputError("softmax_cross_entropy: no rows");
  if (targets.size() != n) {
    throw InputError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " rows");
  }
  LossGrad out{0.0, Matrix(n, logits.cols())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = targets[i];
    if (t >= logits.cols()) {
      throw InputError("softmax_cross_entropy: target " + std::to_string(t) +
                       " outside [0, " + std::to_string(logits.cols()) + ")");
    }
    auto in = logits.row(i);
    auto g = out.grad.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      g[j] = std::exp(in[j] - mx);
      total += g[j];
    }
    // log-sum-exp form keeps the loss exact for saturated rows
    out.loss += (std::log(total) - (in[t] - mx)) * inv_n;
    for (double& v : g) v = v / total * inv_n;
    g[t] -= inv_n;
  }
  return out;
}

LossGrad mse_sum(const Matrix& pred, const Matrix& ref) {
  require_same_shape(pred, ref, "mse_sum");
  LossGrad out{0.0, Matrix(pred.rows(), pred.cols())};
  auto pd = pred.data();
  auto rd = ref.data();
  auto gd = out.grad.data();
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const double diff = pd[i] - rd[i];
    out.loss += diff * diff;
    gd[i] = 2.0 * diff;
  }
  return out;
}

void adam_update(Matrix& param, const Matrix& grad, AdamState& state) {
  require_same_shape(param, grad, "adam_update");
  if (!state.first_moment.same_shape(param)) {
    state.first_moment = Matrix(param.rows(), param.cols());
    state.second_moment = Matrix(param.rows(), param.cols());
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  auto p = param.data();
  auto g = grad.data();
  auto m = state.first_moment.data();
  auto v = state.second_moment.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    const double m_hat = m[i] / correct1;
    const double v_hat = v[i] / correct2;
    p[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

Matrix finite_difference_grad(const ScalarFn& loss_fn, const Matrix& at, double h) {
  if (!(h > 0.0)) throw InputError("finite_difference_grad: h must be positive");
  Matrix probe = at;
  Matrix out(at.rows(), at.cols());
  auto pd = probe.data();
  auto od = out.data();
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const double saved = pd[i];
    pd[i] = saved + h;
    const double up = loss_fn(probe);
    pd[i] = saved - h;
    const double down = loss_fn(probe);
    pd[i] = saved;
    od[i] = (up - down) / (2.0 * h);
  }
  return out;
}

double max_relative_error(const Matrix& a, const Matrix& b, double floor) {
  require_same_shape(a, b, "max_relative_error");
  double worst = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double denom = std::max({std::abs(ad[i]), std::abs(bd[i]), floor});
    worst = std::max(worst, std::abs(ad[i] - bd[i]) / denom);
  }
  return worst;
}

}  // namespace zsl
