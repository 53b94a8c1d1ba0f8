#pragma once

// Dense row-major matrices of doubles plus the handful of kernels the models
// need: products, activations, loss primitives with analytic gradients, Adam,
// and a central-difference gradient oracle.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace zsl {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;
  void fill(double value);

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

// x * w^T + bias, bias is 1 x w.rows().
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& bias);
Matrix column_sums(const Matrix& m);
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> index);
Matrix mean_rows(const Matrix& m);
// Rows of `top` followed by rows of `bottom`; an empty operand is skipped.
Matrix vstack(const Matrix& top, const Matrix& bottom);

// y += alpha * x
void axpy(Matrix& y, double alpha, const Matrix& x);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double alpha, const Matrix& m);
double sum_squares(const Matrix& m);
double squared_distance(std::span<const double> a, std::span<const double> b);

Matrix relu(const Matrix& x);
// Gradient of relu: upstream masked by (pre > 0).
Matrix relu_backward(const Matrix& upstream, const Matrix& pre);
Matrix softmax(const Matrix& logits);

struct LossGrad {
  double loss = 0.0;
  Matrix grad;
};

// Mean over rows of -log softmax(logits)[target].
LossGrad softmax_cross_entropy(const Matrix& logits,
                               std::span<const std::size_t> targets);

// Sum over rows of ||pred_i - ref_i||^2.
LossGrad mse_sum(const Matrix& pred, const Matrix& ref);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Matrix first_moment;
  Matrix second_moment;
  std::int64_t step = 0;
  AdamConfig config;

  AdamState() = default;
  AdamState(std::size_t rows, std::size_t cols, AdamConfig cfg)
      : first_moment(rows, cols), second_moment(rows, cols), config(cfg) {}
};

// One bias-corrected Adam step applied in place to `param` and `state`.
void adam_update(Matrix& param, const Matrix& grad, AdamState& state);

using ScalarFn = std::function<double(const Matrix&)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Matrix finite_difference_grad(const ScalarFn& loss_fn, const Matrix& at,
                              double h = 1e-5);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-8);

}  // namespace zsl
