// SPDX-License-Identifier: Apache-2.0

#include "prnn/tensor.hpp"

#include <cblas.h>

#include <cmath>
#include <mutex>

#include "prnn/rng.hpp"

// Keep BLAS single-threaded: runs are single-writer by design and results
// must be reproducible regardless of machine load.
extern "C" void openblas_set_num_threads(int) __attribute__((weak));

namespace prnn {

namespace {

void pin_blas_threads() {
  static std::once_flag flag;
  std::call_once(flag, [] {
    if (openblas_set_num_threads) openblas_set_num_threads(1);
  });
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

namespace {

void validate_shape(const Shape& s) {
  if (s.empty() || s.size() > 3) {
    throw ShapeError("tensor rank must be 1-3, got " + shape_str(s));
  }
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(s));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(static_cast<size_t>(shape_size(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (shape_size(shape_) != static_cast<int64_t>(data_.size())) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     prnn::shape_str(shape_));
  }
}

Tensor::Tensor(std::initializer_list<double> values)
    : shape_{static_cast<int>(values.size())}, data_(values) {
  validate_shape(shape_);
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data_[static_cast<size_t>(i)] = value;
  return t;
}

Tensor Tensor::identity(int n) {
  Tensor t(Shape{n, n});
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data_[static_cast<size_t>(i)] = rng.uniform(lo, hi);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::scalar() const {
  if (!is_scalar()) throw ContractError("expected scalar tensor, got " + shape_str());
  return data_[0];
}

Tensor Tensor::time_slice(int t) const {
  if (rank() != 3) throw ShapeError("time_slice requires rank-3 tensor, got " + shape_str());
  const int b = shape_[0], steps = shape_[1], d = shape_[2];
  if (t < 0 || t >= steps) throw ContractError("time index out of range");
  Tensor out(Shape{b, d});
  for (int i = 0; i < b; ++i) {
    const double* src = data() + (static_cast<size_t>(i) * steps + t) * d;
    double* dst = out.data() + static_cast<size_t>(i) * d;
    for (int k = 0; k < d; ++k) dst[k] = src[k];
  }
  return out;
}

void gemm_acc(bool trans_a, bool trans_b, double alpha, const Tensor& a, const Tensor& b,
              Tensor& c) {
  pin_blas_threads();
  const int a_rows = a.dim(0), a_cols = a.rank() == 2 ? a.dim(1) : 1;
  const int b_rows = b.dim(0), b_cols = b.rank() == 2 ? b.dim(1) : 1;
  const int m = trans_a ? a_cols : a_rows;
  const int k = trans_a ? a_rows : a_cols;
  const int kb = trans_b ? b_cols : b_rows;
  const int n = trans_b ? b_rows : b_cols;
  if (k != kb) {
    throw ShapeError("matmul inner extents differ: " + a.shape_str() + " vs " + b.shape_str());
  }
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a.data(), a_cols, b.data(),
              b_cols, 1.0, c.data(), n);
}

Tensor matmul_value(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul requires rank-2 operands: " + a.shape_str() + " vs " + b.shape_str());
  }
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul inner extents differ: " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor c(Shape{a.dim(0), b.dim(1)});
  gemm_acc(false, false, 1.0, a, b, c);
  return c;
}

}  // namespace prnn
