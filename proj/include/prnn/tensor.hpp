// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major 64-bit float tensor, rank 1-3. The single value type that
// flows through cells, losses and the optimizer.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace prnn {

class Rng;

// Dimension mismatch between operands (names both shapes in the message).
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A stated precondition was violated by the caller.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);
  Tensor(std::initializer_list<double> values);  // rank-1

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor identity(int n);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& at(int i) { return data_[static_cast<size_t>(i)]; }
  double at(int i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double& at(int i, int j, int k) {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double at(int i, int j, int k) const {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const { return prnn::shape_str(shape_); }

  // True when every stored value is finite.
  bool all_finite() const;

  // Scalar convenience: a tensor of total size 1.
  bool is_scalar() const { return size() == 1; }
  double scalar() const;

  // Rank-3 [b x t x d] -> rank-2 [b x d] slice at time t (copies).
  Tensor time_slice(int t) const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

int64_t shape_size(const Shape& s);

// C = A * B for [m x k] x [k x n]. Throws ShapeError on mismatch.
Tensor matmul_value(const Tensor& a, const Tensor& b);

// C += alpha * op(A) * op(B); BLAS-backed kernel shared by forward and adjoints.
void gemm_acc(bool trans_a, bool trans_b, double alpha, const Tensor& a, const Tensor& b,
              Tensor& c);

}  // namespace prnn
