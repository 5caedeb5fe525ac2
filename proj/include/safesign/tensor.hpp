#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace safesign {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

// Dense row-major double tensor, rank 1..4. The single numeric carrier of the
// whole pipeline; doubles everywhere so finite-difference checks are meaningful.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.0);
  }
  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  bool empty() const { return data_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  const std::vector<int>& shape() const { return shape_; }
  long size() const { return static_cast<long>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](long i) { return data_[static_cast<size_t>(i)]; }
  double operator[](long i) const { return data_[static_cast<size_t>(i)]; }

  double& operator()(int a) { return data_[static_cast<size_t>(a)]; }
  const double& operator()(int a) const { return data_[static_cast<size_t>(a)]; }
  double& operator()(int a, int b) { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
  const double& operator()(int a, int b) const { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
  double& operator()(int a, int b, int c) {
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  const double& operator()(int a, int b, int c) const {
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  double& operator()(int a, int b, int c, int d) {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  const double& operator()(int a, int b, int c, int d) const {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(0.0); }

  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != size()) throw std::invalid_argument("Tensor::reshaped: size mismatch");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same(o, "-=");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  void clamp01() {
    for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
  }

  double min_value() const { return *std::min_element(data_.begin(), data_.end()); }
  double max_value() const { return *std::max_element(data_.begin(), data_.end()); }

  // Row-major matrix view over the flat buffer.
  MatMap as_matrix(long rows, long cols) {
    if (rows * cols != size()) throw std::invalid_argument("Tensor::as_matrix: size mismatch");
    return MatMap(data_.data(), rows, cols);
  }
  ConstMatMap as_matrix(long rows, long cols) const {
    if (rows * cols != size()) throw std::invalid_argument("Tensor::as_matrix: size mismatch");
    return ConstMatMap(data_.data(), rows, cols);
  }
  // Read-only view independent of the tensor's own constness.
  ConstMatMap cmat(long rows, long cols) const {
    if (rows * cols != size()) throw std::invalid_argument("Tensor::cmat: size mismatch");
    return ConstMatMap(data_.data(), rows, cols);
  }

  static long count(const std::vector<int>& shape) {
    long n = 1;
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

 private:
  void require_same(const Tensor& o, const char* op) const {
    if (!same_shape(o)) throw std::invalid_argument(std::string("Tensor: shape mismatch in ") + op);
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

// Balanced pairwise summation. For 2^k equal addends every partial sum is a
// power-of-two multiple, so the result is exact; used where the contract
// promises exact means of constant inputs.
inline double pairwise_sum(const double* p, long n) {
  if (n == 0) return 0.0;
  if (n == 1) return p[0];
  if (n == 2) return p[0] + p[1];
  long h = n / 2;
  return pairwise_sum(p, h) + pairwise_sum(p + h, n - h);
}

inline double mean_of(const Tensor& t) {
  return pairwise_sum(t.data(), t.size()) / static_cast<double>(t.size());
}

}  // namespace safesign
