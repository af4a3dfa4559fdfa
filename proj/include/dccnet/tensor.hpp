#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "dccnet/common.hpp"

namespace dccnet {

// Dense row-major nd-array, double precision, rank 1..6, last index fastest.
// The layout is fixed across the project so loop oracles index identically.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data);

  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const;
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::string shape_str() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Bounds-checked multi-index access; convenience for tests and cold paths.
  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  void fill(double v);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::size_t offset(std::initializer_list<std::size_t> idx) const;
};

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& who);

// ---- elementwise / axis ops with vector-Jacobian products ----

Tensor relu(const Tensor& x);
// Subgradient at exactly 0 is 0.
Tensor relu_vjp(const Tensor& x, const Tensor& upstream);

// Max-subtracted softmax along `axis`; errors on non-finite input.
Tensor softmax_axis(const Tensor& x, std::size_t axis);
Tensor softmax_axis_vjp(const Tensor& y, const Tensor& upstream, std::size_t axis);

// Per-location L2 normalization of a [d, h, w] map; columns with norm < eps
// are set to zero.
Tensor l2_normalize_channels(const Tensor& x, double eps = 1e-12);
Tensor l2_normalize_channels_vjp(const Tensor& x, const Tensor& upstream, double eps = 1e-12);

// y = W^T u with W [rows, cols], u [rows] -> y [cols]; the matrix product used
// by the context encoder.
Tensor matvec_t(const Tensor& w, const Tensor& u);
struct MatvecGrads {
  Tensor d_w;
  Tensor d_u;
};
MatvecGrads matvec_t_vjp(const Tensor& w, const Tensor& u, const Tensor& upstream);

// Name-keyed backward dispatch for the unary ops: "relu",
// "l2_normalize_channels", "softmax_axis:<axis>". Ops without a registered
// backward raise Errc::unsupported. conv4d and the matrix product have typed
// vjp entry points of their own.
Tensor vjp(const std::string& op, const Tensor& input, const Tensor& upstream);

}  // namespace dccnet
