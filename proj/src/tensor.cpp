#include "dccnet/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace dccnet {

namespace {
std::size_t checked_product(const std::vector<std::size_t>& shape) {
  require(!shape.empty() && shape.size() <= 6, Errc::invalid_argument,
          "tensor rank must be 1..6, got " + std::to_string(shape.size()));
  std::size_t n = 1;
  for (std::size_t e : shape) {
    require(e >= 1, Errc::invalid_argument, "tensor extents must be >= 1");
    require(e == 0 || n <= SIZE_MAX / e, Errc::extent_overflow, "tensor extent product overflows");
    n *= e;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(checked_product(shape_), fill) {}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data) {
  std::size_t n = checked_product(shape);
  require(n == data.size(), Errc::shape_mismatch,
          "tensor data length " + std::to_string(data.size()) + " does not match shape product " +
              std::to_string(n));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
  require(axis < shape_.size(), Errc::invalid_argument,
          "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank()));
  return shape_[axis];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << "]";
  return os.str();
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
  require(idx.size() == shape_.size(), Errc::invalid_argument,
          "index rank " + std::to_string(idx.size()) + " vs tensor rank " + std::to_string(rank()));
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    require(i < shape_[axis], Errc::invalid_argument,
            "index " + std::to_string(i) + " out of bounds on axis " + std::to_string(axis));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
double Tensor::at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& who) {
  if (a.shape() == b.shape()) return;
  for (std::size_t ax = 0; ax < std::min(a.rank(), b.rank()); ++ax) {
    if (a.shape()[ax] != b.shape()[ax]) {
      fail(Errc::shape_mismatch, who + ": axis " + std::to_string(ax) + " mismatch, " +
                                     std::to_string(a.shape()[ax]) + " vs " +
                                     std::to_string(b.shape()[ax]));
    }
  }
  fail(Errc::shape_mismatch, who + ": rank mismatch, " + a.shape_str() + " vs " + b.shape_str());
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0.0) y[i] = 0.0;
  }
  return y;
}

Tensor relu_vjp(const Tensor& x, const Tensor& upstream) {
  require_same_shape(x, upstream, "relu_vjp");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? upstream[i] : 0.0;
  return dx;
}

namespace {
// Decompose the index space around `axis` into outer * n * inner.
struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Tensor& x, std::size_t axis) {
  require(axis < x.rank(), Errc::invalid_argument,
          "softmax axis " + std::to_string(axis) + " out of range for rank " +
              std::to_string(x.rank()));
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= x.shape()[i];
  v.n = x.shape()[axis];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) v.inner *= x.shape()[i];
  return v;
}
}  // namespace

Tensor softmax_axis(const Tensor& x, std::size_t axis) {
  AxisView v = axis_view(x, axis);
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(std::isfinite(x[i]), Errc::numeric, "softmax_axis: non-finite input");
  }
  Tensor y(x.shape());
  const double* in = x.data();
  double* out = y.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t k = 0; k < v.inner; ++k) {
      std::size_t base = o * v.n * v.inner + k;
      double mx = in[base];
      for (std::size_t j = 1; j < v.n; ++j) mx = std::max(mx, in[base + j * v.inner]);
      double sum = 0.0;
      for (std::size_t j = 0; j < v.n; ++j) {
        double e = std::exp(in[base + j * v.inner] - mx);
        out[base + j * v.inner] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < v.n; ++j) out[base + j * v.inner] /= sum;
    }
  }
  return y;
}

Tensor softmax_axis_vjp(const Tensor& y, const Tensor& upstream, std::size_t axis) {
  require_same_shape(y, upstream, "softmax_axis_vjp");
  AxisView v = axis_view(y, axis);
  Tensor dx(y.shape());
  const double* p = y.data();
  const double* up = upstream.data();
  double* out = dx.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t k = 0; k < v.inner; ++k) {
      std::size_t base = o * v.n * v.inner + k;
      double dot = 0.0;
      for (std::size_t j = 0; j < v.n; ++j) {
        std::size_t idx = base + j * v.inner;
        dot += up[idx] * p[idx];
      }
      for (std::size_t j = 0; j < v.n; ++j) {
        std::size_t idx = base + j * v.inner;
        out[idx] = p[idx] * (up[idx] - dot);
      }
    }
  }
  return dx;
}

Tensor l2_normalize_channels(const Tensor& x, double eps) {
  require(x.rank() == 3, Errc::invalid_argument,
          "l2_normalize_channels expects [d, h, w], got " + x.shape_str());
  std::size_t d = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  Tensor y(x.shape());
  const double* in = x.data();
  double* out = y.data();
  for (std::size_t p = 0; p < hw; ++p) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      double v = in[c * hw + p];
      sq += v * v;
    }
    double norm = std::sqrt(sq);
    if (norm < eps) {
      for (std::size_t c = 0; c < d; ++c) out[c * hw + p] = 0.0;
    } else {
      double inv = 1.0 / norm;
      for (std::size_t c = 0; c < d; ++c) out[c * hw + p] = in[c * hw + p] * inv;
    }
  }
  return y;
}

Tensor l2_normalize_channels_vjp(const Tensor& x, const Tensor& upstream, double eps) {
  require_same_shape(x, upstream, "l2_normalize_channels_vjp");
  require(x.rank() == 3, Errc::invalid_argument, "l2_normalize_channels_vjp expects [d, h, w]");
  std::size_t d = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  Tensor dx(x.shape());
  const double* in = x.data();
  const double* up = upstream.data();
  double* out = dx.data();
  for (std::size_t p = 0; p < hw; ++p) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      double v = in[c * hw + p];
      sq += v * v;
    }
    double norm = std::sqrt(sq);
    if (norm < eps) continue;  // output pinned to zero, no gradient
    double inv = 1.0 / norm;
    // dx = (up - x * <up, x> / norm^2) / norm
    double dot = 0.0;
    for (std::size_t c = 0; c < d; ++c) dot += up[c * hw + p] * in[c * hw + p];
    dot *= inv * inv;
    for (std::size_t c = 0; c < d; ++c) {
      out[c * hw + p] = (up[c * hw + p] - in[c * hw + p] * dot) * inv;
    }
  }
  return dx;
}

Tensor matvec_t(const Tensor& w, const Tensor& u) {
  require(w.rank() == 2 && u.rank() == 1, Errc::invalid_argument, "matvec_t expects W [r,c], u [r]");
  require(w.shape()[0] == u.shape()[0], Errc::shape_mismatch,
          "matvec_t: W rows " + std::to_string(w.shape()[0]) + " vs u length " +
              std::to_string(u.shape()[0]));
  std::size_t rows = w.shape()[0], cols = w.shape()[1];
  Tensor y({cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double ur = u[r];
    const double* wr = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) y[c] += wr[c] * ur;
  }
  return y;
}

Tensor vjp(const std::string& op, const Tensor& input, const Tensor& upstream) {
  if (op == "relu") return relu_vjp(input, upstream);
  if (op == "l2_normalize_channels") return l2_normalize_channels_vjp(input, upstream);
  if (op.rfind("softmax_axis:", 0) == 0) {
    std::size_t axis = std::size_t(std::stoul(op.substr(13)));
    return softmax_axis_vjp(softmax_axis(input, axis), upstream, axis);
  }
  fail(Errc::unsupported, "no registered backward for op \"" + op + "\"");
}

MatvecGrads matvec_t_vjp(const Tensor& w, const Tensor& u, const Tensor& upstream) {
  require(upstream.rank() == 1 && upstream.shape()[0] == w.shape()[1], Errc::shape_mismatch,
          "matvec_t_vjp: upstream length vs W cols");
  std::size_t rows = w.shape()[0], cols = w.shape()[1];
  MatvecGrads g{Tensor(w.shape()), Tensor(u.shape())};
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w.data() + r * cols;
    double* dwr = g.d_w.data() + r * cols;
    double acc = 0.0;
    double ur = u[r];
    for (std::size_t c = 0; c < cols; ++c) {
      dwr[c] = ur * upstream[c];
      acc += wr[c] * upstream[c];
    }
    g.d_u[r] = acc;
  }
  return g;
}

}  // namespace dccnet
