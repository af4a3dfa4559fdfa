#pragma once

#include "dccnet/tensor.hpp"

namespace dccnet {

// Learnable 4D convolution: weights [c_out, c_in, k1, k2, k3, k4], bias [c_out].
// All kernel extents must be odd so "same" zero padding is well defined.
struct Conv4DKernel {
  Tensor weights;
  Tensor bias;

  std::size_t out_channels() const { return weights.shape()[0]; }
  std::size_t in_channels() const { return weights.shape()[1]; }
  void validate() const;

  static Conv4DKernel zeros(std::size_t c_out, std::size_t c_in, std::size_t k);
  // Center tap 1 wired channel i -> channel min(i, c_in-1); with square channel
  // plans this chains to the identity on non-negative inputs.
  static Conv4DKernel delta(std::size_t c_out, std::size_t c_in, std::size_t k);
};

// "Same"-size direct 4D convolution over input [c_in, A, B, C, D].
Tensor conv4d(const Tensor& input, const Conv4DKernel& kernel);

struct Conv4DGrads {
  Tensor d_input;
  Tensor d_weights;
  Tensor d_bias;
};

Conv4DGrads conv4d_vjp(const Tensor& input, const Conv4DKernel& kernel, const Tensor& upstream);

}  // namespace dccnet
