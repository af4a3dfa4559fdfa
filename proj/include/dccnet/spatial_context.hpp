#pragma once

#include "dccnet/fmap.hpp"
#include "dccnet/tensor.hpp"

namespace dccnet {

// Dense self-similarity over a k x k neighborhood, row-major over
// (row offset, col offset); plane (k^2-1)/2 is the self dot product.
struct ContextDescriptor {
  std::size_t k = 1;
  Tensor data;  // [k^2, h, w]
};

struct ContextEncoderParams {
  Tensor w;  // [(d + k^2), l]

  std::size_t rows() const { return w.shape()[0]; }
  std::size_t out_dim() const { return w.shape()[1]; }
};

struct ContextFeature {
  Tensor data;  // [l, h, w]
  bool normalized = false;
};

ContextDescriptor self_similarity(const FeatureMap& z, std::size_t k);
// Returns d_z.
Tensor self_similarity_vjp(const FeatureMap& z, std::size_t k, const Tensor& upstream);

// g = relu(W^T [s; z]) per location, descriptor block first. Output is not
// yet L2-normalized; the pipeline normalizes before correlation.
struct ContextFuseCache {
  Tensor pre_act;  // [l, h, w]
};
ContextFeature context_fuse(const FeatureMap& z, const ContextDescriptor& s,
                            const ContextEncoderParams& params, ContextFuseCache* cache = nullptr);

struct ContextFuseGrads {
  Tensor d_z;
  Tensor d_s;
  Tensor d_w;
};
ContextFuseGrads context_fuse_vjp(const FeatureMap& z, const ContextDescriptor& s,
                                  const ContextEncoderParams& params, const ContextFuseCache& cache,
                                  const Tensor& upstream);

}  // namespace dccnet
