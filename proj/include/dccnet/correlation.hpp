#pragma once

#include <vector>

#include "dccnet/conv4d.hpp"
#include "dccnet/fmap.hpp"
#include "dccnet/spatial_context.hpp"
#include "dccnet/tensor.hpp"

namespace dccnet {

enum class Provenance { raw, filtered, consensus, embedded, fused };

// 4D correlation volume over (i, j, m, n) source x target grid positions.
struct Corr4D {
  Tensor data;  // [h_a, w_a, h_b, w_b]
  Provenance tag = Provenance::raw;

  std::size_t h_a() const { return data.shape()[0]; }
  std::size_t w_a() const { return data.shape()[1]; }
  std::size_t h_b() const { return data.shape()[2]; }
  std::size_t w_b() const { return data.shape()[3]; }
  void validate() const;
};

// Swap the (i,j) and (m,n) axis pairs; involution.
Tensor exchange(const Tensor& c);
Corr4D exchange(const Corr4D& c);

Corr4D raw_correlation(const Tensor& fa, const Tensor& fb);
Corr4D raw_correlation(const FeatureMap& fa, const FeatureMap& fb);
Corr4D raw_correlation(const ContextFeature& fa, const ContextFeature& fb);

struct RawCorrelationGrads {
  Tensor d_fa;
  Tensor d_fb;
};
RawCorrelationGrads raw_correlation_vjp(const Tensor& fa, const Tensor& fb, const Tensor& upstream);

// out = r * (r / max_src) * (r / max_tgt) on r = relu(c); a max below eps
// zeroes the corresponding ratio.
struct MnnCache {
  Tensor r;                         // relu(c)
  Tensor max_src;                   // [h_b, w_b], max over (i,j)
  Tensor max_tgt;                   // [h_a, w_a], max over (m,n)
  std::vector<std::size_t> arg_src; // linear (i,j) index per target cell
  std::vector<std::size_t> arg_tgt; // linear (m,n) index per source cell
};
Corr4D mutual_nn_filter(const Corr4D& c, MnnCache* cache = nullptr, double eps = 1e-12);
Tensor mutual_nn_filter_vjp(const Corr4D& c, const MnnCache& cache, const Tensor& upstream,
                            double eps = 1e-12);

// Neighborhood consensus: a (conv4d -> relu)^L chain with channel plan
// 1 -> ... -> 1, optionally symmetrized as N(c) + exch(N(exch(c))).
struct ConsensusParams {
  std::vector<Conv4DKernel> layers;
  bool symmetrize = true;
  void validate() const;
};

struct ConvChainCache {
  std::vector<Tensor> inputs;   // per-layer input, [c, A, B, C, D]
  std::vector<Tensor> preacts;  // per-layer conv output before relu
};
struct ConsensusCache {
  ConvChainCache direct;
  ConvChainCache exchanged;
};

Corr4D neighborhood_consensus(const Corr4D& c, const ConsensusParams& params,
                              ConsensusCache* cache = nullptr);

struct ConsensusGrads {
  Tensor d_c;
  std::vector<Conv4DGrads> d_layers;  // accumulated over both branches
};
ConsensusGrads neighborhood_consensus_vjp(const ConsensusParams& params, const ConsensusCache& cache,
                                          const Tensor& upstream);

// mutual_nn_filter -> neighborhood_consensus -> mutual_nn_filter on the raw
// correlation of a feature pair.
struct CorrPipelineCache {
  Tensor fa, fb;
  Corr4D raw;
  MnnCache mnn1;
  Corr4D filtered;
  ConsensusCache consensus;
  Corr4D refined;
  MnnCache mnn2;
};

Corr4D corr_pipeline(const Tensor& fa, const Tensor& fb, const ConsensusParams& params,
                     CorrPipelineCache* cache = nullptr);

struct CorrPipelineGrads {
  Tensor d_fa;
  Tensor d_fb;
  std::vector<Conv4DGrads> d_layers;
};
CorrPipelineGrads corr_pipeline_vjp(const ConsensusParams& params, const CorrPipelineCache& cache,
                                    const Tensor& upstream);

// Chain helpers shared with the embedding network.
Tensor run_conv_chain(const Tensor& lifted, const std::vector<Conv4DKernel>& layers,
                      ConvChainCache* cache);
struct ConvChainGrads {
  Tensor d_input;
  std::vector<Conv4DGrads> d_layers;
};
ConvChainGrads conv_chain_vjp(const std::vector<Conv4DKernel>& layers, const ConvChainCache& cache,
                              const Tensor& upstream);

}  // namespace dccnet
