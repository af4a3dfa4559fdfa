#pragma once

#include "dccnet/matching.hpp"
#include "dccnet/model.hpp"

namespace dccnet {

// End-to-end forward: context encoding of both maps, shared-consensus
// correlation branches, attention fusion in both directions.
struct PipelineResult {
  ContextFeature ga, gb;  // normalized context features
  Corr4D cl, cs;          // post-consensus local and context volumes
  FusionResult fusion;
};

struct PipelineCache {
  FeatureMap fa, fb;
  ContextDescriptor sa, sb;
  ContextFuseCache fuse_a, fuse_b;
  Tensor ha, hb;  // relu projections before normalization
  CorrPipelineCache local, context;
  FusionCache fusion;
  PipelineResult result;
};

PipelineResult dccnet_forward(const ModelParams& params, const FeatureMap& fa, const FeatureMap& fb,
                              PipelineCache* cache = nullptr);

struct ParamGrads {
  Tensor d_context_w;
  std::vector<Conv4DGrads> d_consensus;
  std::vector<Conv4DGrads> d_embed;
  Tensor d_attn_weights, d_attn_bias;

  // Aligned with ModelParams::named_tensors().
  std::vector<const Tensor*> ordered() const;
};

struct LossForward {
  LossBreakdown loss;
};

LossForward dccnet_loss(const ModelParams& params, const FeatureMap& fa, const FeatureMap& fb,
                        const LossConfig& cfg, PipelineCache* cache = nullptr);

ParamGrads dccnet_loss_backward(const ModelParams& params, const LossConfig& cfg,
                                const PipelineCache& cache);

}  // namespace dccnet
