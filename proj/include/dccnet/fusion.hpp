#pragma once

#include "dccnet/correlation.hpp"

namespace dccnet {

enum class Direction { a_to_b, b_to_a };
enum class FuseInput { consensus, embedded };

const char* direction_name(Direction d);

// Embedding function E: a (conv4d -> relu)^L chain, channel plan 1 -> ... -> 1,
// shared between the local and context volumes and both directions.
struct EmbedParams {
  std::vector<Conv4DKernel> layers;
  void validate() const;
};

// 1x1 spatial convolution over the stacked reshaped volumes: [2 x 2N] weights
// plus a 2-vector bias; the mask is the first softmax component.
struct AttentionParams {
  Tensor weights;  // [2, 2N]
  Tensor bias;     // [2]
  void validate() const;
  std::size_t stacked_channels() const { return weights.shape()[1]; }
};

struct AttentionMask {
  Tensor data;  // [h, w] over the direction's source grid
  Direction dir = Direction::a_to_b;
};

struct FusedCorr {
  Corr4D corr;  // provenance fused
  Direction dir = Direction::a_to_b;
};

Corr4D corr_embed(const Corr4D& c, const EmbedParams& params, ConvChainCache* cache = nullptr);
struct CorrEmbedGrads {
  Tensor d_c;
  std::vector<Conv4DGrads> d_layers;
};
CorrEmbedGrads corr_embed_vjp(const EmbedParams& params, const ConvChainCache& cache,
                              const Tensor& upstream);

// a->b: channel t = m * w_b + n over spatial (i, j); b->a: t = i * w_a + j
// over (m, n). Bijective with the 4D layout.
Tensor reshape_dir(const Corr4D& c, Direction dir);
Tensor reshape_dir(const Tensor& c, Direction dir);
Tensor unreshape_dir(const Tensor& d, const std::vector<std::size_t>& corr_shape, Direction dir);

struct AttentionCache {
  Tensor probs;  // [2, h, w]
};
AttentionMask attention_mask(const Tensor& dl, const Tensor& ds, const AttentionParams& params,
                             Direction dir, AttentionCache* cache = nullptr);
struct AttentionGrads {
  Tensor d_dl, d_ds;
  Tensor d_weights, d_bias;
};
AttentionGrads attention_mask_vjp(const Tensor& dl, const Tensor& ds, const AttentionParams& params,
                                  const AttentionCache& cache, const Tensor& d_mask);

// fused = dl o M + ds o (1 - M), mask broadcast over channels.
Tensor fuse(const Tensor& dl, const Tensor& ds, const AttentionMask& mask);
struct FuseGrads {
  Tensor d_dl, d_ds, d_mask;
};
FuseGrads fuse_vjp(const Tensor& dl, const Tensor& ds, const AttentionMask& mask,
                   const Tensor& upstream);

// Whole fusion stage. The embedded volumes feed the attention net; the blend
// combines either the post-consensus volumes (default) or the embedded ones.
struct DirectionCache {
  Tensor dl_att, ds_att;
  AttentionCache att;
  AttentionMask mask;
  Tensor blend_l, blend_s;
};
struct FusionCache {
  ConvChainCache embed_l, embed_s;
  Corr4D ce_l, ce_s;
  DirectionCache ab, ba;
};
struct FusionResult {
  FusedCorr ab, ba;
  AttentionMask mask_ab, mask_ba;
};

FusionResult fuse_bidirectional(const Corr4D& cl, const Corr4D& cs, const EmbedParams& pe,
                                const AttentionParams& pa, FuseInput fuse_input,
                                FusionCache* cache = nullptr);

struct FusionGrads {
  Tensor d_cl, d_cs;
  std::vector<Conv4DGrads> d_embed;
  Tensor d_attn_weights, d_attn_bias;
};
FusionGrads fuse_bidirectional_vjp(const Corr4D& cl, const Corr4D& cs, const EmbedParams& pe,
                                   const AttentionParams& pa, FuseInput fuse_input,
                                   const FusionCache& cache, const Tensor& d_ab,
                                   const Tensor& d_ba);

}  // namespace dccnet
