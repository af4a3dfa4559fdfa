#include "dccnet/pipeline.hpp"

namespace dccnet {

PipelineResult dccnet_forward(const ModelParams& params, const FeatureMap& fa, const FeatureMap& fb,
                              PipelineCache* cache) {
  params.validate();
  fa.validate();
  fb.validate();
  const ModelConfig& cfg = params.config;
  require(fa.height() == cfg.grid_h && fa.width() == cfg.grid_w && fb.height() == cfg.grid_h &&
              fb.width() == cfg.grid_w,
          Errc::shape_mismatch,
          "grid mismatch: features are " + std::to_string(fa.height()) + "x" +
              std::to_string(fa.width()) + " / " + std::to_string(fb.height()) + "x" +
              std::to_string(fb.width()) + ", model expects " + std::to_string(cfg.grid_h) + "x" +
              std::to_string(cfg.grid_w));
  require(fa.channels() == cfg.channels && fb.channels() == cfg.channels, Errc::shape_mismatch,
          "feature channels " + std::to_string(fa.channels()) + "/" +
              std::to_string(fb.channels()) + " vs model d = " + std::to_string(cfg.channels));

  PipelineCache local;
  PipelineCache& cc = cache ? *cache : local;
  cc.fa = fa;
  cc.fb = fb;

  cc.sa = self_similarity(fa, cfg.context_kernel);
  cc.sb = self_similarity(fb, cfg.context_kernel);
  ContextFeature ga_raw = context_fuse(fa, cc.sa, params.context, &cc.fuse_a);
  ContextFeature gb_raw = context_fuse(fb, cc.sb, params.context, &cc.fuse_b);
  cc.ha = ga_raw.data;
  cc.hb = gb_raw.data;

  PipelineResult out;
  out.ga = ContextFeature{l2_normalize_channels(cc.ha), true};
  out.gb = ContextFeature{l2_normalize_channels(cc.hb), true};

  out.cl = corr_pipeline(fa.data, fb.data, params.consensus, &cc.local);
  out.cs = corr_pipeline(out.ga.data, out.gb.data, params.consensus, &cc.context);
  out.fusion = fuse_bidirectional(out.cl, out.cs, params.embed, params.attention, cfg.fuse_input,
                                  &cc.fusion);
  cc.result = out;
  return out;
}

std::vector<const Tensor*> ParamGrads::ordered() const {
  std::vector<const Tensor*> out;
  out.push_back(&d_context_w);
  for (const auto& g : d_consensus) {
    out.push_back(&g.d_weights);
    out.push_back(&g.d_bias);
  }
  for (const auto& g : d_embed) {
    out.push_back(&g.d_weights);
    out.push_back(&g.d_bias);
  }
  out.push_back(&d_attn_weights);
  out.push_back(&d_attn_bias);
  return out;
}

LossForward dccnet_loss(const ModelParams& params, const FeatureMap& fa, const FeatureMap& fb,
                        const LossConfig& cfg, PipelineCache* cache) {
  PipelineCache local;
  PipelineCache& cc = cache ? *cache : local;
  PipelineResult r = dccnet_forward(params, fa, fb, &cc);
  return LossForward{multi_aux_loss(r.fusion.ab, r.fusion.ba, r.cl, r.cs, cfg)};
}

ParamGrads dccnet_loss_backward(const ModelParams& params, const LossConfig& cfg,
                                const PipelineCache& cache) {
  const PipelineResult& r = cache.result;

  // loss -> fused volumes and direct auxiliary paths
  WeakLossGrads fuse_up = weak_loss_vjp(r.fusion.ab.corr, r.fusion.ba.corr, cfg);
  Tensor d_cl = single_volume_loss_vjp(r.cl, cfg.label);
  Tensor d_cs = single_volume_loss_vjp(r.cs, cfg.label);
  for (std::size_t i = 0; i < d_cl.size(); ++i) d_cl[i] *= cfg.lambda;
  for (std::size_t i = 0; i < d_cs.size(); ++i) d_cs[i] *= cfg.gamma;

  // fusion stage
  FusionGrads fg = fuse_bidirectional_vjp(r.cl, r.cs, params.embed, params.attention,
                                          params.config.fuse_input, cache.fusion, fuse_up.d_ab,
                                          fuse_up.d_ba);
  for (std::size_t i = 0; i < d_cl.size(); ++i) d_cl[i] += fg.d_cl[i];
  for (std::size_t i = 0; i < d_cs.size(); ++i) d_cs[i] += fg.d_cs[i];

  // correlation branches (shared consensus kernels accumulate)
  CorrPipelineGrads local = corr_pipeline_vjp(params.consensus, cache.local, d_cl);
  CorrPipelineGrads context = corr_pipeline_vjp(params.consensus, cache.context, d_cs);
  for (std::size_t i = 0; i < local.d_layers.size(); ++i) {
    for (std::size_t j = 0; j < local.d_layers[i].d_weights.size(); ++j) {
      local.d_layers[i].d_weights[j] += context.d_layers[i].d_weights[j];
    }
    for (std::size_t j = 0; j < local.d_layers[i].d_bias.size(); ++j) {
      local.d_layers[i].d_bias[j] += context.d_layers[i].d_bias[j];
    }
  }

  // context branch: normalized g -> relu projection -> W
  Tensor d_ha = l2_normalize_channels_vjp(cache.ha, context.d_fa);
  Tensor d_hb = l2_normalize_channels_vjp(cache.hb, context.d_fb);
  ContextFuseGrads ca = context_fuse_vjp(cache.fa, cache.sa, params.context, cache.fuse_a, d_ha);
  ContextFuseGrads cb = context_fuse_vjp(cache.fb, cache.sb, params.context, cache.fuse_b, d_hb);

  ParamGrads g;
  g.d_context_w = std::move(ca.d_w);
  for (std::size_t i = 0; i < g.d_context_w.size(); ++i) g.d_context_w[i] += cb.d_w[i];
  g.d_consensus = std::move(local.d_layers);
  g.d_embed = std::move(fg.d_embed);
  g.d_attn_weights = std::move(fg.d_attn_weights);
  g.d_attn_bias = std::move(fg.d_attn_bias);
  return g;
}

}  // namespace dccnet
