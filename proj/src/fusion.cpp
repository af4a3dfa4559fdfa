#include "dccnet/fusion.hpp"

#include <utility>

namespace dccnet {

const char* direction_name(Direction d) { return d == Direction::a_to_b ? "ab" : "ba"; }

void EmbedParams::validate() const {
  require(!layers.empty(), Errc::invalid_argument, "embedding needs at least one layer");
  for (const auto& l : layers) l.validate();
  require(layers.front().in_channels() == 1 && layers.back().out_channels() == 1,
          Errc::shape_mismatch, "embedding channel plan must start and end at 1");
  for (std::size_t i = 1; i < layers.size(); ++i) {
    require(layers[i].in_channels() == layers[i - 1].out_channels(), Errc::shape_mismatch,
            "embedding channel plan breaks at layer " + std::to_string(i));
  }
}

void AttentionParams::validate() const {
  require(weights.rank() == 2 && weights.shape()[0] == 2, Errc::shape_mismatch,
          "attention weights must be [2, 2N], got " + weights.shape_str());
  require(weights.shape()[1] % 2 == 0, Errc::shape_mismatch,
          "attention weights must stack two N-channel volumes");
  require(bias.rank() == 1 && bias.shape()[0] == 2, Errc::shape_mismatch,
          "attention bias must have length 2");
}

namespace {
Tensor lift(const Tensor& c) {
  std::vector<std::size_t> s = c.shape();
  s.insert(s.begin(), 1);
  return Tensor::from_data(std::move(s), c.storage());
}

Tensor squeeze(const Tensor& x) {
  std::vector<std::size_t> s(x.shape().begin() + 1, x.shape().end());
  return Tensor::from_data(std::move(s), x.storage());
}
}  // namespace

Corr4D corr_embed(const Corr4D& c, const EmbedParams& params, ConvChainCache* cache) {
  params.validate();
  c.validate();
  Tensor out = squeeze(run_conv_chain(lift(c.data), params.layers, cache));
  return Corr4D{std::move(out), Provenance::embedded};
}

CorrEmbedGrads corr_embed_vjp(const EmbedParams& params, const ConvChainCache& cache,
                              const Tensor& upstream) {
  ConvChainGrads g = conv_chain_vjp(params.layers, cache, lift(upstream));
  return CorrEmbedGrads{squeeze(g.d_input), std::move(g.d_layers)};
}

Tensor reshape_dir(const Tensor& c, Direction dir) {
  require(c.rank() == 4, Errc::shape_mismatch, "reshape_dir expects a rank-4 volume");
  std::size_t ha = c.shape()[0], wa = c.shape()[1], hb = c.shape()[2], wb = c.shape()[3];
  std::size_t na = ha * wa, nb = hb * wb;
  if (dir == Direction::b_to_a) {
    // same linear layout, channels linearize (i, j)
    return Tensor::from_data({na, hb, wb}, c.storage());
  }
  Tensor out({nb, ha, wa});
  const double* in = c.data();
  double* o = out.data();
  for (std::size_t p = 0; p < na; ++p) {
    const double* row = in + p * nb;
    for (std::size_t q = 0; q < nb; ++q) o[q * na + p] = row[q];
  }
  return out;
}

Tensor reshape_dir(const Corr4D& c, Direction dir) { return reshape_dir(c.data, dir); }

Tensor unreshape_dir(const Tensor& d, const std::vector<std::size_t>& corr_shape, Direction dir) {
  require(d.rank() == 3 && corr_shape.size() == 4, Errc::shape_mismatch,
          "unreshape_dir expects [N, h, w] and 4D target extents");
  std::size_t ha = corr_shape[0], wa = corr_shape[1], hb = corr_shape[2], wb = corr_shape[3];
  std::size_t na = ha * wa, nb = hb * wb;
  require(d.size() == na * nb, Errc::shape_mismatch, "unreshape_dir: element count mismatch");
  if (dir == Direction::b_to_a) {
    require(d.shape()[0] == na && d.shape()[1] == hb && d.shape()[2] == wb, Errc::shape_mismatch,
            "unreshape_dir: shape " + d.shape_str() + " does not match b->a layout");
    return Tensor::from_data({ha, wa, hb, wb}, d.storage());
  }
  require(d.shape()[0] == nb && d.shape()[1] == ha && d.shape()[2] == wa, Errc::shape_mismatch,
          "unreshape_dir: shape " + d.shape_str() + " does not match a->b layout");
  Tensor out({ha, wa, hb, wb});
  const double* in = d.data();
  double* o = out.data();
  for (std::size_t q = 0; q < nb; ++q) {
    const double* row = in + q * na;
    for (std::size_t p = 0; p < na; ++p) o[p * nb + q] = row[p];
  }
  return out;
}

AttentionMask attention_mask(const Tensor& dl, const Tensor& ds, const AttentionParams& params,
                             Direction dir, AttentionCache* cache) {
  params.validate();
  require_same_shape(dl, ds, "attention_mask");
  require(dl.rank() == 3, Errc::shape_mismatch, "attention_mask expects [N, h, w] inputs");
  std::size_t n = dl.shape()[0];
  require(2 * n == params.stacked_channels(), Errc::shape_mismatch,
          "attention_mask: stacked channels " + std::to_string(2 * n) +
              " vs attention weights " + std::to_string(params.stacked_channels()));
  std::size_t hw = dl.shape()[1] * dl.shape()[2];

  Tensor logits({2, dl.shape()[1], dl.shape()[2]});
  const double* w = params.weights.data();
  for (std::size_t e = 0; e < 2; ++e) {
    double* row = logits.data() + e * hw;
    for (std::size_t p = 0; p < hw; ++p) row[p] = params.bias[e];
    const double* we = w + e * 2 * n;
    for (std::size_t t = 0; t < n; ++t) {
      double wl = we[t];
      double ws = we[n + t];
      const double* dlrow = dl.data() + t * hw;
      const double* dsrow = ds.data() + t * hw;
      for (std::size_t p = 0; p < hw; ++p) row[p] += wl * dlrow[p] + ws * dsrow[p];
    }
  }
  Tensor probs = softmax_axis(logits, 0);
  Tensor m = Tensor::from_data({dl.shape()[1], dl.shape()[2]},
                               std::vector<double>(probs.data(), probs.data() + hw));
  if (cache) cache->probs = std::move(probs);
  return AttentionMask{std::move(m), dir};
}

AttentionGrads attention_mask_vjp(const Tensor& dl, const Tensor& ds, const AttentionParams& params,
                                  const AttentionCache& cache, const Tensor& d_mask) {
  std::size_t n = dl.shape()[0];
  std::size_t hw = dl.shape()[1] * dl.shape()[2];
  require(d_mask.size() == hw, Errc::shape_mismatch, "attention_mask_vjp: d_mask size");

  Tensor d_probs({2, dl.shape()[1], dl.shape()[2]});
  for (std::size_t p = 0; p < hw; ++p) d_probs[p] = d_mask[p];
  Tensor d_logits = softmax_axis_vjp(cache.probs, d_probs, 0);

  AttentionGrads g{Tensor(dl.shape()), Tensor(ds.shape()), Tensor(params.weights.shape()),
                   Tensor(params.bias.shape())};
  const double* w = params.weights.data();
  for (std::size_t e = 0; e < 2; ++e) {
    const double* drow = d_logits.data() + e * hw;
    double acc = 0.0;
    for (std::size_t p = 0; p < hw; ++p) acc += drow[p];
    g.d_bias[e] = acc;
    const double* we = w + e * 2 * n;
    double* dwe = g.d_weights.data() + e * 2 * n;
    for (std::size_t t = 0; t < n; ++t) {
      const double* dlrow = dl.data() + t * hw;
      const double* dsrow = ds.data() + t * hw;
      double* gdl = g.d_dl.data() + t * hw;
      double* gds = g.d_ds.data() + t * hw;
      double accl = 0.0, accs = 0.0;
      double wl = we[t], ws = we[n + t];
      for (std::size_t p = 0; p < hw; ++p) {
        double gd = drow[p];
        accl += gd * dlrow[p];
        accs += gd * dsrow[p];
        gdl[p] += gd * wl;
        gds[p] += gd * ws;
      }
      dwe[t] = accl;
      dwe[n + t] = accs;
    }
  }
  return g;
}

Tensor fuse(const Tensor& dl, const Tensor& ds, const AttentionMask& mask) {
  require_same_shape(dl, ds, "fuse");
  require(dl.rank() == 3, Errc::shape_mismatch, "fuse expects [N, h, w] inputs");
  std::size_t hw = dl.shape()[1] * dl.shape()[2];
  require(mask.data.size() == hw, Errc::shape_mismatch, "fuse: mask grid does not match inputs");
  Tensor out(dl.shape());
  std::size_t n = dl.shape()[0];
  for (std::size_t t = 0; t < n; ++t) {
    const double* a = dl.data() + t * hw;
    const double* b = ds.data() + t * hw;
    double* o = out.data() + t * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      double m = mask.data[p];
      o[p] = a[p] * m + b[p] * (1.0 - m);
    }
  }
  return out;
}

FuseGrads fuse_vjp(const Tensor& dl, const Tensor& ds, const AttentionMask& mask,
                   const Tensor& upstream) {
  require_same_shape(dl, upstream, "fuse_vjp");
  std::size_t n = dl.shape()[0];
  std::size_t hw = dl.shape()[1] * dl.shape()[2];
  FuseGrads g{Tensor(dl.shape()), Tensor(ds.shape()), Tensor(mask.data.shape())};
  for (std::size_t t = 0; t < n; ++t) {
    const double* a = dl.data() + t * hw;
    const double* b = ds.data() + t * hw;
    const double* up = upstream.data() + t * hw;
    double* da = g.d_dl.data() + t * hw;
    double* db = g.d_ds.data() + t * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      double m = mask.data[p];
      da[p] = up[p] * m;
      db[p] = up[p] * (1.0 - m);
      g.d_mask[p] += up[p] * (a[p] - b[p]);
    }
  }
  return g;
}

namespace {
struct DirectionRun {
  FusedCorr fused;
  AttentionMask mask;
};

DirectionRun run_direction(const Corr4D& cl, const Corr4D& cs, const Corr4D& ce_l,
                           const Corr4D& ce_s, const AttentionParams& pa, FuseInput fuse_input,
                           Direction dir, DirectionCache* cache) {
  DirectionCache local;
  DirectionCache& cc = cache ? *cache : local;
  cc.dl_att = reshape_dir(ce_l, dir);
  cc.ds_att = reshape_dir(ce_s, dir);
  cc.mask = attention_mask(cc.dl_att, cc.ds_att, pa, dir, &cc.att);
  if (fuse_input == FuseInput::consensus) {
    cc.blend_l = reshape_dir(cl, dir);
    cc.blend_s = reshape_dir(cs, dir);
  } else {
    cc.blend_l = cc.dl_att;
    cc.blend_s = cc.ds_att;
  }
  Tensor fused = fuse(cc.blend_l, cc.blend_s, cc.mask);
  Corr4D out{unreshape_dir(fused, cl.data.shape(), dir), Provenance::fused};
  return DirectionRun{FusedCorr{std::move(out), dir}, cc.mask};
}
}  // namespace

FusionResult fuse_bidirectional(const Corr4D& cl, const Corr4D& cs, const EmbedParams& pe,
                                const AttentionParams& pa, FuseInput fuse_input,
                                FusionCache* cache) {
  require_same_shape(cl.data, cs.data, "fuse_bidirectional");
  FusionCache local;
  FusionCache& cc = cache ? *cache : local;
  cc.ce_l = corr_embed(cl, pe, &cc.embed_l);
  cc.ce_s = corr_embed(cs, pe, &cc.embed_s);
  DirectionRun ab = run_direction(cl, cs, cc.ce_l, cc.ce_s, pa, fuse_input, Direction::a_to_b,
                                  &cc.ab);
  DirectionRun ba = run_direction(cl, cs, cc.ce_l, cc.ce_s, pa, fuse_input, Direction::b_to_a,
                                  &cc.ba);
  return FusionResult{std::move(ab.fused), std::move(ba.fused), std::move(ab.mask),
                      std::move(ba.mask)};
}

namespace {
void accumulate(std::vector<Conv4DGrads>& into, const std::vector<Conv4DGrads>& from) {
  if (into.empty()) {
    into = from;
    return;
  }
  for (std::size_t i = 0; i < into.size(); ++i) {
    for (std::size_t j = 0; j < into[i].d_weights.size(); ++j) {
      into[i].d_weights[j] += from[i].d_weights[j];
    }
    for (std::size_t j = 0; j < into[i].d_bias.size(); ++j) {
      into[i].d_bias[j] += from[i].d_bias[j];
    }
  }
}

void add_into(Tensor& into, const Tensor& from) {
  if (into.size() == 0) {
    into = from;
    return;
  }
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}
}  // namespace

FusionGrads fuse_bidirectional_vjp(const Corr4D& cl, const Corr4D& cs, const EmbedParams& pe,
                                   const AttentionParams& pa, FuseInput fuse_input,
                                   const FusionCache& cache, const Tensor& d_ab,
                                   const Tensor& d_ba) {
  FusionGrads g;
  g.d_cl = Tensor(cl.data.shape());
  g.d_cs = Tensor(cs.data.shape());
  g.d_attn_weights = Tensor(pa.weights.shape());
  g.d_attn_bias = Tensor(pa.bias.shape());
  Tensor d_ce_l, d_ce_s;

  auto back_direction = [&](const DirectionCache& cc, const Tensor& d_fused4, Direction dir) {
    Tensor d_fused = reshape_dir(d_fused4, dir);
    FuseGrads fg = fuse_vjp(cc.blend_l, cc.blend_s, cc.mask, d_fused);
    AttentionGrads ag = attention_mask_vjp(cc.dl_att, cc.ds_att, pa, cc.att, fg.d_mask);
    for (std::size_t i = 0; i < g.d_attn_weights.size(); ++i) {
      g.d_attn_weights[i] += ag.d_weights[i];
    }
    for (std::size_t i = 0; i < g.d_attn_bias.size(); ++i) g.d_attn_bias[i] += ag.d_bias[i];

    Tensor d_dl_att = std::move(ag.d_dl);
    Tensor d_ds_att = std::move(ag.d_ds);
    if (fuse_input == FuseInput::consensus) {
      add_into(g.d_cl, unreshape_dir(fg.d_dl, cl.data.shape(), dir));
      add_into(g.d_cs, unreshape_dir(fg.d_ds, cs.data.shape(), dir));
    } else {
      for (std::size_t i = 0; i < d_dl_att.size(); ++i) d_dl_att[i] += fg.d_dl[i];
      for (std::size_t i = 0; i < d_ds_att.size(); ++i) d_ds_att[i] += fg.d_ds[i];
    }
    add_into(d_ce_l, unreshape_dir(d_dl_att, cl.data.shape(), dir));
    add_into(d_ce_s, unreshape_dir(d_ds_att, cs.data.shape(), dir));
  };

  back_direction(cache.ab, d_ab, Direction::a_to_b);
  back_direction(cache.ba, d_ba, Direction::b_to_a);

  CorrEmbedGrads el = corr_embed_vjp(pe, cache.embed_l, d_ce_l);
  CorrEmbedGrads es = corr_embed_vjp(pe, cache.embed_s, d_ce_s);
  add_into(g.d_cl, el.d_c);
  add_into(g.d_cs, es.d_c);
  accumulate(g.d_embed, el.d_layers);
  accumulate(g.d_embed, es.d_layers);
  return g;
}

}  // namespace dccnet
