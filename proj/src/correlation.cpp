#include "dccnet/correlation.hpp"

#include <cmath>
#include <utility>

namespace dccnet {

void Corr4D::validate() const {
  require(data.rank() == 4, Errc::shape_mismatch,
          "Corr4D data must be [h_a, w_a, h_b, w_b], got " + data.shape_str());
}

Tensor exchange(const Tensor& c) {
  require(c.rank() == 4, Errc::shape_mismatch, "exchange expects a rank-4 volume");
  std::size_t ha = c.shape()[0], wa = c.shape()[1], hb = c.shape()[2], wb = c.shape()[3];
  Tensor out({hb, wb, ha, wa});
  std::size_t nab = ha * wa, nmn = hb * wb;
  const double* in = c.data();
  double* o = out.data();
  for (std::size_t p = 0; p < nab; ++p) {
    const double* row = in + p * nmn;
    for (std::size_t q = 0; q < nmn; ++q) o[q * nab + p] = row[q];
  }
  return out;
}

Corr4D exchange(const Corr4D& c) { return Corr4D{exchange(c.data), c.tag}; }

Corr4D raw_correlation(const Tensor& fa, const Tensor& fb) {
  require(fa.rank() == 3 && fb.rank() == 3, Errc::shape_mismatch,
          "raw_correlation expects [d, h, w] inputs");
  require(fa.shape()[0] == fb.shape()[0], Errc::shape_mismatch,
          "raw_correlation: channel mismatch, " + std::to_string(fa.shape()[0]) + " vs " +
              std::to_string(fb.shape()[0]));
  std::size_t d = fa.shape()[0];
  std::size_t na = fa.shape()[1] * fa.shape()[2];
  std::size_t nb = fb.shape()[1] * fb.shape()[2];
  Corr4D out{Tensor({fa.shape()[1], fa.shape()[2], fb.shape()[1], fb.shape()[2]}),
             Provenance::raw};
  const double* a = fa.data();
  const double* b = fb.data();
  double* o = out.data.data();
  parallel_for(na, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p) {
      double* row = o + p * nb;
      for (std::size_t c = 0; c < d; ++c) {
        double av = a[c * na + p];
        const double* brow = b + c * nb;
        for (std::size_t q = 0; q < nb; ++q) row[q] += av * brow[q];
      }
    }
  });
  return out;
}

Corr4D raw_correlation(const FeatureMap& fa, const FeatureMap& fb) {
  return raw_correlation(fa.data, fb.data);
}

Corr4D raw_correlation(const ContextFeature& fa, const ContextFeature& fb) {
  return raw_correlation(fa.data, fb.data);
}

RawCorrelationGrads raw_correlation_vjp(const Tensor& fa, const Tensor& fb,
                                        const Tensor& upstream) {
  std::size_t d = fa.shape()[0];
  std::size_t na = fa.shape()[1] * fa.shape()[2];
  std::size_t nb = fb.shape()[1] * fb.shape()[2];
  require(upstream.rank() == 4 && upstream.shape()[0] == fa.shape()[1] &&
              upstream.shape()[1] == fa.shape()[2] && upstream.shape()[2] == fb.shape()[1] &&
              upstream.shape()[3] == fb.shape()[2],
          Errc::shape_mismatch, "raw_correlation_vjp: upstream shape " + upstream.shape_str());
  RawCorrelationGrads g{Tensor(fa.shape()), Tensor(fb.shape())};
  const double* a = fa.data();
  const double* b = fb.data();
  const double* up = upstream.data();
  double* da = g.d_fa.data();
  double* db = g.d_fb.data();
  for (std::size_t p = 0; p < na; ++p) {
    const double* urow = up + p * nb;
    for (std::size_t c = 0; c < d; ++c) {
      const double* brow = b + c * nb;
      double av = a[c * na + p];
      double acc = 0.0;
      double* dbrow = db + c * nb;
      for (std::size_t q = 0; q < nb; ++q) {
        acc += urow[q] * brow[q];
        dbrow[q] += urow[q] * av;
      }
      da[c * na + p] += acc;
    }
  }
  return g;
}

Corr4D mutual_nn_filter(const Corr4D& c, MnnCache* cache, double eps) {
  c.validate();
  std::size_t na = c.h_a() * c.w_a(), nb = c.h_b() * c.w_b();
  MnnCache local;
  MnnCache& cc = cache ? *cache : local;
  cc.r = relu(c.data);
  cc.max_src = Tensor({c.h_b(), c.w_b()});
  cc.max_tgt = Tensor({c.h_a(), c.w_a()});
  cc.arg_src.assign(nb, 0);
  cc.arg_tgt.assign(na, 0);

  const double* r = cc.r.data();
  for (std::size_t q = 0; q < nb; ++q) {
    double best = r[q];
    std::size_t arg = 0;
    for (std::size_t p = 1; p < na; ++p) {
      double v = r[p * nb + q];
      if (v > best) {
        best = v;
        arg = p;
      }
    }
    cc.max_src[q] = best;
    cc.arg_src[q] = arg;
  }
  for (std::size_t p = 0; p < na; ++p) {
    const double* row = r + p * nb;
    double best = row[0];
    std::size_t arg = 0;
    for (std::size_t q = 1; q < nb; ++q) {
      if (row[q] > best) {
        best = row[q];
        arg = q;
      }
    }
    cc.max_tgt[p] = best;
    cc.arg_tgt[p] = arg;
  }

  Corr4D out{Tensor(c.data.shape()), Provenance::filtered};
  double* o = out.data.data();
  for (std::size_t p = 0; p < na; ++p) {
    double bt = cc.max_tgt[p];
    const double* row = r + p * nb;
    double* orow = o + p * nb;
    for (std::size_t q = 0; q < nb; ++q) {
      double bs = cc.max_src[q];
      if (bs < eps || bt < eps) continue;
      double v = row[q];
      orow[q] = v * (v / bs) * (v / bt);
    }
  }
  return out;
}

Tensor mutual_nn_filter_vjp(const Corr4D& c, const MnnCache& cache, const Tensor& upstream,
                            double eps) {
  require_same_shape(c.data, upstream, "mutual_nn_filter_vjp");
  std::size_t na = c.h_a() * c.w_a(), nb = c.h_b() * c.w_b();
  const double* r = cache.r.data();
  const double* up = upstream.data();

  Tensor dr(c.data.shape());
  std::vector<double> d_max_src(nb, 0.0), d_max_tgt(na, 0.0);
  double* drp = dr.data();
  for (std::size_t p = 0; p < na; ++p) {
    double bt = cache.max_tgt[p];
    const double* row = r + p * nb;
    const double* urow = up + p * nb;
    for (std::size_t q = 0; q < nb; ++q) {
      double bs = cache.max_src[q];
      if (bs < eps || bt < eps) continue;
      double g = urow[q];
      if (g == 0.0) continue;
      double v = row[q];
      double inv = 1.0 / (bs * bt);
      double v2 = v * v;
      drp[p * nb + q] += g * 3.0 * v2 * inv;
      double cube = v2 * v * inv;
      d_max_src[q] -= g * cube / bs;
      d_max_tgt[p] -= g * cube / bt;
    }
  }
  // the slice max routes gradient to its argmax element
  for (std::size_t q = 0; q < nb; ++q) drp[cache.arg_src[q] * nb + q] += d_max_src[q];
  for (std::size_t p = 0; p < na; ++p) drp[p * nb + cache.arg_tgt[p]] += d_max_tgt[p];

  return relu_vjp(c.data, dr);
}

void ConsensusParams::validate() const {
  require(!layers.empty(), Errc::invalid_argument, "consensus needs at least one layer");
  for (const auto& l : layers) l.validate();
  require(layers.front().in_channels() == 1, Errc::shape_mismatch,
          "consensus channel plan must start at 1");
  require(layers.back().out_channels() == 1, Errc::shape_mismatch,
          "consensus channel plan must end at 1");
  for (std::size_t i = 1; i < layers.size(); ++i) {
    require(layers[i].in_channels() == layers[i - 1].out_channels(), Errc::shape_mismatch,
            "consensus channel plan breaks at layer " + std::to_string(i));
  }
}

namespace {
Tensor lift(const Tensor& c) {
  std::vector<std::size_t> s = c.shape();
  s.insert(s.begin(), 1);
  return Tensor::from_data(std::move(s), c.storage());
}

Tensor squeeze(const Tensor& x) {
  require(x.rank() == 5 && x.shape()[0] == 1, Errc::shape_mismatch,
          "squeeze expects a single-channel 5D tensor");
  std::vector<std::size_t> s(x.shape().begin() + 1, x.shape().end());
  return Tensor::from_data(std::move(s), x.storage());
}
}  // namespace

Tensor run_conv_chain(const Tensor& lifted, const std::vector<Conv4DKernel>& layers,
                      ConvChainCache* cache) {
  Tensor x = lifted;
  if (cache) {
    cache->inputs.clear();
    cache->preacts.clear();
  }
  for (const auto& layer : layers) {
    Tensor pre = conv4d(x, layer);
    Tensor post = relu(pre);
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->preacts.push_back(std::move(pre));
    }
    x = std::move(post);
  }
  return x;
}

ConvChainGrads conv_chain_vjp(const std::vector<Conv4DKernel>& layers, const ConvChainCache& cache,
                              const Tensor& upstream) {
  require(cache.inputs.size() == layers.size(), Errc::invalid_argument,
          "conv_chain_vjp: cache does not match layer count");
  ConvChainGrads g;
  g.d_layers.resize(layers.size());
  Tensor up = upstream;
  for (std::size_t i = layers.size(); i-- > 0;) {
    Tensor dpre = relu_vjp(cache.preacts[i], up);
    Conv4DGrads cg = conv4d_vjp(cache.inputs[i], layers[i], dpre);
    g.d_layers[i] = std::move(cg);
    up = std::move(g.d_layers[i].d_input);
  }
  g.d_input = std::move(up);
  return g;
}

Corr4D neighborhood_consensus(const Corr4D& c, const ConsensusParams& params,
                              ConsensusCache* cache) {
  params.validate();
  c.validate();
  ConsensusCache local;
  ConsensusCache& cc = cache ? *cache : local;

  Tensor n1 = squeeze(run_conv_chain(lift(c.data), params.layers, &cc.direct));
  if (!params.symmetrize) return Corr4D{std::move(n1), Provenance::consensus};

  Tensor n2 = exchange(
      squeeze(run_conv_chain(lift(exchange(c.data)), params.layers, &cc.exchanged)));
  Tensor out = std::move(n1);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += n2[i];
  return Corr4D{std::move(out), Provenance::consensus};
}

ConsensusGrads neighborhood_consensus_vjp(const ConsensusParams& params,
                                          const ConsensusCache& cache, const Tensor& upstream) {
  Tensor up5 = lift(upstream);
  ConvChainGrads direct = conv_chain_vjp(params.layers, cache.direct, up5);
  ConsensusGrads g;
  g.d_layers = std::move(direct.d_layers);
  g.d_c = squeeze(direct.d_input);

  if (!cache.exchanged.inputs.empty()) {
    ConvChainGrads exch = conv_chain_vjp(params.layers, cache.exchanged, lift(exchange(upstream)));
    Tensor d_c2 = exchange(squeeze(exch.d_input));
    for (std::size_t i = 0; i < g.d_c.size(); ++i) g.d_c[i] += d_c2[i];
    for (std::size_t i = 0; i < g.d_layers.size(); ++i) {
      for (std::size_t j = 0; j < g.d_layers[i].d_weights.size(); ++j) {
        g.d_layers[i].d_weights[j] += exch.d_layers[i].d_weights[j];
      }
      for (std::size_t j = 0; j < g.d_layers[i].d_bias.size(); ++j) {
        g.d_layers[i].d_bias[j] += exch.d_layers[i].d_bias[j];
      }
    }
  }
  return g;
}

Corr4D corr_pipeline(const Tensor& fa, const Tensor& fb, const ConsensusParams& params,
                     CorrPipelineCache* cache) {
  CorrPipelineCache local;
  CorrPipelineCache& cc = cache ? *cache : local;
  cc.fa = fa;
  cc.fb = fb;
  cc.raw = raw_correlation(fa, fb);
  cc.filtered = mutual_nn_filter(cc.raw, &cc.mnn1);
  cc.refined = neighborhood_consensus(cc.filtered, params, &cc.consensus);
  Corr4D out = mutual_nn_filter(cc.refined, &cc.mnn2);
  out.tag = Provenance::consensus;
  return out;
}

CorrPipelineGrads corr_pipeline_vjp(const ConsensusParams& params, const CorrPipelineCache& cache,
                                    const Tensor& upstream) {
  Tensor d_refined = mutual_nn_filter_vjp(cache.refined, cache.mnn2, upstream);
  ConsensusGrads cons = neighborhood_consensus_vjp(params, cache.consensus, d_refined);
  Tensor d_raw = mutual_nn_filter_vjp(cache.raw, cache.mnn1, cons.d_c);
  RawCorrelationGrads raw = raw_correlation_vjp(cache.fa, cache.fb, d_raw);
  return CorrPipelineGrads{std::move(raw.d_fa), std::move(raw.d_fb), std::move(cons.d_layers)};
}

}  // namespace dccnet
