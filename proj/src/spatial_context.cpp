#include "dccnet/spatial_context.hpp"

namespace dccnet {

namespace {
void check_k(std::size_t k) {
  require(k >= 1 && k % 2 == 1, Errc::invalid_argument,
          "self_similarity: k must be odd and >= 1, got " + std::to_string(k));
}
}  // namespace

ContextDescriptor self_similarity(const FeatureMap& z, std::size_t k) {
  check_k(k);
  z.validate();
  std::size_t d = z.channels(), h = z.height(), w = z.width(), hw = h * w;
  long pad = long(k - 1) / 2;
  ContextDescriptor out{k, Tensor({k * k, h, w})};
  const double* zd = z.data.data();
  double* sd = out.data.data();
  for (std::size_t dr = 0; dr < k; ++dr) {
    for (std::size_t dc = 0; dc < k; ++dc) {
      std::size_t t = dr * k + dc;
      double* plane = sd + t * hw;
      for (std::size_t i = 0; i < h; ++i) {
        long r2 = long(i) + long(dr) - pad;
        if (r2 < 0 || r2 >= long(h)) continue;  // zero padding contributes 0
        for (std::size_t j = 0; j < w; ++j) {
          long c2 = long(j) + long(dc) - pad;
          if (c2 < 0 || c2 >= long(w)) continue;
          std::size_t p = i * w + j;
          std::size_t q = std::size_t(r2) * w + std::size_t(c2);
          double acc = 0.0;
          for (std::size_t c = 0; c < d; ++c) acc += zd[c * hw + p] * zd[c * hw + q];
          plane[p] = acc;
        }
      }
    }
  }
  return out;
}

Tensor self_similarity_vjp(const FeatureMap& z, std::size_t k, const Tensor& upstream) {
  check_k(k);
  std::size_t d = z.channels(), h = z.height(), w = z.width(), hw = h * w;
  require(upstream.rank() == 3 && upstream.shape()[0] == k * k && upstream.shape()[1] == h &&
              upstream.shape()[2] == w,
          Errc::shape_mismatch, "self_similarity_vjp: upstream shape " + upstream.shape_str());
  long pad = long(k - 1) / 2;
  Tensor dz(z.data.shape());
  const double* zd = z.data.data();
  const double* up = upstream.data();
  double* out = dz.data();
  for (std::size_t dr = 0; dr < k; ++dr) {
    for (std::size_t dc = 0; dc < k; ++dc) {
      std::size_t t = dr * k + dc;
      const double* plane = up + t * hw;
      for (std::size_t i = 0; i < h; ++i) {
        long r2 = long(i) + long(dr) - pad;
        if (r2 < 0 || r2 >= long(h)) continue;
        for (std::size_t j = 0; j < w; ++j) {
          long c2 = long(j) + long(dc) - pad;
          if (c2 < 0 || c2 >= long(w)) continue;
          std::size_t p = i * w + j;
          std::size_t q = std::size_t(r2) * w + std::size_t(c2);
          double g = plane[p];
          if (g == 0.0) continue;
          // s_t = <z_p, z_q>; the p == q center tap lands twice, giving 2 z_p.
          for (std::size_t c = 0; c < d; ++c) {
            out[c * hw + p] += g * zd[c * hw + q];
            out[c * hw + q] += g * zd[c * hw + p];
          }
        }
      }
    }
  }
  return dz;
}

ContextFeature context_fuse(const FeatureMap& z, const ContextDescriptor& s,
                            const ContextEncoderParams& params, ContextFuseCache* cache) {
  z.validate();
  std::size_t d = z.channels(), h = z.height(), w = z.width(), hw = h * w;
  std::size_t k2 = s.k * s.k;
  require(s.data.shape()[1] == h && s.data.shape()[2] == w, Errc::shape_mismatch,
          "context_fuse: descriptor grid " + s.data.shape_str() + " vs feature grid " +
              z.data.shape_str());
  require(params.rows() == d + k2, Errc::shape_mismatch,
          "context_fuse: W rows " + std::to_string(params.rows()) + " != d + k^2 = " +
              std::to_string(d + k2));
  std::size_t l = params.out_dim();

  Tensor pre({l, h, w});
  const double* wd = params.w.data();
  const double* sd = s.data.data();
  const double* zd = z.data.data();
  double* pd = pre.data();
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t r = 0; r < k2; ++r) {
      double u = sd[r * hw + p];
      if (u == 0.0) continue;
      const double* wr = wd + r * l;
      for (std::size_t c = 0; c < l; ++c) pd[c * hw + p] += wr[c] * u;
    }
    for (std::size_t r = 0; r < d; ++r) {
      double u = zd[r * hw + p];
      const double* wr = wd + (k2 + r) * l;
      for (std::size_t c = 0; c < l; ++c) pd[c * hw + p] += wr[c] * u;
    }
  }
  ContextFeature out{relu(pre), false};
  if (cache) cache->pre_act = std::move(pre);
  return out;
}

ContextFuseGrads context_fuse_vjp(const FeatureMap& z, const ContextDescriptor& s,
                                  const ContextEncoderParams& params, const ContextFuseCache& cache,
                                  const Tensor& upstream) {
  std::size_t d = z.channels(), h = z.height(), w = z.width(), hw = h * w;
  std::size_t k2 = s.k * s.k, l = params.out_dim();
  require_same_shape(cache.pre_act, upstream, "context_fuse_vjp");

  Tensor dpre = relu_vjp(cache.pre_act, upstream);
  ContextFuseGrads g{Tensor(z.data.shape()), Tensor(s.data.shape()), Tensor(params.w.shape())};
  const double* wd = params.w.data();
  const double* sd = s.data.data();
  const double* zd = z.data.data();
  const double* dp = dpre.data();
  double* dw = g.d_w.data();
  double* ds = g.d_s.data();
  double* dz = g.d_z.data();
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t r = 0; r < k2; ++r) {
      double u = sd[r * hw + p];
      const double* wr = wd + r * l;
      double* dwr = dw + r * l;
      double acc = 0.0;
      for (std::size_t c = 0; c < l; ++c) {
        double gpc = dp[c * hw + p];
        dwr[c] += u * gpc;
        acc += wr[c] * gpc;
      }
      ds[r * hw + p] = acc;
    }
    for (std::size_t r = 0; r < d; ++r) {
      double u = zd[r * hw + p];
      const double* wr = wd + (k2 + r) * l;
      double* dwr = dw + (k2 + r) * l;
      double acc = 0.0;
      for (std::size_t c = 0; c < l; ++c) {
        double gpc = dp[c * hw + p];
        dwr[c] += u * gpc;
        acc += wr[c] * gpc;
      }
      dz[r * hw + p] = acc;
    }
  }
  return g;
}

}  // namespace dccnet
