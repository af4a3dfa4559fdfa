#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dccnet/spatial_context.hpp"
#include "test_util.hpp"

using namespace dccnet;
using namespace dccnet::testutil;

namespace {

// Double-loop dot-product oracle over the k x k neighborhood.
Tensor self_similarity_oracle(const FeatureMap& z, std::size_t k) {
  std::size_t d = z.channels(), h = z.height(), w = z.width(), hw = h * w;
  long pad = long(k - 1) / 2;
  Tensor out({k * k, h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t dr = 0; dr < k; ++dr) {
        for (std::size_t dc = 0; dc < k; ++dc) {
          long r2 = long(i) + long(dr) - pad;
          long c2 = long(j) + long(dc) - pad;
          double acc = 0.0;
          if (r2 >= 0 && r2 < long(h) && c2 >= 0 && c2 < long(w)) {
            for (std::size_t c = 0; c < d; ++c) {
              acc += z.data[c * hw + i * w + j] *
                     z.data[c * hw + std::size_t(r2) * w + std::size_t(c2)];
            }
          }
          out.at({dr * k + dc, i, j}) = acc;
        }
      }
    }
  }
  return out;
}

FeatureMap constant_map(std::size_t d, std::size_t h, std::size_t w) {
  Tensor t({d, h, w}, 1.0);
  return FeatureMap{l2_normalize_channels(t), true};
}

}  // namespace

TEST_CASE("k=1 descriptor of a normalized map is identically one") {
  Rng rng(1);
  FeatureMap z = random_feature_map(rng, 8, 5, 5);
  ContextDescriptor s = self_similarity(z, 1);
  REQUIRE(s.data.shape() == std::vector<std::size_t>{1, 5, 5});
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    CHECK(s.data[i] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("padding geometry at the top-left corner of a constant map") {
  FeatureMap z = constant_map(4, 3, 3);
  ContextDescriptor s = self_similarity(z, 3);
  // location (0,0): neighbors (0,0),(0,1),(1,0),(1,1) in bounds, 5 padded out
  int ones = 0, zeros = 0;
  for (std::size_t t = 0; t < 9; ++t) {
    double v = s.data.at({t, 0, 0});
    if (std::abs(v - 1.0) < 1e-12) ++ones;
    if (v == 0.0) ++zeros;
  }
  CHECK(ones == 4);
  CHECK(zeros == 5);
  // center plane is the self dot product everywhere
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(s.data.at({4, i, j}) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("descriptor matches the brute-force neighborhood oracle") {
  Rng rng(2);
  FeatureMap z = random_feature_map(rng, 8, 6, 6);
  ContextDescriptor s = self_similarity(z, 5);
  CHECK(max_abs_diff(s.data, self_similarity_oracle(z, 5)) < 1e-12);
}

TEST_CASE("even kernel size is rejected") {
  Rng rng(3);
  FeatureMap z = random_feature_map(rng, 4, 4, 4);
  CHECK_THROWS_AS(self_similarity(z, 4), Error);
}

TEST_CASE("descriptor entries are cosine-bounded on normalized input") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    FeatureMap z = random_feature_map(rng, 4 + rng.index(8), 5, 7);
    ContextDescriptor s = self_similarity(z, 3);
    for (std::size_t i = 0; i < s.data.size(); ++i) {
      CHECK(std::abs(s.data[i]) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("translation covariance away from borders") {
  std::size_t k = 3, h = 9, w = 9, d = 8;
  long dr = 1, dc = 2;
  SynthPairSpec spec;
  spec.height = h;
  spec.width = w;
  spec.channels = d;
  spec.transform = SynthTransform::shift;
  spec.shift_rows = dr;
  spec.shift_cols = dc;
  spec.seed = 11;
  SynthPair pair = synth_pair(spec);
  ContextDescriptor sa = self_similarity(pair.a, k);
  ContextDescriptor sb = self_similarity(pair.b, k);
  long margin = long(k - 1) / 2 + std::max(std::labs(dr), std::labs(dc));
  for (long i = margin; i < long(h) - margin; ++i) {
    for (long j = margin; j < long(w) - margin; ++j) {
      for (std::size_t t = 0; t < k * k; ++t) {
        CHECK(sa.data.at({t, std::size_t(i), std::size_t(j)}) ==
              sb.data.at({t, std::size_t(i + dr), std::size_t(j + dc)}));
      }
    }
  }
}

TEST_CASE("zero projection collapses the context feature") {
  Rng rng(5);
  FeatureMap z = random_feature_map(rng, 4, 4, 4);
  ContextDescriptor s = self_similarity(z, 3);
  ContextEncoderParams params{Tensor({4 + 9, 6})};
  ContextFeature g = context_fuse(z, s, params);
  for (std::size_t i = 0; i < g.data.size(); ++i) CHECK(g.data[i] == 0.0);
  CHECK_FALSE(g.normalized);
}

TEST_CASE("identity projection reproduces the stacked descriptor and feature") {
  Rng rng(6);
  std::size_t d = 4, k = 3, l = d + k * k;
  // non-negative input so relu is transparent
  Tensor raw({d, 3, 3});
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = std::abs(rng.normal());
  FeatureMap z{l2_normalize_channels(raw), true};
  ContextDescriptor s = self_similarity(z, k);
  ContextEncoderParams params{Tensor({l, l})};
  for (std::size_t i = 0; i < l; ++i) params.w.at({i, i}) = 1.0;
  ContextFeature g = context_fuse(z, s, params);
  std::size_t hw = 9;
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t t = 0; t < k * k; ++t) CHECK(g.data[t * hw + p] == s.data[t * hw + p]);
    for (std::size_t c = 0; c < d; ++c) CHECK(g.data[(k * k + c) * hw + p] == z.data[c * hw + p]);
  }
}

TEST_CASE("context fuse matches a per-location GEMV oracle") {
  Rng rng(7);
  std::size_t d = 6, k = 3, l = 10, h = 4, w = 5, hw = h * w;
  FeatureMap z = random_feature_map(rng, d, h, w);
  ContextDescriptor s = self_similarity(z, k);
  ContextEncoderParams params{random_tensor(rng, {d + k * k, l})};
  ContextFeature g = context_fuse(z, s, params);

  for (std::size_t p = 0; p < hw; ++p) {
    Tensor u({d + k * k});
    for (std::size_t t = 0; t < k * k; ++t) u[t] = s.data[t * hw + p];
    for (std::size_t c = 0; c < d; ++c) u[k * k + c] = z.data[c * hw + p];
    Tensor y = relu(matvec_t(params.w, u));
    for (std::size_t c = 0; c < l; ++c) {
      CHECK(std::abs(g.data[c * hw + p] - y[c]) < 1e-12);
    }
  }
  // post-relu non-negativity invariant
  for (std::size_t i = 0; i < g.data.size(); ++i) CHECK(g.data[i] >= 0.0);
}

TEST_CASE("context fuse rejects mismatched projection rows") {
  Rng rng(8);
  FeatureMap z = random_feature_map(rng, 4, 4, 4);
  ContextDescriptor s = self_similarity(z, 3);
  ContextEncoderParams bad{Tensor({5 + 9, 6})};
  CHECK_THROWS_AS(context_fuse(z, s, bad), Error);
}

TEST_CASE("backward of both context ops passes finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    std::size_t d = 4, k = 3, l = 6, h = 4, w = 4;
    FeatureMap z = random_feature_map(rng, d, h, w);
    Tensor up_s = random_tensor(rng, {k * k, h, w});

    auto dot_s = [&] {
      ContextDescriptor s = self_similarity(z, k);
      double acc = 0.0;
      for (std::size_t i = 0; i < s.data.size(); ++i) acc += up_s[i] * s.data[i];
      return acc;
    };
    Tensor dz = self_similarity_vjp(z, k, up_s);
    CHECK(fd_check(z.data, dot_s, dz) < 1e-4);

    ContextDescriptor s = self_similarity(z, k);
    ContextEncoderParams params{random_tensor(rng, {d + k * k, l})};
    Tensor up_g = random_tensor(rng, {l, h, w});
    auto dot_g = [&] {
      ContextFeature g = context_fuse(z, s, params);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.data.size(); ++i) acc += up_g[i] * g.data[i];
      return acc;
    };
    ContextFuseCache cache;
    context_fuse(z, s, params, &cache);
    ContextFuseGrads grads = context_fuse_vjp(z, s, params, cache, up_g);
    CHECK(fd_check(params.w, dot_g, grads.d_w) < 1e-4);
    CHECK(fd_check(s.data, dot_g, grads.d_s) < 1e-4);
    CHECK(fd_check(z.data, dot_g, grads.d_z) < 1e-4);
  }
}
