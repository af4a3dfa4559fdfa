#include "dccnet/conv4d.hpp"

#include <algorithm>
#include <cstring>

namespace dccnet {

namespace {

struct Dims {
  std::size_t c_out, c_in;
  std::size_t k1, k2, k3, k4;
  std::size_t A, B, C, D;
  std::size_t PA, PB, PC, PD;  // padded spatial extents
  std::size_t sC, sB, sA, sCh; // padded strides (sD == 1)
};

Dims resolve(const Tensor& input, const Conv4DKernel& kernel) {
  kernel.validate();
  require(input.rank() == 5, Errc::shape_mismatch,
          "conv4d: input must be [c_in, A, B, C, D], got " + input.shape_str());
  Dims d;
  d.c_out = kernel.weights.shape()[0];
  d.c_in = kernel.weights.shape()[1];
  require(input.shape()[0] == d.c_in, Errc::shape_mismatch,
          "conv4d: axis 0 (channels) mismatch, input has " + std::to_string(input.shape()[0]) +
              ", kernel expects " + std::to_string(d.c_in));
  d.k1 = kernel.weights.shape()[2];
  d.k2 = kernel.weights.shape()[3];
  d.k3 = kernel.weights.shape()[4];
  d.k4 = kernel.weights.shape()[5];
  d.A = input.shape()[1];
  d.B = input.shape()[2];
  d.C = input.shape()[3];
  d.D = input.shape()[4];
  d.PA = d.A + d.k1 - 1;
  d.PB = d.B + d.k2 - 1;
  d.PC = d.C + d.k3 - 1;
  d.PD = d.D + d.k4 - 1;
  d.sC = d.PD;
  d.sB = d.PC * d.PD;
  d.sA = d.PB * d.sB;
  d.sCh = d.PA * d.sA;
  return d;
}

// Zero-pad (k-1)/2 per spatial axis.
Tensor pad_input(const Tensor& input, const Dims& d) {
  Tensor padded({d.c_in, d.PA, d.PB, d.PC, d.PD});
  std::size_t p1 = (d.k1 - 1) / 2, p2 = (d.k2 - 1) / 2, p3 = (d.k3 - 1) / 2, p4 = (d.k4 - 1) / 2;
  const double* src = input.data();
  double* dst = padded.data();
  for (std::size_t ci = 0; ci < d.c_in; ++ci) {
    for (std::size_t a = 0; a < d.A; ++a) {
      for (std::size_t b = 0; b < d.B; ++b) {
        for (std::size_t c = 0; c < d.C; ++c) {
          std::size_t s = ((ci * d.A + a) * d.B + b) * d.C * d.D + c * d.D;
          std::size_t t = ci * d.sCh + (a + p1) * d.sA + (b + p2) * d.sB + (c + p3) * d.sC + p4;
          std::memcpy(dst + t, src + s, d.D * sizeof(double));
        }
      }
    }
  }
  return padded;
}

}  // namespace

void Conv4DKernel::validate() const {
  require(weights.rank() == 6, Errc::shape_mismatch,
          "Conv4DKernel weights must be [c_out, c_in, k1, k2, k3, k4], got " + weights.shape_str());
  for (std::size_t ax = 2; ax < 6; ++ax) {
    require(weights.shape()[ax] % 2 == 1, Errc::invalid_argument,
            "Conv4DKernel extent on axis " + std::to_string(ax) + " must be odd, got " +
                std::to_string(weights.shape()[ax]));
  }
  require(bias.rank() == 1 && bias.shape()[0] == weights.shape()[0], Errc::shape_mismatch,
          "Conv4DKernel bias length must equal c_out");
}

Conv4DKernel Conv4DKernel::zeros(std::size_t c_out, std::size_t c_in, std::size_t k) {
  return Conv4DKernel{Tensor({c_out, c_in, k, k, k, k}), Tensor({c_out})};
}

Conv4DKernel Conv4DKernel::delta(std::size_t c_out, std::size_t c_in, std::size_t k) {
  Conv4DKernel kern = zeros(c_out, c_in, k);
  std::size_t mid = (k - 1) / 2;
  for (std::size_t o = 0; o < c_out; ++o) {
    std::size_t ci = std::min(o, c_in - 1);
    kern.weights.at({o, ci, mid, mid, mid, mid}) = 1.0;
  }
  return kern;
}

Tensor conv4d(const Tensor& input, const Conv4DKernel& kernel) {
  Dims d = resolve(input, kernel);
  Tensor padded = pad_input(input, d);
  Tensor out({d.c_out, d.A, d.B, d.C, d.D});
  const double* pad = padded.data();
  const double* w = kernel.weights.data();
  const std::size_t taps = d.k1 * d.k2 * d.k3 * d.k4;

  // Accumulation order per output element is fixed at (c_in, t1, t2, t3, t4)
  // regardless of the thread split, so results are deterministic.
  parallel_for(d.c_out * d.A, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t task = lo; task < hi; ++task) {
      std::size_t o = task / d.A;
      std::size_t a = task % d.A;
      double* outp = out.data() + (o * d.A + a) * d.B * d.C * d.D;
      std::fill(outp, outp + d.B * d.C * d.D, kernel.bias[o]);
      for (std::size_t ci = 0; ci < d.c_in; ++ci) {
        const double* wc = w + (o * d.c_in + ci) * taps;
        const double* pc = pad + ci * d.sCh;
        for (std::size_t t1 = 0; t1 < d.k1; ++t1) {
          const double* pa = pc + (a + t1) * d.sA;
          const double* w1 = wc + t1 * d.k2 * d.k3 * d.k4;
          for (std::size_t b = 0; b < d.B; ++b) {
            for (std::size_t t2 = 0; t2 < d.k2; ++t2) {
              const double* pb = pa + (b + t2) * d.sB;
              const double* w2 = w1 + t2 * d.k3 * d.k4;
              for (std::size_t c = 0; c < d.C; ++c) {
                double* orow = outp + (b * d.C + c) * d.D;
                for (std::size_t t3 = 0; t3 < d.k3; ++t3) {
                  const double* prow = pb + (c + t3) * d.sC;
                  const double* wk = w2 + t3 * d.k4;
                  for (std::size_t t4 = 0; t4 < d.k4; ++t4) {
                    double wv = wk[t4];
                    const double* src = prow + t4;
                    for (std::size_t x = 0; x < d.D; ++x) orow[x] += wv * src[x];
                  }
                }
              }
            }
          }
        }
      }
    }
  });
  return out;
}

Conv4DGrads conv4d_vjp(const Tensor& input, const Conv4DKernel& kernel, const Tensor& upstream) {
  Dims d = resolve(input, kernel);
  require(upstream.rank() == 5 && upstream.shape()[0] == d.c_out &&
              upstream.shape()[1] == d.A && upstream.shape()[2] == d.B &&
              upstream.shape()[3] == d.C && upstream.shape()[4] == d.D,
          Errc::shape_mismatch, "conv4d_vjp: upstream shape " + upstream.shape_str() +
                                    " does not match conv output");
  Tensor padded = pad_input(input, d);
  const double* pad = padded.data();
  const double* up = upstream.data();
  const std::size_t taps = d.k1 * d.k2 * d.k3 * d.k4;
  const std::size_t cell_count = d.A * d.B * d.C * d.D;

  Conv4DGrads g{Tensor(input.shape()), Tensor(kernel.weights.shape()), Tensor(kernel.bias.shape())};

  for (std::size_t o = 0; o < d.c_out; ++o) {
    double acc = 0.0;
    const double* urow = up + o * cell_count;
    for (std::size_t i = 0; i < cell_count; ++i) acc += urow[i];
    g.d_bias[o] = acc;
  }

  // d_w[o,ci,t] = sum_p up[o,p] * pad[ci, p+t]; independent reductions.
  parallel_for(d.c_out * d.c_in, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t task = lo; task < hi; ++task) {
      std::size_t o = task / d.c_in;
      std::size_t ci = task % d.c_in;
      const double* uo = up + o * cell_count;
      const double* pc = pad + ci * d.sCh;
      double* dw = g.d_weights.data() + task * taps;
      for (std::size_t t1 = 0; t1 < d.k1; ++t1) {
        for (std::size_t t2 = 0; t2 < d.k2; ++t2) {
          for (std::size_t t3 = 0; t3 < d.k3; ++t3) {
            for (std::size_t t4 = 0; t4 < d.k4; ++t4) {
              double acc = 0.0;
              for (std::size_t a = 0; a < d.A; ++a) {
                for (std::size_t b = 0; b < d.B; ++b) {
                  for (std::size_t c = 0; c < d.C; ++c) {
                    const double* urow = uo + ((a * d.B + b) * d.C + c) * d.D;
                    const double* prow =
                        pc + (a + t1) * d.sA + (b + t2) * d.sB + (c + t3) * d.sC + t4;
                    for (std::size_t x = 0; x < d.D; ++x) acc += urow[x] * prow[x];
                  }
                }
              }
              dw[((t1 * d.k2 + t2) * d.k3 + t3) * d.k4 + t4] = acc;
            }
          }
        }
      }
    }
  });

  // d_pad[ci, p+t] += up[o, p] * w[o,ci,t]; per-ci slices are disjoint.
  Tensor d_padded(padded.shape());
  const double* w = kernel.weights.data();
  parallel_for(d.c_in, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t ci = lo; ci < hi; ++ci) {
      double* dpc = d_padded.data() + ci * d.sCh;
      for (std::size_t o = 0; o < d.c_out; ++o) {
        const double* uo = up + o * cell_count;
        const double* wc = w + (o * d.c_in + ci) * taps;
        for (std::size_t t1 = 0; t1 < d.k1; ++t1) {
          for (std::size_t t2 = 0; t2 < d.k2; ++t2) {
            for (std::size_t t3 = 0; t3 < d.k3; ++t3) {
              const double* wk = wc + ((t1 * d.k2 + t2) * d.k3 + t3) * d.k4;
              for (std::size_t t4 = 0; t4 < d.k4; ++t4) {
                double wv = wk[t4];
                if (wv == 0.0) continue;
                for (std::size_t a = 0; a < d.A; ++a) {
                  for (std::size_t b = 0; b < d.B; ++b) {
                    for (std::size_t c = 0; c < d.C; ++c) {
                      const double* urow = uo + ((a * d.B + b) * d.C + c) * d.D;
                      double* drow =
                          dpc + (a + t1) * d.sA + (b + t2) * d.sB + (c + t3) * d.sC + t4;
                      for (std::size_t x = 0; x < d.D; ++x) drow[x] += wv * urow[x];
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
  });

  // crop padding back off
  std::size_t p1 = (d.k1 - 1) / 2, p2 = (d.k2 - 1) / 2, p3 = (d.k3 - 1) / 2, p4 = (d.k4 - 1) / 2;
  for (std::size_t ci = 0; ci < d.c_in; ++ci) {
    for (std::size_t a = 0; a < d.A; ++a) {
      for (std::size_t b = 0; b < d.B; ++b) {
        for (std::size_t c = 0; c < d.C; ++c) {
          const double* src = d_padded.data() + ci * d.sCh + (a + p1) * d.sA + (b + p2) * d.sB +
                              (c + p3) * d.sC + p4;
          double* dst = g.d_input.data() + ((ci * d.A + a) * d.B + b) * d.C * d.D + c * d.D;
          std::memcpy(dst, src, d.D * sizeof(double));
        }
      }
    }
  }
  return g;
}

}  // namespace dccnet
