#include <cmath>
#include <memory>
#include <memory>

#include "tubemesh/parallel.hpp"
#include "tubemesh/tape.hpp"

namespace tubemesh::nn {

namespace {

// Mirror (reflect) index: -1 -> 1, L -> L-2. Single-sample rows reflect onto
// themselves.
inline std::size_t mirror_index(long i, long L) {
  if (L == 1) return 0;
  if (i < 0) return static_cast<std::size_t>(-i);
  if (i >= L) return static_cast<std::size_t>(2 * L - 2 - i);
  return static_cast<std::size_t>(i);
}

struct Dims5 {
  std::size_t B, C, T, R, L;
};

Dims5 dims5(const NdArray& x, const char* op) {
  if (x.rank() != 5) {
    throw std::invalid_argument(std::string(op) +
                                ": expected [B,C,Theta,R,L], got " +
                                x.shape_str());
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4)};
}

// ---- radial 1D convolution kernels (valid along R) ----

void conv_radial_fwd(const double* x, const Dims5& d, const double* w,
                     const double* bias, std::size_t Co, std::size_t k,
                     std::size_t stride, double* out, std::size_t Ro) {
  const std::size_t L = d.L;
  parallel_for(d.B * Co, [&](std::size_t task) {
    const std::size_t b = task / Co, co = task % Co;
    for (std::size_t th = 0; th < d.T; ++th) {
      for (std::size_t ro = 0; ro < Ro; ++ro) {
        double* orow = out + (((b * Co + co) * d.T + th) * Ro + ro) * L;
        for (std::size_t z = 0; z < L; ++z) orow[z] = bias[co];
        for (std::size_t c = 0; c < d.C; ++c) {
          const double* wr = w + (co * d.C + c) * k;
          const double* xbase =
              x + (((b * d.C + c) * d.T + th) * d.R + ro * stride) * L;
          for (std::size_t j = 0; j < k; ++j) {
            const double wv = wr[j];
            const double* xrow = xbase + j * L;
            for (std::size_t z = 0; z < L; ++z) orow[z] += wv * xrow[z];
          }
        }
      }
    }
  });
}

void conv_radial_bwd_input(const double* gout, const Dims5& din,
                           const double* w, std::size_t Co, std::size_t k,
                           std::size_t stride, std::size_t Ro, double* gx) {
  const std::size_t L = din.L;
  parallel_for(din.B, [&](std::size_t b) {
    for (std::size_t co = 0; co < Co; ++co) {
      for (std::size_t th = 0; th < din.T; ++th) {
        for (std::size_t ro = 0; ro < Ro; ++ro) {
          const double* grow = gout + (((b * Co + co) * din.T + th) * Ro + ro) * L;
          for (std::size_t c = 0; c < din.C; ++c) {
            const double* wr = w + (co * din.C + c) * k;
            double* gbase =
                gx + (((b * din.C + c) * din.T + th) * din.R + ro * stride) * L;
            for (std::size_t j = 0; j < k; ++j) {
              const double wv = wr[j];
              double* grow_x = gbase + j * L;
              for (std::size_t z = 0; z < L; ++z) grow_x[z] += wv * grow[z];
            }
          }
        }
      }
    }
  });
}

void conv_radial_bwd_params(const double* gout, const double* x,
                            const Dims5& din, std::size_t Co, std::size_t k,
                            std::size_t stride, std::size_t Ro, double* gw,
                            double* gb) {
  const std::size_t L = din.L;
  parallel_for(Co, [&](std::size_t co) {
    for (std::size_t b = 0; b < din.B; ++b) {
      for (std::size_t th = 0; th < din.T; ++th) {
        for (std::size_t ro = 0; ro < Ro; ++ro) {
          const double* grow = gout + (((b * Co + co) * din.T + th) * Ro + ro) * L;
          double gsum = 0.0;
          for (std::size_t z = 0; z < L; ++z) gsum += grow[z];
          gb[co] += gsum;
          for (std::size_t c = 0; c < din.C; ++c) {
            const double* xbase =
                x + (((b * din.C + c) * din.T + th) * din.R + ro * stride) * L;
            double* gwr = gw + (co * din.C + c) * k;
            for (std::size_t j = 0; j < k; ++j) {
              const double* xrow = xbase + j * L;
              double s = 0.0;
              for (std::size_t z = 0; z < L; ++z) s += grow[z] * xrow[z];
              gwr[j] += s;
            }
          }
        }
      }
    }
  });
}

// ---- cylindrical 3x3x3 convolution kernels ----
// Circular padding along Theta, mirror padding along L, valid along R.

void conv3d_fwd(const double* x, const Dims5& d, const double* w,
                const double* bias, std::size_t Co, double* out) {
  const std::size_t T = d.T, R = d.R, L = d.L, C = d.C;
  const std::size_t Ro = R - 2;
  parallel_for(d.B * Co, [&](std::size_t task) {
    const std::size_t b = task / Co, co = task % Co;
    for (std::size_t to = 0; to < T; ++to) {
      for (std::size_t ro = 0; ro < Ro; ++ro) {
        double* orow = out + (((b * Co + co) * T + to) * Ro + ro) * L;
        for (std::size_t z = 0; z < L; ++z) orow[z] = bias[co];
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t dt = 0; dt < 3; ++dt) {
            const std::size_t ti = (to + dt + T - 1) % T;
            for (std::size_t dr = 0; dr < 3; ++dr) {
              const double* xrow =
                  x + (((b * C + c) * T + ti) * R + ro + dr) * L;
              const double* wv = w + (((co * C + c) * 3 + dt) * 3 + dr) * 3;
              const double w0 = wv[0], w1 = wv[1], w2 = wv[2];
              if (L == 1) {
                orow[0] += (w0 + w1 + w2) * xrow[0];
                continue;
              }
              for (std::size_t z = 1; z + 1 < L; ++z) {
                orow[z] += w0 * xrow[z - 1] + w1 * xrow[z] + w2 * xrow[z + 1];
              }
              orow[0] += w0 * xrow[1] + w1 * xrow[0] + w2 * xrow[1];
              orow[L - 1] +=
                  w0 * xrow[L - 2] + w1 * xrow[L - 1] + w2 * xrow[L - 2];
            }
          }
        }
      }
    }
  });
}

void conv3d_bwd_input(const double* gout, const Dims5& din, const double* w,
                      std::size_t Co, double* gx) {
  const std::size_t T = din.T, R = din.R, L = din.L, C = din.C;
  const std::size_t Ro = R - 2;
  parallel_for(din.B, [&](std::size_t b) {
    for (std::size_t co = 0; co < Co; ++co) {
      for (std::size_t to = 0; to < T; ++to) {
        for (std::size_t ro = 0; ro < Ro; ++ro) {
          const double* grow = gout + (((b * Co + co) * T + to) * Ro + ro) * L;
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t dt = 0; dt < 3; ++dt) {
              const std::size_t ti = (to + dt + T - 1) % T;
              for (std::size_t dr = 0; dr < 3; ++dr) {
                double* gxrow =
                    gx + (((b * C + c) * T + ti) * R + ro + dr) * L;
                const double* wv = w + (((co * C + c) * 3 + dt) * 3 + dr) * 3;
                const double w0 = wv[0], w1 = wv[1], w2 = wv[2];
                if (L <= 2) {
                  for (long z = 0; z < static_cast<long>(L); ++z) {
                    const double g = grow[z];
                    gxrow[mirror_index(z - 1, L)] += w0 * g;
                    gxrow[z] += w1 * g;
                    gxrow[mirror_index(z + 1, L)] += w2 * g;
                  }
                  continue;
                }
                for (std::size_t zi = 1; zi + 1 < L; ++zi) {
                  gxrow[zi] +=
                      w0 * grow[zi + 1] + w1 * grow[zi] + w2 * grow[zi - 1];
                }
                gxrow[0] += w1 * grow[0] + w0 * grow[1];
                gxrow[L - 1] += w1 * grow[L - 1] + w2 * grow[L - 2];
                // mirror-padding adjoint at the two ends
                gxrow[1] += w0 * grow[0];
                gxrow[L - 2] += w2 * grow[L - 1];
              }
            }
          }
        }
      }
    }
  });
}

void conv3d_bwd_params(const double* gout, const double* x, const Dims5& din,
                       std::size_t Co, double* gw, double* gb) {
  const std::size_t T = din.T, R = din.R, L = din.L, C = din.C;
  const std::size_t Ro = R - 2;
  parallel_for(Co, [&](std::size_t co) {
    for (std::size_t b = 0; b < din.B; ++b) {
      for (std::size_t to = 0; to < T; ++to) {
        for (std::size_t ro = 0; ro < Ro; ++ro) {
          const double* grow = gout + (((b * Co + co) * T + to) * Ro + ro) * L;
          double gsum = 0.0;
          for (std::size_t z = 0; z < L; ++z) gsum += grow[z];
          gb[co] += gsum;
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t dt = 0; dt < 3; ++dt) {
              const std::size_t ti = (to + dt + T - 1) % T;
              for (std::size_t dr = 0; dr < 3; ++dr) {
                const double* xrow =
                    x + (((b * C + c) * T + ti) * R + ro + dr) * L;
                double s0 = 0.0, s1 = 0.0, s2 = 0.0;
                if (L == 1) {
                  s0 = s1 = s2 = grow[0] * xrow[0];
                } else {
                  for (std::size_t z = 1; z + 1 < L; ++z) {
                    const double g = grow[z];
                    s0 += g * xrow[z - 1];
                    s1 += g * xrow[z];
                    s2 += g * xrow[z + 1];
                  }
                  s0 += grow[0] * xrow[1] + grow[L - 1] * xrow[L - 2];
                  s1 += grow[0] * xrow[0] + grow[L - 1] * xrow[L - 1];
                  s2 += grow[0] * xrow[1] + grow[L - 1] * xrow[L - 2];
                }
                double* gwr = gw + (((co * C + c) * 3 + dt) * 3 + dr) * 3;
                gwr[0] += s0;
                gwr[1] += s1;
                gwr[2] += s2;
              }
            }
          }
        }
      }
    }
  });
}

}  // namespace

Var conv_radial(Tape& t, Var x, Var w, Var b, int stride) {
  const NdArray &xv = t.val(x), &wv = t.val(w), &bv = t.val(b);
  Dims5 d = dims5(xv, "conv_radial");
  if (wv.rank() != 3) {
    throw std::invalid_argument("conv_radial: kernel must be [C',C,k], got " +
                                wv.shape_str());
  }
  if (stride <= 0) throw std::invalid_argument("conv_radial: stride must be > 0");
  const std::size_t Co = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != d.C) {
    throw std::invalid_argument(
        "conv_radial: channel axis mismatch: input C=" + std::to_string(d.C) +
        ", kernel C=" + std::to_string(wv.dim(1)));
  }
  if (d.R < k) {
    throw std::invalid_argument("conv_radial: R axis too small: R=" +
                                std::to_string(d.R) + " < kernel " +
                                std::to_string(k));
  }
  if (bv.rank() != 1 || bv.dim(0) != Co) {
    throw std::invalid_argument("conv_radial: bias axis must be [C']");
  }
  const std::size_t Ro = (d.R - k) / stride + 1;
  NdArray out({d.B, Co, d.T, Ro, d.L});
  conv_radial_fwd(xv.data(), d, wv.data(), bv.data(), Co, k,
                  static_cast<std::size_t>(stride), out.data(), Ro);
  bool rg = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    const std::size_t st = static_cast<std::size_t>(stride);
    t.set_backward(o, [x, w, b, o, d, Co, k, st, Ro](Tape& t) {
      const NdArray& g = t.grad(o);
      if (t.needs_grad(x)) {
        conv_radial_bwd_input(g.data(), d, t.val(w).data(), Co, k, st, Ro,
                              t.grad(x).data());
      }
      if (t.needs_grad(w)) {
        conv_radial_bwd_params(g.data(), t.val(x).data(), d, Co, k, st, Ro,
                               t.grad(w).data(), t.grad(b).data());
      }
    });
  }
  return o;
}

Var conv3d_cyl(Tape& t, Var x, Var w, Var b) {
  const NdArray &xv = t.val(x), &wv = t.val(w), &bv = t.val(b);
  Dims5 d = dims5(xv, "conv3d_cyl");
  if (wv.rank() != 5 || wv.dim(2) != 3 || wv.dim(3) != 3 || wv.dim(4) != 3) {
    throw std::invalid_argument(
        "conv3d_cyl: kernel must be [C',C,3,3,3], got " + wv.shape_str());
  }
  const std::size_t Co = wv.dim(0);
  if (wv.dim(1) != d.C) {
    throw std::invalid_argument(
        "conv3d_cyl: channel axis mismatch: input C=" + std::to_string(d.C) +
        ", kernel C=" + std::to_string(wv.dim(1)));
  }
  if (d.T < 3) {
    throw std::invalid_argument(
        "conv3d_cyl: Theta axis must be >= 3 for circular padding, got " +
        std::to_string(d.T));
  }
  if (d.R < 3) {
    throw std::invalid_argument("conv3d_cyl: R axis must be >= 3, got " +
                                std::to_string(d.R));
  }
  if (bv.rank() != 1 || bv.dim(0) != Co) {
    throw std::invalid_argument("conv3d_cyl: bias axis must be [C']");
  }
  NdArray out({d.B, Co, d.T, d.R - 2, d.L});
  conv3d_fwd(xv.data(), d, wv.data(), bv.data(), Co, out.data());
  bool rg = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, w, b, o, d, Co](Tape& t) {
      const NdArray& g = t.grad(o);
      if (t.needs_grad(x)) {
        conv3d_bwd_input(g.data(), d, t.val(w).data(), Co, t.grad(x).data());
      }
      if (t.needs_grad(w)) {
        conv3d_bwd_params(g.data(), t.val(x).data(), d, Co, t.grad(w).data(),
                          t.grad(b).data());
      }
    });
  }
  return o;
}

Var conv1d(Tape& t, Var x, Var w, Var b, int stride, int pad) {
  const NdArray &xv = t.val(x), &wv = t.val(w), &bv = t.val(b);
  if (xv.rank() != 3) {
    throw std::invalid_argument("conv1d: expected [B,C,L], got " +
                                xv.shape_str());
  }
  if (wv.rank() != 3) {
    throw std::invalid_argument("conv1d: kernel must be [C',C,k]");
  }
  if (stride <= 0 || pad < 0) {
    throw std::invalid_argument("conv1d: bad stride or padding");
  }
  const std::size_t B = xv.dim(0), C = xv.dim(1), L = xv.dim(2);
  const std::size_t Co = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != C) {
    throw std::invalid_argument(
        "conv1d: channel axis mismatch: input C=" + std::to_string(C) +
        ", kernel C=" + std::to_string(wv.dim(1)));
  }
  if (bv.rank() != 1 || bv.dim(0) != Co) {
    throw std::invalid_argument("conv1d: bias axis must be [C']");
  }
  const long Lp = static_cast<long>(L) + 2 * pad;
  if (Lp < static_cast<long>(k)) {
    throw std::invalid_argument("conv1d: L axis too small for kernel");
  }
  const std::size_t Lo = (Lp - k) / stride + 1;
  NdArray out({B, Co, Lo});
  for (std::size_t bb = 0; bb < B; ++bb) {
    for (std::size_t co = 0; co < Co; ++co) {
      double* orow = out.data() + (bb * Co + co) * Lo;
      for (std::size_t j = 0; j < Lo; ++j) {
        double s = bv[co];
        const long start = static_cast<long>(j) * stride - pad;
        for (std::size_t c = 0; c < C; ++c) {
          const double* xrow = xv.data() + (bb * C + c) * L;
          const double* wr = wv.data() + (co * C + c) * k;
          for (std::size_t jj = 0; jj < k; ++jj) {
            const long zi = start + static_cast<long>(jj);
            if (zi >= 0 && zi < static_cast<long>(L)) s += wr[jj] * xrow[zi];
          }
        }
        orow[j] = s;
      }
    }
  }
  bool rg = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, w, b, o, B, C, L, Co, k, stride, pad, Lo](Tape& t) {
      const NdArray& g = t.grad(o);
      const NdArray &xv = t.val(x), &wv = t.val(w);
      const bool gx_needed = t.needs_grad(x);
      const bool gw_needed = t.needs_grad(w);
      const bool gb_needed = t.needs_grad(b);
      for (std::size_t bb = 0; bb < B; ++bb) {
        for (std::size_t co = 0; co < Co; ++co) {
          const double* grow = g.data() + (bb * Co + co) * Lo;
          for (std::size_t j = 0; j < Lo; ++j) {
            const double gv = grow[j];
            if (gv == 0.0) continue;
            const long start = static_cast<long>(j) * stride - pad;
            if (gb_needed) t.grad(b)[co] += gv;
            for (std::size_t c = 0; c < C; ++c) {
              const double* xrow = xv.data() + (bb * C + c) * L;
              const double* wr = wv.data() + (co * C + c) * k;
              double* gxrow =
                  gx_needed ? t.grad(x).data() + (bb * C + c) * L : nullptr;
              double* gwr =
                  gw_needed ? t.grad(w).data() + (co * C + c) * k : nullptr;
              for (std::size_t jj = 0; jj < k; ++jj) {
                const long zi = start + static_cast<long>(jj);
                if (zi < 0 || zi >= static_cast<long>(L)) continue;
                if (gx_needed) gxrow[zi] += gv * wr[jj];
                if (gw_needed) gwr[jj] += gv * xrow[zi];
              }
            }
          }
        }
      }
    });
  }
  return o;
}

// Module-level primitive: input [C,R], kernel [C',C,k] -> [C',R'].
NdArray conv1d_radial(const NdArray& input, const NdArray& kernel,
                      int stride) {
  if (input.rank() != 2) {
    throw std::invalid_argument("conv1d_radial: input must be [C,R], got " +
                                input.shape_str());
  }
  if (kernel.rank() != 3) {
    throw std::invalid_argument("conv1d_radial: kernel must be [C',C,k]");
  }
  if (stride <= 0) throw std::invalid_argument("conv1d_radial: stride");
  const std::size_t C = input.dim(0), R = input.dim(1);
  const std::size_t Co = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != C) {
    throw std::invalid_argument(
        "conv1d_radial: channel axis mismatch: input C=" + std::to_string(C) +
        ", kernel C=" + std::to_string(kernel.dim(1)));
  }
  if (R < k) {
    throw std::invalid_argument("conv1d_radial: R axis too small: R=" +
                                std::to_string(R) + " < kernel " +
                                std::to_string(k));
  }
  const std::size_t Ro = (R - k) / stride + 1;
  NdArray out({Co, Ro});
  for (std::size_t co = 0; co < Co; ++co) {
    for (std::size_t ro = 0; ro < Ro; ++ro) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double* xr = input.data() + c * R + ro * stride;
        const double* wr = kernel.data() + (co * C + c) * k;
        for (std::size_t j = 0; j < k; ++j) s += wr[j] * xr[j];
      }
      out[co * Ro + ro] = s;
    }
  }
  return out;
}

// Module-level primitive: input [C,Theta,R,Z], kernel [C',C,3,3,3].
NdArray conv3d_cyl_forward(const NdArray& input, const NdArray& kernel) {
  if (input.rank() != 4) {
    throw std::invalid_argument(
        "conv3d_cyl_forward: input must be [C,Theta,R,Z], got " +
        input.shape_str());
  }
  NdArray x5({1, input.dim(0), input.dim(1), input.dim(2), input.dim(3)},
             std::vector<double>(input.data(), input.data() + input.size()));
  Tape t;
  Var b = t.constant(NdArray({kernel.dim(0)}));
  Var o = conv3d_cyl(t, t.constant(std::move(x5)), t.constant(kernel), b);
  const NdArray& ov = t.val(o);
  return NdArray({ov.dim(1), ov.dim(2), ov.dim(3), ov.dim(4)},
                 std::vector<double>(ov.data(), ov.data() + ov.size()));
}

}  // namespace tubemesh::nn
