#include "tubemesh/layers.hpp"

#include <cmath>
#include <memory>

namespace tubemesh::nn {

NdArray kaiming_init(const std::vector<std::size_t>& shape, std::size_t fan_in,
                     Rng& rng) {
  NdArray w(shape);
  const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, sigma);
  return w;
}

// Normalizes x over every axis except the channel axis (dim 1). The batch
// variance is biased (divide by m); the running variance keeps the unbiased
// estimate. A batch of one sample with spatial size one is permitted: the
// zero variance is floored by eps.
Var batch_norm(Tape& t, Var x, BatchNorm& bn, bool training) {
  const NdArray& xv = t.val(x);
  if (xv.rank() < 2) {
    throw std::invalid_argument("batch_norm: need at least [B,C], got " +
                                xv.shape_str());
  }
  const std::size_t C = xv.dim(1);
  if (C != bn.gamma.value.dim(0)) {
    throw std::invalid_argument("batch_norm: channel axis mismatch");
  }
  const std::size_t B = xv.dim(0);
  std::size_t inner = 1;
  for (std::size_t d = 2; d < xv.rank(); ++d) inner *= xv.dim(d);
  const std::size_t m = B * inner;  // samples per channel

  auto mean = std::make_shared<NdArray>(NdArray({C}));
  auto inv_std = std::make_shared<NdArray>(NdArray({C}));

  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* row = xv.data() + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += row[i];
      }
      const double mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* row = xv.data() + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = row[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(m);
      (*mean)[c] = mu;
      (*inv_std)[c] = 1.0 / std::sqrt(var + bn.eps);
      const double unbiased =
          m > 1 ? ss / static_cast<double>(m - 1) : var;
      bn.running_mean[c] =
          (1.0 - bn.momentum) * bn.running_mean[c] + bn.momentum * mu;
      bn.running_var[c] =
          (1.0 - bn.momentum) * bn.running_var[c] + bn.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      (*mean)[c] = bn.running_mean[c];
      (*inv_std)[c] = 1.0 / std::sqrt(bn.running_var[c] + bn.eps);
    }
  }

  Var gamma = t.leaf(bn.gamma);
  Var beta = t.leaf(bn.beta);
  const NdArray& gv = t.val(gamma);
  const NdArray& bv = t.val(beta);

  NdArray out(xv.shape());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* row = xv.data() + (b * C + c) * inner;
      double* orow = out.data() + (b * C + c) * inner;
      const double mu = (*mean)[c], is = (*inv_std)[c];
      const double g = gv[c], be = bv[c];
      for (std::size_t i = 0; i < inner; ++i)
        orow[i] = (row[i] - mu) * is * g + be;
    }
  }

  bool rg = t.needs_grad(x) || true;  // gamma/beta are leaves
  Var o = t.make(std::move(out), rg);
  const bool x_needs = t.needs_grad(x);
  t.set_backward(o, [x, gamma, beta, o, mean, inv_std, training, x_needs, B, C,
                     inner, m](Tape& t) {
    const NdArray& g = t.grad(o);
    const NdArray& xv = t.val(x);
    const NdArray& gv = t.val(gamma);
    NdArray& ggamma = t.grad(gamma);
    NdArray& gbeta = t.grad(beta);
    NdArray* gx = x_needs ? &t.grad(x) : nullptr;
    for (std::size_t c = 0; c < C; ++c) {
      const double mu = (*mean)[c], is = (*inv_std)[c];
      // accumulate per-channel reductions in fixed order
      double sum_g = 0.0, sum_g_xhat = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* grow = g.data() + (b * C + c) * inner;
        const double* xrow = xv.data() + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          sum_g += grow[i];
          sum_g_xhat += grow[i] * (xrow[i] - mu) * is;
        }
      }
      ggamma[c] += sum_g_xhat;
      gbeta[c] += sum_g;
      if (!gx) continue;
      const double gam = gv[c];
      if (training) {
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t b = 0; b < B; ++b) {
          const double* grow = g.data() + (b * C + c) * inner;
          const double* xrow = xv.data() + (b * C + c) * inner;
          double* gxr = gx->data() + (b * C + c) * inner;
          for (std::size_t i = 0; i < inner; ++i) {
            const double xhat = (xrow[i] - mu) * is;
            gxr[i] += gam * is *
                      (grow[i] - inv_m * sum_g - inv_m * xhat * sum_g_xhat);
          }
        }
      } else {
        for (std::size_t b = 0; b < B; ++b) {
          const double* grow = g.data() + (b * C + c) * inner;
          double* gxr = gx->data() + (b * C + c) * inner;
          for (std::size_t i = 0; i < inner; ++i) gxr[i] += gam * is * grow[i];
        }
      }
    }
  });
  return o;
}

Var BatchNorm::operator()(Tape& t, Var x, bool training) {
  return batch_norm(t, x, *this, training);
}

}  // namespace tubemesh::nn
