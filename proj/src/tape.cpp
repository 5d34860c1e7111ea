#include "tubemesh/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace tubemesh::nn {

Var Tape::constant(NdArray value) { return make(std::move(value), false); }

Var Tape::leaf(Parameter& p) {
  Var v = make(p.value, true);
  nodes_[v.id].is_leaf = true;
  leaves_.emplace_back(v.id, &p);
  return v;
}

Var Tape::make(NdArray value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_backward(Var v, std::function<void(Tape&)> backward) {
  nodes_[v.id].backward = std::move(backward);
}

NdArray& Tape::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = NdArray(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (backward_done_) {
    throw std::logic_error(
        "Tape::backward called twice without resetting the tape");
  }
  backward_done_ = true;
  const NdArray& lv = val(loss);
  if (lv.size() != 1) {
    throw std::invalid_argument("Tape::backward: loss must be a scalar, got " +
                                lv.shape_str());
  }
  if (!std::isfinite(lv[0])) {
    throw std::runtime_error("Tape::backward: loss is not finite");
  }
  grad(loss)[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;  // not on any path to the loss
    if (n.backward) n.backward(*this);
    if (!n.is_leaf) n.grad = NdArray();  // release consumed gradient storage
  }
  for (auto& [id, p] : leaves_) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    for (std::size_t k = 0; k < n.grad.size(); ++k) p->grad[k] += n.grad[k];
    if (!p->grad.all_finite()) {
      throw std::runtime_error("non-finite gradient for parameter '" +
                               p->name + "'");
    }
    n.grad = NdArray();
  }
}

void Tape::clear() {
  nodes_.clear();
  leaves_.clear();
  backward_done_ = false;
}

namespace {

void check_same_shape(const NdArray& a, const NdArray& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "add");
  const NdArray &av = t.val(a), &bv = t.val(b);
  NdArray out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  bool rg = t.needs_grad(a) || t.needs_grad(b);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [a, b, o](Tape& t) {
      const NdArray& g = t.grad(o);
      if (t.needs_grad(a)) {
        NdArray& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t.needs_grad(b)) {
        NdArray& gb = t.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return o;
}

Var sub(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "sub");
  const NdArray &av = t.val(a), &bv = t.val(b);
  NdArray out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  bool rg = t.needs_grad(a) || t.needs_grad(b);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [a, b, o](Tape& t) {
      const NdArray& g = t.grad(o);
      if (t.needs_grad(a)) {
        NdArray& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t.needs_grad(b)) {
        NdArray& gb = t.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return o;
}

Var mul(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "mul");
  const NdArray &av = t.val(a), &bv = t.val(b);
  NdArray out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  bool rg = t.needs_grad(a) || t.needs_grad(b);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [a, b, o](Tape& t) {
      const NdArray& g = t.grad(o);
      const NdArray &av = t.val(a), &bv = t.val(b);
      if (t.needs_grad(a)) {
        NdArray& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (t.needs_grad(b)) {
        NdArray& gb = t.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return o;
}

Var affine(Tape& t, Var x, double scale, double shift) {
  const NdArray& xv = t.val(x);
  NdArray out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * xv[i] + shift;
  bool rg = t.needs_grad(x);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, o, scale](Tape& t) {
      const NdArray& g = t.grad(o);
      NdArray& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += scale * g[i];
    });
  }
  return o;
}

Var sum(Tape& t, Var x) {
  const NdArray& xv = t.val(x);
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  bool rg = t.needs_grad(x);
  Var o = t.make(NdArray::scalar(s), rg);
  if (rg) {
    t.set_backward(o, [x, o](Tape& t) {
      double g = t.grad(o)[0];
      NdArray& gx = t.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return o;
}

Var weighted_sum(Tape& t, Var x, NdArray weights) {
  check_same_shape(t.val(x), weights, "weighted_sum");
  const NdArray& xv = t.val(x);
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  bool rg = t.needs_grad(x);
  Var o = t.make(NdArray::scalar(s), rg);
  if (rg) {
    auto w = std::make_shared<NdArray>(std::move(weights));
    t.set_backward(o, [x, o, w](Tape& t) {
      double g = t.grad(o)[0];
      NdArray& gx = t.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * (*w)[i];
    });
  }
  return o;
}

Var square(Tape& t, Var x) {
  const NdArray& xv = t.val(x);
  NdArray out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * xv[i];
  bool rg = t.needs_grad(x);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, o](Tape& t) {
      const NdArray& g = t.grad(o);
      const NdArray& xv = t.val(x);
      NdArray& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * xv[i] * g[i];
    });
  }
  return o;
}

Var abs_value(Tape& t, Var x) {
  const NdArray& xv = t.val(x);
  NdArray out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(xv[i]);
  bool rg = t.needs_grad(x);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, o](Tape& t) {
      const NdArray& g = t.grad(o);
      const NdArray& xv = t.val(x);
      NdArray& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double s = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
        gx[i] += s * g[i];
      }
    });
  }
  return o;
}

Var relu(Tape& t, Var x) {
  const NdArray& xv = t.val(x);
  NdArray out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  bool rg = t.needs_grad(x);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, o](Tape& t) {
      const NdArray& g = t.grad(o);
      const NdArray& xv = t.val(x);
      NdArray& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > 0.0) gx[i] += g[i];
    });
  }
  return o;
}

Var leaky_relu(Tape& t, Var x, double slope) {
  const NdArray& xv = t.val(x);
  NdArray out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = xv[i] > 0.0 ? xv[i] : slope * xv[i];
  bool rg = t.needs_grad(x);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, o, slope](Tape& t) {
      const NdArray& g = t.grad(o);
      const NdArray& xv = t.val(x);
      NdArray& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += (xv[i] > 0.0 ? 1.0 : slope) * g[i];
    });
  }
  return o;
}

Var sigmoid(Tape& t, Var x) {
  const NdArray& xv = t.val(x);
  NdArray out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  bool rg = t.needs_grad(x);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, o](Tape& t) {
      const NdArray& g = t.grad(o);
      const NdArray& ov = t.val(o);
      NdArray& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += ov[i] * (1.0 - ov[i]) * g[i];
    });
  }
  return o;
}

Var log_clamped(Tape& t, Var x, double eps) {
  const NdArray& xv = t.val(x);
  NdArray out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::log(std::max(xv[i], eps));
  bool rg = t.needs_grad(x);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, o, eps](Tape& t) {
      const NdArray& g = t.grad(o);
      const NdArray& xv = t.val(x);
      NdArray& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > eps) gx[i] += g[i] / xv[i];
    });
  }
  return o;
}

Var reshape(Tape& t, Var x, std::vector<std::size_t> shape) {
  const NdArray& xv = t.val(x);
  if (NdArray::count(shape) != xv.size()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  NdArray out(std::move(shape),
              std::vector<double>(xv.data(), xv.data() + xv.size()));
  bool rg = t.needs_grad(x);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, o](Tape& t) {
      const NdArray& g = t.grad(o);
      NdArray& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return o;
}

NdArray softmax(const NdArray& x, std::size_t axis) {
  if (axis >= x.rank()) throw std::invalid_argument("softmax: bad axis");
  std::size_t n_axis = x.dim(axis);
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  std::size_t outer = x.size() / (n_axis * inner);
  NdArray out(x.shape());
  for (std::size_t ou = 0; ou < outer; ++ou) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = ou * n_axis * inner + in;
      double mx = -INFINITY;
      for (std::size_t c = 0; c < n_axis; ++c)
        mx = std::max(mx, x[base + c * inner]);
      double z = 0.0;
      for (std::size_t c = 0; c < n_axis; ++c)
        z += std::exp(x[base + c * inner] - mx);
      for (std::size_t c = 0; c < n_axis; ++c)
        out[base + c * inner] = std::exp(x[base + c * inner] - mx) / z;
    }
  }
  return out;
}

Var softmax_channels(Tape& t, Var x) {
  const NdArray& xv = t.val(x);
  if (xv.rank() < 2) {
    throw std::invalid_argument("softmax_channels: need rank >= 2, got " +
                                xv.shape_str());
  }
  NdArray out = softmax(xv, 1);
  bool rg = t.needs_grad(x);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, o](Tape& t) {
      const NdArray& g = t.grad(o);
      const NdArray& s = t.val(o);
      NdArray& gx = t.grad(x);
      std::size_t n_axis = s.dim(1);
      std::size_t inner = 1;
      for (std::size_t d = 2; d < s.rank(); ++d) inner *= s.dim(d);
      std::size_t outer = s.size() / (n_axis * inner);
      for (std::size_t ou = 0; ou < outer; ++ou) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = ou * n_axis * inner + in;
          double dot = 0.0;
          for (std::size_t c = 0; c < n_axis; ++c)
            dot += g[base + c * inner] * s[base + c * inner];
          for (std::size_t c = 0; c < n_axis; ++c) {
            const std::size_t k = base + c * inner;
            gx[k] += s[k] * (g[k] - dot);
          }
        }
      }
    });
  }
  return o;
}

Var maxpool1d(Tape& t, Var x, int k, int stride) {
  const NdArray& xv = t.val(x);
  if (xv.rank() != 3) {
    throw std::invalid_argument("maxpool1d: expected [B,C,L], got " +
                                xv.shape_str());
  }
  if (k <= 0 || stride <= 0) {
    throw std::invalid_argument("maxpool1d: kernel and stride must be > 0");
  }
  std::size_t B = xv.dim(0), C = xv.dim(1), L = xv.dim(2);
  if (L < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("maxpool1d: input length " +
                                std::to_string(L) + " < kernel " +
                                std::to_string(k));
  }
  std::size_t Lo = (L - k) / stride + 1;
  NdArray out({B, C, Lo});
  auto arg = std::make_shared<std::vector<std::size_t>>(B * C * Lo);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* row = xv.data() + (b * C + c) * L;
      for (std::size_t j = 0; j < Lo; ++j) {
        std::size_t best = j * stride;
        double bv = row[best];
        for (int d = 1; d < k; ++d) {
          std::size_t idx = j * stride + d;
          if (row[idx] > bv) {
            bv = row[idx];
            best = idx;
          }
        }
        out[(b * C + c) * Lo + j] = bv;
        (*arg)[(b * C + c) * Lo + j] = (b * C + c) * L + best;
      }
    }
  }
  bool rg = t.needs_grad(x);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, o, arg](Tape& t) {
      const NdArray& g = t.grad(o);
      NdArray& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*arg)[i]] += g[i];
    });
  }
  return o;
}

Var global_maxpool(Tape& t, Var x) {
  const NdArray& xv = t.val(x);
  if (xv.rank() != 3) {
    throw std::invalid_argument("global_maxpool: expected [B,C,L], got " +
                                xv.shape_str());
  }
  std::size_t B = xv.dim(0), C = xv.dim(1), L = xv.dim(2);
  NdArray out({B, C});
  auto arg = std::make_shared<std::vector<std::size_t>>(B * C);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* row = xv.data() + bc * L;
    std::size_t best = 0;
    for (std::size_t j = 1; j < L; ++j)
      if (row[j] > row[best]) best = j;
    out[bc] = row[best];
    (*arg)[bc] = bc * L + best;
  }
  bool rg = t.needs_grad(x);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, o, arg](Tape& t) {
      const NdArray& g = t.grad(o);
      NdArray& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*arg)[i]] += g[i];
    });
  }
  return o;
}

Var linear(Tape& t, Var x, Var w, Var b) {
  const NdArray &xv = t.val(x), &wv = t.val(w), &bv = t.val(b);
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1) {
    throw std::invalid_argument("linear: expected x[B,Ci], w[Co,Ci], b[Co]");
  }
  std::size_t B = xv.dim(0), Ci = xv.dim(1), Co = wv.dim(0);
  if (wv.dim(1) != Ci) {
    throw std::invalid_argument("linear: input axis Ci=" + std::to_string(Ci) +
                                " does not match weight Ci=" +
                                std::to_string(wv.dim(1)));
  }
  if (bv.dim(0) != Co) throw std::invalid_argument("linear: bias axis");
  NdArray out({B, Co});
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t co = 0; co < Co; ++co) {
      double s = bv[co];
      const double* xr = xv.data() + i * Ci;
      const double* wr = wv.data() + co * Ci;
      for (std::size_t ci = 0; ci < Ci; ++ci) s += xr[ci] * wr[ci];
      out[i * Co + co] = s;
    }
  }
  bool rg = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    t.set_backward(o, [x, w, b, o](Tape& t) {
      const NdArray& g = t.grad(o);
      const NdArray &xv = t.val(x), &wv = t.val(w);
      std::size_t B = xv.dim(0), Ci = xv.dim(1), Co = wv.dim(0);
      if (t.needs_grad(x)) {
        NdArray& gx = t.grad(x);
        for (std::size_t i = 0; i < B; ++i)
          for (std::size_t co = 0; co < Co; ++co) {
            double gv = g[i * Co + co];
            const double* wr = wv.data() + co * Ci;
            double* gxr = gx.data() + i * Ci;
            for (std::size_t ci = 0; ci < Ci; ++ci) gxr[ci] += gv * wr[ci];
          }
      }
      if (t.needs_grad(w)) {
        NdArray& gw = t.grad(w);
        for (std::size_t i = 0; i < B; ++i)
          for (std::size_t co = 0; co < Co; ++co) {
            double gv = g[i * Co + co];
            const double* xr = xv.data() + i * Ci;
            double* gwr = gw.data() + co * Ci;
            for (std::size_t ci = 0; ci < Ci; ++ci) gwr[ci] += gv * xr[ci];
          }
      }
      if (t.needs_grad(b)) {
        NdArray& gb = t.grad(b);
        for (std::size_t i = 0; i < B; ++i)
          for (std::size_t co = 0; co < Co; ++co) gb[co] += g[i * Co + co];
      }
    });
  }
  return o;
}

Var select_rows(Tape& t, Var x, std::vector<std::size_t> rows) {
  const NdArray& xv = t.val(x);
  if (xv.rank() < 1) throw std::invalid_argument("select_rows: rank 0 input");
  std::size_t N = xv.dim(0);
  std::size_t row_size = xv.size() / N;
  std::vector<std::size_t> shape = xv.shape();
  shape[0] = rows.size();
  NdArray out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= N) throw std::invalid_argument("select_rows: out of range");
    std::copy_n(xv.data() + rows[r] * row_size, row_size,
                out.data() + r * row_size);
  }
  bool rg = t.needs_grad(x);
  Var o = t.make(std::move(out), rg);
  if (rg) {
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(rows));
    t.set_backward(o, [x, o, idx](Tape& t) {
      const NdArray& g = t.grad(o);
      NdArray& gx = t.grad(x);
      std::size_t row_size = gx.size() / gx.dim(0);
      for (std::size_t r = 0; r < idx->size(); ++r) {
        const double* src = g.data() + r * row_size;
        double* dst = gx.data() + (*idx)[r] * row_size;
        for (std::size_t i = 0; i < row_size; ++i) dst[i] += src[i];
      }
    });
  }
  return o;
}

}  // namespace tubemesh::nn
