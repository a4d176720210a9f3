// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "tape/core/error.hpp"
#include "tape/core/mask.hpp"
#include "tape/core/tensor.hpp"

namespace tape {

// ---------------------------------------------------------------- tape core
//
// Reverse-mode autodiff over a recorded tape. Ops compute values eagerly and,
// when any input requires grad, push one backward closure onto the owning
// tape. Creation order is a topological order, so backward() simply walks the
// closures in reverse. One tape owns one training step's graph.

template <class S>
class Tape;

template <class S>
struct VarData {
  Ten<S> val;
  Ten<S> grad;  // allocated on first accumulation; empty means "all zero"
  bool requires_grad = false;
  Tape<S>* tape = nullptr;

  Ten<S>& grad_buf() {
    if (grad.data.empty()) grad = Ten<S>::zeros(val.shape);
    return grad;
  }
};

template <class S>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<VarData<S>> d) : d_(std::move(d)) {}

  bool defined() const { return static_cast<bool>(d_); }
  const Ten<S>& val() const { return d_->val; }
  Ten<S>& val() { return d_->val; }
  const Ten<S>& grad() const { return d_->grad; }
  bool requires_grad() const { return d_ && d_->requires_grad; }
  const std::vector<int>& shape() const { return d_->val.shape; }
  std::int64_t numel() const { return d_->val.numel(); }

  std::shared_ptr<VarData<S>> data_ptr() const { return d_; }
  VarData<S>* raw() const { return d_.get(); }

  // Value copy with no tape attachment.
  Var detached() const {
    auto nd = std::make_shared<VarData<S>>();
    nd->val = d_->val;
    return Var(nd);
  }

 private:
  std::shared_ptr<VarData<S>> d_;
};

template <class S>
class Tape {
 public:
  Var<S> leaf(Ten<S> value, bool requires_grad = true) {
    auto d = std::make_shared<VarData<S>>();
    d->val = std::move(value);
    d->requires_grad = requires_grad;
    d->tape = this;
    return Var<S>(std::move(d));
  }

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse
  // creation order. The loss must be a scalar recorded on this tape.
  void backward(const Var<S>& loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw ShapeMismatch("backward: loss must be a defined scalar");
    if (loss.raw()->tape != this)
      throw Error("backward: loss does not belong to this tape");
    if (ran_) throw Error("backward: tape already consumed");
    ran_ = true;
    loss.raw()->grad_buf().data[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool ran_ = false;
};

// Constant (no tape, no grad). Usable as input to any op.
template <class S>
Var<S> constant(Ten<S> value) {
  auto d = std::make_shared<VarData<S>>();
  d->val = std::move(value);
  return Var<S>(std::move(d));
}

namespace detail {

template <class S>
Tape<S>* resolve_tape(std::initializer_list<const Var<S>*> ins) {
  Tape<S>* t = nullptr;
  for (const Var<S>* v : ins) {
    if (!v->defined()) throw Error("op: undefined input var");
    Tape<S>* vt = v->raw()->tape;
    if (!vt) continue;
    if (t && vt != t) throw Error("op: inputs recorded on different tapes");
    t = vt;
  }
  return t;
}

template <class S>
bool any_requires(std::initializer_list<const Var<S>*> ins) {
  for (const Var<S>* v : ins)
    if (v->requires_grad()) return true;
  return false;
}

// Makes the output var; attaches it to the tape iff grad must flow.
template <class S>
Var<S> make_out(Ten<S> val, Tape<S>* tape, bool needs_grad) {
  auto d = std::make_shared<VarData<S>>();
  d->val = std::move(val);
  d->requires_grad = needs_grad && tape != nullptr;
  d->tape = d->requires_grad ? tape : nullptr;
  return Var<S>(std::move(d));
}

template <class S>
bool grad_flowed(const std::shared_ptr<VarData<S>>& out) {
  return !out->grad.data.empty();
}

}  // namespace detail

// ------------------------------------------------------------- basic algebra

template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  Tape<S>* tp = detail::resolve_tape<S>({&a, &b});
  const int n = a.val().rows(), k = a.val().cols();
  const int k2 = b.val().rows(), m = b.val().cols();
  if (k != k2)
    throw ShapeMismatch("matmul: inner dims differ " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  Ten<S> out({n, m});
  out.mat().noalias() = a.val().mat(n, k) * b.val().mat(k, m);
  bool req = detail::any_requires<S>({&a, &b});
  Var<S> o = detail::make_out(std::move(out), tp, req);
  if (o.requires_grad()) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), od = o.data_ptr();
    bool need_a = a.requires_grad(), need_b = b.requires_grad();
    tp->record([ad, bd, od, n, k, m, need_a, need_b] {
      if (!detail::grad_flowed(od)) return;
      auto dO = od->grad.mat(n, m);
      if (need_a) ad->grad_buf().mat(n, k).noalias() += dO * bd->val.mat(k, m).transpose();
      if (need_b) bd->grad_buf().mat(k, m).noalias() += ad->val.mat(n, k).transpose() * dO;
    });
  }
  return o;
}

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  Tape<S>* tp = detail::resolve_tape<S>({&a, &b});
  if (!a.val().same_shape(b.val()))
    throw ShapeMismatch("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  Ten<S> out = a.val();
  out.mat(1, static_cast<int>(out.numel())) +=
      b.val().mat(1, static_cast<int>(out.numel()));
  Var<S> o = detail::make_out(std::move(out), tp, detail::any_requires<S>({&a, &b}));
  if (o.requires_grad()) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), od = o.data_ptr();
    bool na = a.requires_grad(), nb = b.requires_grad();
    tp->record([ad, bd, od, na, nb] {
      if (!detail::grad_flowed(od)) return;
      const int n = static_cast<int>(od->val.numel());
      if (na) ad->grad_buf().mat(1, n) += od->grad.mat(1, n);
      if (nb) bd->grad_buf().mat(1, n) += od->grad.mat(1, n);
    });
  }
  return o;
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  Tape<S>* tp = detail::resolve_tape<S>({&a, &b});
  if (!a.val().same_shape(b.val()))
    throw ShapeMismatch("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  Ten<S> out = a.val();
  out.mat(1, static_cast<int>(out.numel())) -=
      b.val().mat(1, static_cast<int>(out.numel()));
  Var<S> o = detail::make_out(std::move(out), tp, detail::any_requires<S>({&a, &b}));
  if (o.requires_grad()) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), od = o.data_ptr();
    bool na = a.requires_grad(), nb = b.requires_grad();
    tp->record([ad, bd, od, na, nb] {
      if (!detail::grad_flowed(od)) return;
      const int n = static_cast<int>(od->val.numel());
      if (na) ad->grad_buf().mat(1, n) += od->grad.mat(1, n);
      if (nb) bd->grad_buf().mat(1, n) -= od->grad.mat(1, n);
    });
  }
  return o;
}

template <class S>
Var<S> ewmul(const Var<S>& a, const Var<S>& b) {
  Tape<S>* tp = detail::resolve_tape<S>({&a, &b});
  if (!a.val().same_shape(b.val()))
    throw ShapeMismatch("ewmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  const int n = static_cast<int>(a.numel());
  Ten<S> out = a.val();
  out.mat(1, n).array() *= b.val().mat(1, n).array();
  Var<S> o = detail::make_out(std::move(out), tp, detail::any_requires<S>({&a, &b}));
  if (o.requires_grad()) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), od = o.data_ptr();
    bool na = a.requires_grad(), nb = b.requires_grad();
    tp->record([ad, bd, od, na, nb, n] {
      if (!detail::grad_flowed(od)) return;
      auto dO = od->grad.mat(1, n).array();
      if (na) ad->grad_buf().mat(1, n).array() += dO * bd->val.mat(1, n).array();
      if (nb) bd->grad_buf().mat(1, n).array() += dO * ad->val.mat(1, n).array();
    });
  }
  return o;
}

// out = alpha * a + beta, elementwise with scalar constants.
template <class S>
Var<S> affine(const Var<S>& a, S alpha, S beta) {
  Tape<S>* tp = detail::resolve_tape<S>({&a});
  const int n = static_cast<int>(a.numel());
  Ten<S> out = a.val();
  out.mat(1, n).array() = out.mat(1, n).array() * alpha + beta;
  Var<S> o = detail::make_out(std::move(out), tp, a.requires_grad());
  if (o.requires_grad()) {
    auto ad = a.data_ptr();
    auto od = o.data_ptr();
    tp->record([ad, od, alpha, n] {
      if (!detail::grad_flowed(od)) return;
      ad->grad_buf().mat(1, n) += od->grad.mat(1, n) * alpha;
    });
  }
  return o;
}

template <class S>
Var<S> scale(const Var<S>& a, S alpha) {
  return affine(a, alpha, S(0));
}

// ----------------------------------------------------- row/vector structure

// Adds vector v (shape [d]) to rows [row0, row0+nrows) of x (shape [n, d]).
template <class S>
Var<S> add_vec_rows(const Var<S>& x, const Var<S>& v, int row0, int nrows) {
  Tape<S>* tp = detail::resolve_tape<S>({&x, &v});
  const int n = x.val().rows(), d = x.val().cols();
  if (v.numel() != d) throw ShapeMismatch("add_vec_rows: vector length != cols");
  if (row0 < 0 || nrows < 0 || row0 + nrows > n)
    throw ShapeMismatch("add_vec_rows: row range out of bounds");
  Ten<S> out = x.val();
  out.mat(n, d).middleRows(row0, nrows).rowwise() +=
      v.val().mat(1, d).row(0);
  Var<S> o = detail::make_out(std::move(out), tp, detail::any_requires<S>({&x, &v}));
  if (o.requires_grad()) {
    auto xd = x.data_ptr(), vd = v.data_ptr(), od = o.data_ptr();
    bool nx = x.requires_grad(), nv = v.requires_grad();
    tp->record([xd, vd, od, row0, nrows, n, d, nx, nv] {
      if (!detail::grad_flowed(od)) return;
      auto dO = od->grad.mat(n, d);
      if (nx) xd->grad_buf().mat(n, d) += dO;
      if (nv)
        vd->grad_buf().mat(1, d).row(0) +=
            dO.middleRows(row0, nrows).colwise().sum();
    });
  }
  return o;
}

// Adds bias vector b (shape [d]) to every row.
template <class S>
Var<S> add_bias(const Var<S>& x, const Var<S>& b) {
  return add_vec_rows(x, b, 0, x.val().rows());
}

template <class S>
Var<S> concat_rows(std::initializer_list<Var<S>> parts) {
  return concat_rows(std::vector<Var<S>>(parts));
}

template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no parts");
  std::vector<const Var<S>*> ptrs;
  int d = parts[0].val().cols(), total = 0;
  for (const auto& p : parts) {
    if (p.val().cols() != d) throw ShapeMismatch("concat_rows: column mismatch");
    total += p.val().rows();
    ptrs.push_back(&p);
  }
  Tape<S>* tp = nullptr;
  bool req = false;
  for (const auto& p : parts) {
    Tape<S>* pt = p.raw()->tape;
    if (pt) {
      if (tp && tp != pt) throw Error("concat_rows: inputs on different tapes");
      tp = pt;
    }
    req = req || p.requires_grad();
  }
  Ten<S> out({total, d});
  int at = 0;
  for (const auto& p : parts) {
    const int r = p.val().rows();
    out.mat().middleRows(at, r) = p.val().mat(r, d);
    at += r;
  }
  Var<S> o = detail::make_out(std::move(out), tp, req);
  if (o.requires_grad()) {
    std::vector<std::shared_ptr<VarData<S>>> ins;
    for (const auto& p : parts) ins.push_back(p.data_ptr());
    auto od = o.data_ptr();
    tp->record([ins, od, total, d] {
      if (!detail::grad_flowed(od)) return;
      auto dO = od->grad.mat(total, d);
      int at = 0;
      for (auto& in : ins) {
        const int r = in->val.rows();
        if (in->requires_grad) in->grad_buf().mat(r, d) += dO.middleRows(at, r);
        at += r;
      }
    });
  }
  return o;
}

template <class S>
Var<S> slice_rows(const Var<S>& x, int row0, int nrows) {
  Tape<S>* tp = detail::resolve_tape<S>({&x});
  const int n = x.val().rows(), d = x.val().cols();
  if (row0 < 0 || nrows <= 0 || row0 + nrows > n)
    throw ShapeMismatch("slice_rows: range out of bounds");
  Ten<S> out({nrows, d});
  out.mat() = x.val().mat(n, d).middleRows(row0, nrows);
  Var<S> o = detail::make_out(std::move(out), tp, x.requires_grad());
  if (o.requires_grad()) {
    auto xd = x.data_ptr();
    auto od = o.data_ptr();
    tp->record([xd, od, row0, nrows, n, d] {
      if (!detail::grad_flowed(od)) return;
      xd->grad_buf().mat(n, d).middleRows(row0, nrows) += od->grad.mat(nrows, d);
    });
  }
  return o;
}

// out[i, :] = x[idx[i], :]. Backward scatter-adds into the gathered rows.
template <class S>
Var<S> gather_rows(const Var<S>& x, std::vector<int> idx) {
  Tape<S>* tp = detail::resolve_tape<S>({&x});
  const int n = x.val().rows(), d = x.val().cols();
  const int m = static_cast<int>(idx.size());
  if (m == 0) throw ShapeMismatch("gather_rows: empty index list");
  for (int i : idx)
    if (i < 0 || i >= n) throw ShapeMismatch("gather_rows: index out of range");
  Ten<S> out({m, d});
  for (int i = 0; i < m; ++i) out.mat().row(i) = x.val().mat(n, d).row(idx[i]);
  Var<S> o = detail::make_out(std::move(out), tp, x.requires_grad());
  if (o.requires_grad()) {
    auto xd = x.data_ptr();
    auto od = o.data_ptr();
    tp->record([xd, od, idx = std::move(idx), n, d, m] {
      if (!detail::grad_flowed(od)) return;
      auto dO = od->grad.mat(m, d);
      auto dX = xd->grad_buf().mat(n, d);
      for (int i = 0; i < m; ++i) dX.row(idx[i]) += dO.row(i);
    });
  }
  return o;
}

// Places the rows of x into an n-row matrix at the given (strictly
// increasing) row indices; every other row is zero. Inverse of gather_rows
// over the same index list, which is exactly its backward.
template <class S>
Var<S> scatter_rows(const Var<S>& x, std::vector<int> idx, int n) {
  Tape<S>* tp = detail::resolve_tape<S>({&x});
  const int m = x.val().rows(), d = x.val().cols();
  if (static_cast<int>(idx.size()) != m)
    throw ShapeMismatch("scatter_rows: index count must equal row count");
  for (int i = 0; i < m; ++i) {
    if (idx[i] < 0 || idx[i] >= n) throw ShapeMismatch("scatter_rows: index out of range");
    if (i > 0 && idx[i] <= idx[i - 1])
      throw ShapeMismatch("scatter_rows: indices must be strictly increasing");
  }
  Ten<S> out({n, d});
  for (int i = 0; i < m; ++i) out.mat().row(idx[i]) = x.val().mat(m, d).row(i);
  Var<S> o = detail::make_out(std::move(out), tp, x.requires_grad());
  if (o.requires_grad()) {
    auto xd = x.data_ptr();
    auto od = o.data_ptr();
    tp->record([xd, od, idx = std::move(idx), n, d, m] {
      if (!detail::grad_flowed(od)) return;
      auto dO = od->grad.mat(n, d);
      auto dX = xd->grad_buf().mat(m, d);
      for (int i = 0; i < m; ++i) dX.row(i) += dO.row(idx[i]);
    });
  }
  return o;
}

// Bijective element permutation: out.data[i] = x.data[(*perm)[i]]. Used for
// patchify/unpatchify, which are pure (inverse) index maps. The map is shared
// so the backward closure co-owns it.
using IndexMap = std::shared_ptr<const std::vector<std::int64_t>>;

template <class S>
Var<S> permute(const Var<S>& x, const IndexMap& perm, std::vector<int> out_shape) {
  Tape<S>* tp = detail::resolve_tape<S>({&x});
  if (!perm || static_cast<std::int64_t>(perm->size()) != x.numel() ||
      Ten<S>::count(out_shape) != x.numel())
    throw ShapeMismatch("permute: index map must cover the tensor exactly");
  Ten<S> out(std::move(out_shape));
  for (std::size_t i = 0; i < perm->size(); ++i) out.data[i] = x.val().data[(*perm)[i]];
  Var<S> o = detail::make_out(std::move(out), tp, x.requires_grad());
  if (o.requires_grad()) {
    auto xd = x.data_ptr();
    auto od = o.data_ptr();
    tp->record([xd, od, perm] {
      if (!detail::grad_flowed(od)) return;
      auto& g = xd->grad_buf();
      for (std::size_t i = 0; i < perm->size(); ++i)
        g.data[(*perm)[i]] += od->grad.data[i];
    });
  }
  return o;
}

// ------------------------------------------------------------ nonlinearities

// tanh-form gelu. Computed with scalar libm calls in a fixed element order:
// SIMD tanh approximations round differently from tanhf/tanh, and which
// elements fall into the vectorized body would depend on the buffer address,
// so a vectorized evaluation is not reproducible across allocations.
template <class S>
Var<S> gelu(const Var<S>& x) {
  Tape<S>* tp = detail::resolve_tape<S>({&x});
  const int n = static_cast<int>(x.numel());
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  const S a = S(0.044715);
  Ten<S> out = x.val();
  for (auto& v : out.data) {
    const S t = std::tanh(c * (v + a * v * v * v));
    v = S(0.5) * v * (S(1) + t);
  }
  Var<S> o = detail::make_out(std::move(out), tp, x.requires_grad());
  if (o.requires_grad()) {
    auto xd = x.data_ptr();
    auto od = o.data_ptr();
    tp->record([xd, od, n, c, a] {
      if (!detail::grad_flowed(od)) return;
      auto& g = xd->grad_buf();
      for (int i = 0; i < n; ++i) {
        const S v = xd->val.data[i];
        const S t = std::tanh(c * (v + a * v * v * v));
        const S dudx = c * (S(1) + S(3) * a * v * v);
        g.data[i] += od->grad.data[i] *
                     (S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * dudx);
      }
    });
  }
  return o;
}

template <class S>
Var<S> leaky_relu(const Var<S>& x, S slope) {
  Tape<S>* tp = detail::resolve_tape<S>({&x});
  const int n = static_cast<int>(x.numel());
  Ten<S> out = x.val();
  for (auto& v : out.data) v = v > S(0) ? v : slope * v;
  Var<S> o = detail::make_out(std::move(out), tp, x.requires_grad());
  if (o.requires_grad()) {
    auto xd = x.data_ptr();
    auto od = o.data_ptr();
    tp->record([xd, od, n, slope] {
      if (!detail::grad_flowed(od)) return;
      auto& g = xd->grad_buf();
      for (int i = 0; i < n; ++i)
        g.data[i] += od->grad.data[i] * (xd->val.data[i] > S(0) ? S(1) : slope);
    });
  }
  return o;
}

template <class S>
Var<S> relu(const Var<S>& x) {
  return leaky_relu(x, S(0));
}

// -------------------------------------------------------------- layer norm

// Row-wise layer normalization with population variance and eps = 1e-5:
// y = (x - mean) / sqrt(var + eps) * gain + bias.
// Row statistics accumulate in double via fixed-order scalar loops so the
// result never depends on where a buffer happened to be allocated.
template <class S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias,
                  S eps = S(1e-5)) {
  Tape<S>* tp = detail::resolve_tape<S>({&x, &gain, &bias});
  const int n = x.val().rows(), d = x.val().cols();
  if (gain.numel() != d || bias.numel() != d)
    throw ShapeMismatch("layer_norm: gain/bias length != cols");
  Ten<S> out({n, d});
  auto xhat = std::make_shared<Ten<S>>(std::vector<int>{n, d});
  auto inv_std = std::make_shared<Ten<S>>(std::vector<int>{n, 1});
  {
    const S* X = x.val().data.data();
    const S* G = gain.val().data.data();
    const S* B = bias.val().data.data();
    S* H = xhat->data.data();
    S* O = out.data.data();
    for (int i = 0; i < n; ++i) {
      const S* xr = X + static_cast<std::size_t>(i) * d;
      double mu = 0;
      for (int j = 0; j < d; ++j) mu += static_cast<double>(xr[j]);
      mu /= d;
      double var = 0;
      for (int j = 0; j < d; ++j) {
        const double c = static_cast<double>(xr[j]) - mu;
        var += c * c;
      }
      var /= d;
      const S inv = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const S mu_s = static_cast<S>(mu);
      inv_std->data[i] = inv;
      S* hr = H + static_cast<std::size_t>(i) * d;
      S* orow = O + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) {
        hr[j] = (xr[j] - mu_s) * inv;
        orow[j] = hr[j] * G[j] + B[j];
      }
    }
  }
  bool req = detail::any_requires<S>({&x, &gain, &bias});
  Var<S> o = detail::make_out(std::move(out), tp, req);
  if (o.requires_grad()) {
    auto xd = x.data_ptr(), gd = gain.data_ptr(), bd = bias.data_ptr();
    auto od = o.data_ptr();
    bool nx = x.requires_grad(), ng = gain.requires_grad(), nb = bias.requires_grad();
    tp->record([xd, gd, bd, od, xhat, inv_std, n, d, nx, ng, nb] {
      if (!detail::grad_flowed(od)) return;
      const S* dY = od->grad.data.data();
      const S* H = xhat->data.data();
      const S* G = gd->val.data.data();
      if (ng) {
        S* gg = gd->grad_buf().data.data();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j)
            gg[j] += dY[static_cast<std::size_t>(i) * d + j] *
                     H[static_cast<std::size_t>(i) * d + j];
      }
      if (nb) {
        S* gb = bd->grad_buf().data.data();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j) gb[j] += dY[static_cast<std::size_t>(i) * d + j];
      }
      if (nx) {
        S* dX = xd->grad_buf().data.data();
        std::vector<S> dxhat(static_cast<std::size_t>(d));
        for (int i = 0; i < n; ++i) {
          const S* dyr = dY + static_cast<std::size_t>(i) * d;
          const S* hr = H + static_cast<std::size_t>(i) * d;
          double m1 = 0, m2 = 0;
          for (int j = 0; j < d; ++j) {
            dxhat[static_cast<std::size_t>(j)] = dyr[j] * G[j];
            m1 += static_cast<double>(dxhat[static_cast<std::size_t>(j)]);
            m2 += static_cast<double>(dxhat[static_cast<std::size_t>(j)]) *
                  static_cast<double>(hr[j]);
          }
          m1 /= d;
          m2 /= d;
          const S m1s = static_cast<S>(m1), m2s = static_cast<S>(m2);
          S* dxr = dX + static_cast<std::size_t>(i) * d;
          for (int j = 0; j < d; ++j)
            dxr[j] += inv_std->data[i] * (dxhat[static_cast<std::size_t>(j)] - m1s - hr[j] * m2s);
        }
      }
    });
  }
  return o;
}

// --------------------------------------------------------------- reductions

template <class S>
Var<S> mean_all(const Var<S>& x) {
  Tape<S>* tp = detail::resolve_tape<S>({&x});
  const std::int64_t n = x.numel();
  if (n == 0) throw ShapeMismatch("mean_all: empty tensor");
  // Accumulate in double so metric-sized reductions stay accurate.
  double acc = 0;
  for (const S& v : x.val().data) acc += static_cast<double>(v);
  Ten<S> out({1});
  out.data[0] = static_cast<S>(acc / static_cast<double>(n));
  Var<S> o = detail::make_out(std::move(out), tp, x.requires_grad());
  if (o.requires_grad()) {
    auto xd = x.data_ptr();
    auto od = o.data_ptr();
    tp->record([xd, od, n] {
      if (!detail::grad_flowed(od)) return;
      const S g = od->grad.data[0] / static_cast<S>(n);
      auto& buf = xd->grad_buf();
      for (auto& v : buf.data) v += g;
    });
  }
  return o;
}

// mean((x - target)^2) against a constant target.
template <class S>
Var<S> mse_const(const Var<S>& x, const Ten<S>& target) {
  Tape<S>* tp = detail::resolve_tape<S>({&x});
  if (!x.val().same_shape(target))
    throw ShapeMismatch("mse_const: target shape mismatch");
  const std::int64_t n = x.numel();
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double dv = static_cast<double>(x.val().data[i]) - static_cast<double>(target.data[i]);
    acc += dv * dv;
  }
  Ten<S> out({1});
  out.data[0] = static_cast<S>(acc / static_cast<double>(n));
  Var<S> o = detail::make_out(std::move(out), tp, x.requires_grad());
  if (o.requires_grad()) {
    auto xd = x.data_ptr();
    auto od = o.data_ptr();
    auto tgt = std::make_shared<Ten<S>>(target);
    tp->record([xd, od, tgt, n] {
      if (!detail::grad_flowed(od)) return;
      const S g = od->grad.data[0] * S(2) / static_cast<S>(n);
      auto& buf = xd->grad_buf();
      for (std::int64_t i = 0; i < n; ++i)
        buf.data[i] += g * (xd->val.data[i] - tgt->data[i]);
    });
  }
  return o;
}

// mean(w * x) against a constant weight tensor (the distribution-matching
// surrogate: its gradient w.r.t. x is w / numel).
template <class S>
Var<S> dot_mean_const(const Var<S>& x, const Ten<S>& w) {
  Tape<S>* tp = detail::resolve_tape<S>({&x});
  if (!x.val().same_shape(w)) throw ShapeMismatch("dot_mean_const: shape mismatch");
  const std::int64_t n = x.numel();
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i)
    acc += static_cast<double>(x.val().data[i]) * static_cast<double>(w.data[i]);
  Ten<S> out({1});
  out.data[0] = static_cast<S>(acc / static_cast<double>(n));
  Var<S> o = detail::make_out(std::move(out), tp, x.requires_grad());
  if (o.requires_grad()) {
    auto xd = x.data_ptr();
    auto od = o.data_ptr();
    auto wk = std::make_shared<Ten<S>>(w);
    tp->record([xd, od, wk, n] {
      if (!detail::grad_flowed(od)) return;
      const S g = od->grad.data[0] / static_cast<S>(n);
      auto& buf = xd->grad_buf();
      for (std::int64_t i = 0; i < n; ++i) buf.data[i] += g * wk->data[i];
    });
  }
  return o;
}

// ---------------------------------------------------------- masked attention

namespace detail {

// Masked softmax over logits (in place): a numerically shifted exp-normalize
// per row over the visible entries; masked entries are written as exact +0
// without touching exp at all. Scalar fixed-order arithmetic throughout --
// vectorized exp kernels disagree with expf at the bit level (and return a
// denormal for -inf on some instruction sets), and reduction order must not
// depend on buffer addresses.
template <class S>
void masked_softmax_rows(Eigen::Map<EMat<S>> logits, const std::vector<S>& additive) {
  const int n = static_cast<int>(logits.rows());
  const int m = static_cast<int>(logits.cols());
  for (int i = 0; i < n; ++i) {
    const S* mrow = additive.data() + static_cast<std::size_t>(i) * m;
    S mx = -std::numeric_limits<S>::infinity();
    for (int j = 0; j < m; ++j)
      if (mrow[j] == S(0) && logits(i, j) > mx) mx = logits(i, j);
    double sum = 0;
    for (int j = 0; j < m; ++j) {
      const S e = mrow[j] == S(0) ? std::exp(logits(i, j) - mx) : S(0);
      logits(i, j) = e;
      sum += static_cast<double>(e);
    }
    const S ssum = static_cast<S>(sum);
    for (int j = 0; j < m; ++j)
      if (mrow[j] == S(0)) logits(i, j) /= ssum;
  }
}

}  // namespace detail

// Multi-head scaled dot-product attention with an exclusion mask.
//   q: [n, d], k: [m, d], v: [m, d]; d % heads == 0; mask: n x m.
// Per head h: S = Q_h K_h^T / sqrt(d/heads); masked entries are excluded from
// the softmax (exact zeros), out_h = softmax(S) V_h. Heads are concatenated.
template <class S>
Var<S> masked_attention_mh(const Var<S>& q, const Var<S>& k, const Var<S>& v,
                           const AttentionMask& mask, int heads) {
  Tape<S>* tp = detail::resolve_tape<S>({&q, &k, &v});
  const int n = q.val().rows(), d = q.val().cols();
  const int m = k.val().rows();
  if (k.val().cols() != d || v.val().rows() != m || v.val().cols() != d)
    throw ShapeMismatch("masked_attention: q/k/v shape mismatch");
  if (heads <= 0 || d % heads != 0)
    throw ShapeMismatch("masked_attention: heads must divide feature dim");
  if (mask.rows() != n || mask.cols() != m)
    throw ShapeMismatch("masked_attention: mask must be n x m");
  mask.ensure_validated();

  const int hd = d / heads;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(hd));
  const std::vector<S>& additive = mask.template additive<S>();

  bool req = detail::any_requires<S>({&q, &k, &v});
  bool keep = req && tp != nullptr;

  Ten<S> out({n, d});
  // Per-head softmax weight matrices, retained only when grad must flow.
  auto weights = std::make_shared<std::vector<Ten<S>>>();
  if (keep) weights->reserve(heads);
  {
    Ten<S> w({n, m});
    for (int h = 0; h < heads; ++h) {
      auto Qh = q.val().mat(n, d).middleCols(h * hd, hd);
      auto Kh = k.val().mat(m, d).middleCols(h * hd, hd);
      auto Vh = v.val().mat(m, d).middleCols(h * hd, hd);
      w.mat().noalias() = Qh * Kh.transpose();
      w.mat() *= inv_sqrt;
      detail::masked_softmax_rows<S>(w.mat(), additive);
      out.mat().middleCols(h * hd, hd).noalias() = w.mat() * Vh;
      if (keep) weights->push_back(w);  // copy: reused next head
    }
  }
  Var<S> o = detail::make_out(std::move(out), tp, req);
  if (o.requires_grad()) {
    auto qd = q.data_ptr(), kd = k.data_ptr(), vd = v.data_ptr();
    auto od = o.data_ptr();
    bool nq = q.requires_grad(), nk = k.requires_grad(), nv = v.requires_grad();
    tp->record([qd, kd, vd, od, weights, n, m, d, hd, heads, inv_sqrt, nq, nk, nv] {
      if (!detail::grad_flowed(od)) return;
      auto dO = od->grad.mat(n, d);
      EMat<S> dW(n, m), dS(n, m);
      for (int h = 0; h < heads; ++h) {
        auto& W = (*weights)[h];
        auto Qh = qd->val.mat(n, d).middleCols(h * hd, hd);
        auto Kh = kd->val.mat(m, d).middleCols(h * hd, hd);
        auto Vh = vd->val.mat(m, d).middleCols(h * hd, hd);
        auto dOh = dO.middleCols(h * hd, hd);
        if (nv)
          vd->grad_buf().mat(m, d).middleCols(h * hd, hd).noalias() +=
              W.mat().transpose() * dOh;
        if (nq || nk) {
          dW.noalias() = dOh * Vh.transpose();
          // softmax backward: dS = W o (dW - rowsum(dW o W)); masked entries
          // have W == 0, so dS is exactly 0 there. The row reduction runs as
          // a fixed-order scalar loop for address-independent results.
          auto Wm = W.mat();
          for (int i = 0; i < n; ++i) {
            double rd = 0;
            for (int j = 0; j < m; ++j)
              rd += static_cast<double>(dW(i, j)) * static_cast<double>(Wm(i, j));
            const S rds = static_cast<S>(rd);
            for (int j = 0; j < m; ++j) dS(i, j) = Wm(i, j) * (dW(i, j) - rds) * inv_sqrt;
          }
          if (nq) qd->grad_buf().mat(n, d).middleCols(h * hd, hd).noalias() += dS * Kh;
          if (nk)
            kd->grad_buf().mat(m, d).middleCols(h * hd, hd).noalias() +=
                dS.transpose() * Qh;
        }
        W.data.clear();  // free as we go; each head's weights used once
        W.data.shrink_to_fit();
      }
    });
  }
  return o;
}

// Single-head form: logits are q_i . k_j / sqrt(d) with d the feature dim.
template <class S>
Var<S> masked_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v,
                        const AttentionMask& mask) {
  return masked_attention_mh(q, k, v, mask, 1);
}

// Probe: the softmax weight matrix of head `h`, computed with the production
// kernel but outside any tape. For tests and invariant probes.
template <class S>
Ten<S> attention_weights(const Ten<S>& q, const Ten<S>& k, const AttentionMask& mask,
                         int heads = 1, int head = 0) {
  const int n = q.rows(), d = q.cols(), m = k.rows();
  if (k.cols() != d || heads <= 0 || d % heads != 0 || head < 0 || head >= heads)
    throw ShapeMismatch("attention_weights: bad shapes");
  if (mask.rows() != n || mask.cols() != m)
    throw ShapeMismatch("attention_weights: mask must be n x m");
  mask.ensure_validated();
  const int hd = d / heads;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(hd));
  Ten<S> w({n, m});
  w.mat().noalias() = q.mat(n, d).middleCols(head * hd, hd) *
                      k.mat(m, d).middleCols(head * hd, hd).transpose();
  w.mat() *= inv_sqrt;
  detail::masked_softmax_rows<S>(w.mat(), mask.template additive<S>());
  return w;
}

}  // namespace tape
