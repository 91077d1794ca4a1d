#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <vector>

#include "dits/tensor.hpp"

// Differentiable primitives over TensorT. Free functions in Eigen style:
// each computes the exact forward value and, when an input participates in a
// graph, records a backward rule that accumulates (+=) into the input
// gradients. Matrix products are delegated to Eigen; everything else is
// plain strided loops.

namespace dits {

namespace detail {

template <class S>
GraphT<S>* merge_graph(const char* op,
                       std::initializer_list<const TensorT<S>*> ins) {
  GraphT<S>* g = nullptr;
  for (const auto* t : ins) {
    if (!t->attached()) continue;
    if (g && g != t->graph_ptr())
      throw Error(std::string(op) + ": operands belong to different graphs");
    g = t->graph_ptr();
  }
  return g;
}

struct BcastPlan {
  Shape out;
  std::vector<std::size_t> sa, sb;  // stride per out axis; 0 where broadcast
};

inline BcastPlan broadcast_plan(const char* op, const Shape& a,
                                const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  BcastPlan plan;
  plan.out.assign(r, 1);
  plan.sa.assign(r, 0);
  plan.sb.assign(r, 0);
  const auto sta = row_major_strides(a);
  const auto stb = row_major_strides(b);
  for (std::size_t d = 0; d < r; ++d) {
    const bool ha = d >= r - a.size();
    const bool hb = d >= r - b.size();
    const std::size_t ea = ha ? a[d - (r - a.size())] : 1;
    const std::size_t eb = hb ? b[d - (r - b.size())] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw Error(std::string(op) + ": shapes not broadcastable: " +
                  shape_str(a) + " vs " + shape_str(b));
    // a singleton stretches to the other extent, including the empty case
    plan.out[d] = ea == eb ? ea : (ea == 1 ? eb : ea);
    if (ha && ea == plan.out[d]) plan.sa[d] = sta[d - (r - a.size())];
    if (hb && eb == plan.out[d]) plan.sb[d] = stb[d - (r - b.size())];
    if (ea == 1 && plan.out[d] > 1 && ha) plan.sa[d] = 0;
    if (eb == 1 && plan.out[d] > 1 && hb) plan.sb[d] = 0;
  }
  return plan;
}

/// Odometer walk over `dims`, tracking offsets into two strided operands.
template <class F>
void for_each_bcast(const Shape& dims, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t n = shape_numel(dims);
  if (n == 0) return;
  const std::size_t r = dims.size();
  if (r == 0) {
    f(std::size_t(0), std::size_t(0), std::size_t(0));
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < dims[d]) break;
      idx[d] = 0;
      ia -= sa[d] * dims[d];
      ib -= sb[d] * dims[d];
    }
  }
}

enum class BinKind { Add, Sub, Mul };

template <class S>
TensorT<S> binary_op(const char* name, BinKind kind, const TensorT<S>& a,
                     const TensorT<S>& b) {
  const BcastPlan plan = broadcast_plan(name, a.shape(), b.shape());
  TensorT<S> out(plan.out);
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  switch (kind) {
    case BinKind::Add:
      for_each_bcast(plan.out, plan.sa, plan.sb,
                     [&](auto o, auto ia, auto ib) { po[o] = pa[ia] + pb[ib]; });
      break;
    case BinKind::Sub:
      for_each_bcast(plan.out, plan.sa, plan.sb,
                     [&](auto o, auto ia, auto ib) { po[o] = pa[ia] - pb[ib]; });
      break;
    case BinKind::Mul:
      for_each_bcast(plan.out, plan.sa, plan.sb,
                     [&](auto o, auto ia, auto ib) { po[o] = pa[ia] * pb[ib]; });
      break;
  }
  if (GraphT<S>* g = merge_graph<S>(name, {&a, &b})) {
    const int id = g->reserve(out.size());
    g->set_backward(id, [a, b, kind, plan](GraphT<S>& gr,
                                           std::span<const S> dy) {
      S* ga = gr.acc_ptr(a);
      S* gb = gr.acc_ptr(b);
      const S* pa2 = a.data();
      const S* pb2 = b.data();
      for_each_bcast(plan.out, plan.sa, plan.sb, [&](auto o, auto ia, auto ib) {
        switch (kind) {
          case BinKind::Add:
            if (ga) ga[ia] += dy[o];
            if (gb) gb[ib] += dy[o];
            break;
          case BinKind::Sub:
            if (ga) ga[ia] += dy[o];
            if (gb) gb[ib] -= dy[o];
            break;
          case BinKind::Mul:
            if (ga) ga[ia] += dy[o] * pb2[ib];
            if (gb) gb[ib] += dy[o] * pa2[ia];
            break;
        }
      });
    });
    g->bind(out, id);
  }
  return out;
}

}  // namespace detail

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_op("add", detail::BinKind::Add, a, b);
}
template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_op("sub", detail::BinKind::Sub, a, b);
}
template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_op("mul", detail::BinKind::Mul, a, b);
}

/// Multiply by a plain scalar constant.
template <class S>
TensorT<S> scale(const TensorT<S>& a, S c) {
  TensorT<S> out(a.shape());
  const S* pa = a.data();
  S* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * c;
  if (GraphT<S>* g = detail::merge_graph<S>("scale", {&a})) {
    const int id = g->reserve(out.size());
    g->set_backward(id, [a, c](GraphT<S>& gr, std::span<const S> dy) {
      if (S* ga = gr.acc_ptr(a))
        for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * c;
    });
    g->bind(out, id);
  }
  return out;
}

/// Matrix product over the two trailing axes. Leading axes are batch
/// dimensions; they must match, except that a rank-2 right operand is shared
/// across all batch slices (the linear-layer case).
template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using MapC = Eigen::Map<const Mat>;

  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2)
    throw Error("matmul: operands must have rank >= 2: " + shape_str(sa) +
                " vs " + shape_str(sb));
  const auto m = static_cast<Eigen::Index>(sa[sa.size() - 2]);
  const auto k = static_cast<Eigen::Index>(sa[sa.size() - 1]);
  const auto n = static_cast<Eigen::Index>(sb[sb.size() - 1]);
  if (sb[sb.size() - 2] != static_cast<std::size_t>(k))
    throw Error("matmul: inner extents disagree: " + shape_str(sa) + " vs " +
                shape_str(sb));
  const bool shared_rhs = sb.size() == 2 && sa.size() > 2;
  if (!shared_rhs && sb.size() != sa.size())
    throw Error("matmul: batch ranks disagree: " + shape_str(sa) + " vs " +
                shape_str(sb));
  Shape batch_shape(sa.begin(), sa.end() - 2);
  if (!shared_rhs)
    for (std::size_t d = 0; d + 2 < sb.size(); ++d)
      if (sb[d] != sa[d])
        throw Error("matmul: batch extents disagree: " + shape_str(sa) +
                    " vs " + shape_str(sb));
  const std::size_t batch = shape_numel(batch_shape);
  Shape out_shape = batch_shape;
  out_shape.push_back(static_cast<std::size_t>(m));
  out_shape.push_back(static_cast<std::size_t>(n));

  TensorT<S> out(out_shape);
  const std::size_t step_a = static_cast<std::size_t>(m * k);
  const std::size_t step_b = shared_rhs ? 0 : static_cast<std::size_t>(k * n);
  const std::size_t step_o = static_cast<std::size_t>(m * n);
  for (std::size_t s = 0; s < batch; ++s) {
    MapC ma(a.data() + s * step_a, m, k);
    MapC mb(b.data() + s * step_b, k, n);
    MapM mo(out.data() + s * step_o, m, n);
    mo.noalias() = ma * mb;
  }

  if (GraphT<S>* g = detail::merge_graph<S>("matmul", {&a, &b})) {
    const int id = g->reserve(out.size());
    g->set_backward(id, [a, b, batch, step_a, step_b, step_o, m, k,
                         n](GraphT<S>& gr, std::span<const S> dy) {
      S* ga = gr.acc_ptr(a);
      S* gb = gr.acc_ptr(b);
      for (std::size_t s = 0; s < batch; ++s) {
        MapC mdy(dy.data() + s * step_o, m, n);
        if (ga) {
          MapC mb(b.data() + s * step_b, k, n);
          MapM mga(ga + s * step_a, m, k);
          mga.noalias() += mdy * mb.transpose();
        }
        if (gb) {
          MapC ma(a.data() + s * step_a, m, k);
          MapM mgb(gb + s * step_b, k, n);
          mgb.noalias() += ma.transpose() * mdy;
        }
      }
    });
    g->bind(out, id);
  }
  return out;
}

/// Swap two axes (copying).
template <class S>
TensorT<S> transpose(const TensorT<S>& t, std::size_t ax0, std::size_t ax1) {
  const Shape& in = t.shape();
  if (ax0 >= in.size() || ax1 >= in.size())
    throw Error("transpose: axis out of range for shape " + shape_str(in));
  Shape out_shape = in;
  std::swap(out_shape[ax0], out_shape[ax1]);
  const auto in_strides = row_major_strides(in);
  std::vector<std::size_t> walk(in.size());
  for (std::size_t d = 0; d < in.size(); ++d) {
    const std::size_t src = d == ax0 ? ax1 : (d == ax1 ? ax0 : d);
    walk[d] = in_strides[src];
  }
  TensorT<S> out(out_shape);
  const S* pi = t.data();
  S* po = out.data();
  const std::vector<std::size_t> zeros(in.size(), 0);
  detail::for_each_bcast(out_shape, walk, zeros,
                         [&](auto o, auto ii, auto) { po[o] = pi[ii]; });
  if (GraphT<S>* g = detail::merge_graph<S>("transpose", {&t})) {
    const int id = g->reserve(out.size());
    g->set_backward(id, [t, out_shape, walk, zeros](GraphT<S>& gr,
                                                    std::span<const S> dy) {
      if (S* gt = gr.acc_ptr(t))
        detail::for_each_bcast(out_shape, walk, zeros,
                               [&](auto o, auto ii, auto) { gt[ii] += dy[o]; });
    });
    g->bind(out, id);
  }
  return out;
}

/// Reinterpret the shape. Shares both the buffer and the graph node: stored
/// gradients are flat, so no backward rule is needed.
template <class S>
TensorT<S> reshape(const TensorT<S>& t, Shape shape) {
  return t.view(std::move(shape));
}

template <class S>
TensorT<S> slice(const TensorT<S>& t, std::size_t axis, std::size_t begin,
                 std::size_t end) {
  const Shape& in = t.shape();
  if (axis >= in.size())
    throw Error("slice: axis out of range for shape " + shape_str(in));
  if (begin > end || end > in[axis])
    throw Error("slice: range [" + std::to_string(begin) + ", " +
                std::to_string(end) + ") invalid for shape " + shape_str(in));
  Shape out_shape = in;
  out_shape[axis] = end - begin;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= in[d];
  for (std::size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];
  const std::size_t mid = in[axis];
  const std::size_t width = end - begin;
  TensorT<S> out(out_shape);
  for (std::size_t ou = 0; ou < outer; ++ou)
    std::copy_n(t.data() + (ou * mid + begin) * inner, width * inner,
                out.data() + ou * width * inner);
  if (GraphT<S>* g = detail::merge_graph<S>("slice", {&t})) {
    const int id = g->reserve(out.size());
    g->set_backward(id, [t, outer, inner, mid, begin, width](
                            GraphT<S>& gr, std::span<const S> dy) {
      S* gt = gr.acc_ptr(t);
      if (!gt) return;
      for (std::size_t ou = 0; ou < outer; ++ou) {
        S* dst = gt + (ou * mid + begin) * inner;
        const S* src = dy.data() + ou * width * inner;
        for (std::size_t i = 0; i < width * inner; ++i) dst[i] += src[i];
      }
    });
    g->bind(out, id);
  }
  return out;
}

/// Concatenate along an axis. All parts must agree on every other extent.
template <class S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, std::size_t axis) {
  if (parts.empty()) throw Error("concat: no operands");
  const Shape first = parts.front().shape();
  if (axis >= first.size())
    throw Error("concat: axis out of range for shape " + shape_str(first));
  std::size_t total = 0;
  GraphT<S>* g = nullptr;
  for (const auto& p : parts) {
    if (p.rank() != first.size())
      throw Error("concat: rank mismatch: " + shape_str(first) + " vs " +
                  shape_str(p.shape()));
    for (std::size_t d = 0; d < first.size(); ++d)
      if (d != axis && p.shape()[d] != first[d])
        throw Error("concat: extents disagree off-axis: " + shape_str(first) +
                    " vs " + shape_str(p.shape()));
    total += p.shape()[axis];
    if (p.attached()) {
      if (g && g != p.graph_ptr())
        throw Error("concat: operands belong to different graphs");
      g = p.graph_ptr();
    }
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  TensorT<S> out(out_shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis];
    for (std::size_t ou = 0; ou < outer; ++ou)
      std::copy_n(p.data() + ou * w * inner, w * inner,
                  out.data() + (ou * total + off) * inner);
    off += w;
  }
  if (g) {
    const int id = g->reserve(out.size());
    auto saved = parts;
    g->set_backward(id, [saved, axis, outer, inner, total](
                            GraphT<S>& gr, std::span<const S> dy) {
      std::size_t off2 = 0;
      for (const auto& p : saved) {
        const std::size_t w = p.shape()[axis];
        if (S* gp = gr.acc_ptr(p)) {
          for (std::size_t ou = 0; ou < outer; ++ou) {
            const S* src = dy.data() + (ou * total + off2) * inner;
            S* dst = gp + ou * w * inner;
            for (std::size_t i = 0; i < w * inner; ++i) dst[i] += src[i];
          }
        }
        off2 += w;
      }
    });
    g->bind(out, id);
  }
  return out;
}

template <class S>
TensorT<S> concat(std::initializer_list<TensorT<S>> parts, std::size_t axis) {
  return concat(std::vector<TensorT<S>>(parts), axis);
}

/// Row-wise softmax over the last axis.
template <class S>
TensorT<S> softmax(const TensorT<S>& t) {
  const Shape& in = t.shape();
  if (in.empty() || in.back() == 0)
    throw Error("softmax: last axis has extent 0 in shape " + shape_str(in));
  const std::size_t d = in.back();
  const std::size_t rows = t.size() / d;
  TensorT<S> out(in);
  for (std::size_t r = 0; r < rows; ++r) {
    const S* x = t.data() + r * d;
    S* y = out.data() + r * d;
    S mx = x[0];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    S sum = S(0);
    for (std::size_t i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    for (std::size_t i = 0; i < d; ++i) y[i] /= sum;
  }
  if (GraphT<S>* g = detail::merge_graph<S>("softmax", {&t})) {
    const int id = g->reserve(out.size());
    const TensorT<S> y_saved = out;  // pre-bind copy: values only
    g->set_backward(id, [t, y_saved, rows, d](GraphT<S>& gr,
                                              std::span<const S> dy) {
      S* gt = gr.acc_ptr(t);
      if (!gt) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const S* y = y_saved.data() + r * d;
        const S* g_out = dy.data() + r * d;
        S dot = S(0);
        for (std::size_t i = 0; i < d; ++i) dot += g_out[i] * y[i];
        for (std::size_t i = 0; i < d; ++i)
          gt[r * d + i] += y[i] * (g_out[i] - dot);
      }
    });
    g->bind(out, id);
  }
  return out;
}

/// Layer normalization over the last axis, no learned affine. Population
/// variance with epsilon inside the square root.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& t, S eps = S(1e-5)) {
  const Shape& in = t.shape();
  if (in.empty() || in.back() == 0)
    throw Error("layer_norm: last axis has extent 0 in shape " +
                shape_str(in));
  const std::size_t d = in.back();
  const std::size_t rows = t.size() / d;
  TensorT<S> out(in);
  std::vector<S> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const S* x = t.data() + r * d;
    S* y = out.data() + r * d;
    S mu = S(0);
    for (std::size_t i = 0; i < d; ++i) mu += x[i];
    mu /= static_cast<S>(d);
    S var = S(0);
    for (std::size_t i = 0; i < d; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<S>(d);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < d; ++i) y[i] = (x[i] - mu) * is;
  }
  if (GraphT<S>* g = detail::merge_graph<S>("layer_norm", {&t})) {
    const int id = g->reserve(out.size());
    const TensorT<S> xhat = out;
    g->set_backward(id, [t, xhat, inv_std, rows, d](GraphT<S>& gr,
                                                    std::span<const S> dy) {
      S* gt = gr.acc_ptr(t);
      if (!gt) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const S* xh = xhat.data() + r * d;
        const S* gout = dy.data() + r * d;
        S mean_dy = S(0), mean_dyxh = S(0);
        for (std::size_t i = 0; i < d; ++i) {
          mean_dy += gout[i];
          mean_dyxh += gout[i] * xh[i];
        }
        mean_dy /= static_cast<S>(d);
        mean_dyxh /= static_cast<S>(d);
        for (std::size_t i = 0; i < d; ++i)
          gt[r * d + i] +=
              inv_std[r] * (gout[i] - mean_dy - xh[i] * mean_dyxh);
      }
    });
    g->bind(out, id);
  }
  return out;
}

/// Exact GELU: x * Phi(x) with the normal CDF.
template <class S>
TensorT<S> gelu(const TensorT<S>& t) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  TensorT<S> out(t.shape());
  const S* x = t.data();
  S* y = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double xi = static_cast<double>(x[i]);
    y[i] = static_cast<S>(0.5 * xi * (1.0 + std::erf(xi * kInvSqrt2)));
  }
  if (GraphT<S>* g = detail::merge_graph<S>("gelu", {&t})) {
    const int id = g->reserve(out.size());
    g->set_backward(id, [t](GraphT<S>& gr, std::span<const S> dy) {
      S* gt = gr.acc_ptr(t);
      if (!gt) return;
      const S* x2 = t.data();
      for (std::size_t i = 0; i < dy.size(); ++i) {
        const double xi = static_cast<double>(x2[i]);
        const double phi = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
        gt[i] += dy[i] * static_cast<S>(phi + xi * pdf);
      }
    });
    g->bind(out, id);
  }
  return out;
}

/// SiLU: x * sigmoid(x).
template <class S>
TensorT<S> silu(const TensorT<S>& t) {
  TensorT<S> out(t.shape());
  const S* x = t.data();
  S* y = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const S s = S(1) / (S(1) + std::exp(-x[i]));
    y[i] = x[i] * s;
  }
  if (GraphT<S>* g = detail::merge_graph<S>("silu", {&t})) {
    const int id = g->reserve(out.size());
    g->set_backward(id, [t](GraphT<S>& gr, std::span<const S> dy) {
      S* gt = gr.acc_ptr(t);
      if (!gt) return;
      const S* x2 = t.data();
      for (std::size_t i = 0; i < dy.size(); ++i) {
        const S s = S(1) / (S(1) + std::exp(-x2[i]));
        gt[i] += dy[i] * s * (S(1) + x2[i] * (S(1) - s));
      }
    });
    g->bind(out, id);
  }
  return out;
}

/// Mean over one axis (the axis is removed).
template <class S>
TensorT<S> mean(const TensorT<S>& t, std::size_t axis) {
  const Shape& in = t.shape();
  if (axis >= in.size())
    throw Error("mean: axis out of range for shape " + shape_str(in));
  if (in[axis] == 0)
    throw Error("mean: axis has extent 0 in shape " + shape_str(in));
  Shape out_shape;
  for (std::size_t d = 0; d < in.size(); ++d)
    if (d != axis) out_shape.push_back(in[d]);
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= in[d];
  for (std::size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];
  const std::size_t mid = in[axis];
  TensorT<S> out(out_shape);
  for (std::size_t ou = 0; ou < outer; ++ou)
    for (std::size_t i = 0; i < inner; ++i) {
      S acc = S(0);
      for (std::size_t m = 0; m < mid; ++m)
        acc += t.data()[(ou * mid + m) * inner + i];
      out.data()[ou * inner + i] = acc / static_cast<S>(mid);
    }
  if (GraphT<S>* g = detail::merge_graph<S>("mean", {&t})) {
    const int id = g->reserve(out.size());
    g->set_backward(id, [t, outer, inner, mid](GraphT<S>& gr,
                                               std::span<const S> dy) {
      S* gt = gr.acc_ptr(t);
      if (!gt) return;
      const S inv = S(1) / static_cast<S>(mid);
      for (std::size_t ou = 0; ou < outer; ++ou)
        for (std::size_t m = 0; m < mid; ++m)
          for (std::size_t i = 0; i < inner; ++i)
            gt[(ou * mid + m) * inner + i] += dy[ou * inner + i] * inv;
    });
    g->bind(out, id);
  }
  return out;
}

/// Sum of all elements, as a scalar tensor.
template <class S>
TensorT<S> sum(const TensorT<S>& t) {
  S acc = S(0);
  for (std::size_t i = 0; i < t.size(); ++i) acc += t.data()[i];
  TensorT<S> out = TensorT<S>::scalar(acc);
  if (GraphT<S>* g = detail::merge_graph<S>("sum", {&t})) {
    const int id = g->reserve(1);
    g->set_backward(id, [t](GraphT<S>& gr, std::span<const S> dy) {
      if (S* gt = gr.acc_ptr(t))
        for (std::size_t i = 0; i < t.size(); ++i) gt[i] += dy[0];
    });
    g->bind(out, id);
  }
  return out;
}

/// Mean squared error between two same-shape tensors, as a scalar tensor.
template <class S>
TensorT<S> mse_loss(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw Error("mse_loss: shapes disagree: " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
  if (a.size() == 0) throw Error("mse_loss: empty input");
  S acc = S(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const S d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  TensorT<S> out = TensorT<S>::scalar(acc / static_cast<S>(a.size()));
  if (GraphT<S>* g = detail::merge_graph<S>("mse_loss", {&a, &b})) {
    const int id = g->reserve(1);
    g->set_backward(id, [a, b](GraphT<S>& gr, std::span<const S> dy) {
      S* ga = gr.acc_ptr(a);
      S* gb = gr.acc_ptr(b);
      const S c = dy[0] * S(2) / static_cast<S>(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        const S d = (a.data()[i] - b.data()[i]) * c;
        if (ga) ga[i] += d;
        if (gb) gb[i] -= d;
      }
    });
    g->bind(out, id);
  }
  return out;
}

/// x @ w + b with b broadcast over the leading axes.
template <class S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w,
                  const TensorT<S>& b) {
  return add(matmul(x, w), b);
}

}  // namespace dits
