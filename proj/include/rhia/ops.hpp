#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "rhia/tape.hpp"

// Differentiable primitives. Every op computes its value eagerly, records a
// backward rule on the tape, and accumulates (+=) into input gradients.
namespace rhia::ops {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;

template <class T>
Map<T> values(Tensor<T>& t) {
  return Map<T>(t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols()));
}
template <class T>
CMap<T> values(const Tensor<T>& t) {
  return CMap<T>(t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols()));
}
template <class T>
Map<T> grads(Tensor<T>& t) {
  return Map<T>(t.grad_data(), Eigen::Index(t.rows()), Eigen::Index(t.cols()));
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw NumericError(what);
}

template <class T>
void same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

// Shared plumbing for element-wise maps y = f(x) with dy/dx = df(x, y).
template <class T, class F, class DF>
Var<T> unary(const char* op, Var<T> x, F f, DF df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return x.tape->record(std::move(out), op, {x}, [x, df](Tape<T>& tape, std::uint32_t self) {
    if (!tape.requires_grad(x.id)) return;
    const Tensor<T>& y = tape.tensor(self);
    Tensor<T>& xt = tape.tensor(x.id);
    auto gy = y.grad();
    auto gx = xt.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xt[i], y[i]);
  });
}

}  // namespace detail

// out = op(a) * op(b), op = optional transpose. A rank-1 `a` is a single row
// and (untransposed) yields a rank-1 result.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a = false, bool trans_b = false) {
  using namespace detail;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const std::size_t m = trans_a ? av.cols() : av.rows();
  const std::size_t ka = trans_a ? av.rows() : av.cols();
  const std::size_t kb = trans_b ? bv.cols() : bv.rows();
  const std::size_t n = trans_b ? bv.rows() : bv.cols();
  require(ka == kb, "matmul: inner dimensions differ, " + shape_str(av.shape()) +
                        (trans_a ? "^T" : "") + " x " + shape_str(bv.shape()) + (trans_b ? "^T" : ""));
  Shape shape = (av.rank() == 1 && !trans_a) ? Shape{n} : Shape{m, n};
  Tensor<T> out(shape);
  {
    auto o = Map<T>(out.data(), Eigen::Index(m), Eigen::Index(n));
    auto A = values(av);
    auto B = values(bv);
    if (!trans_a && !trans_b) o.noalias() = A * B;
    else if (trans_a && !trans_b) o.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) o.noalias() = A * B.transpose();
    else o.noalias() = A.transpose() * B.transpose();
  }
  return a.tape->record(std::move(out), "matmul", {a, b},
                        [a, b, trans_a, trans_b, m, n](Tape<T>& tape, std::uint32_t self) {
    Tensor<T>& ot = tape.tensor(self);
    auto G = CMap<T>(ot.grad_data(), Eigen::Index(m), Eigen::Index(n));
    Tensor<T>& at = tape.tensor(a.id);
    Tensor<T>& bt = tape.tensor(b.id);
    auto A = values(std::as_const(at));
    auto B = values(std::as_const(bt));
    if (tape.requires_grad(a.id)) {
      auto gA = grads(at);
      // d op(a) = G * op(b)^T
      if (!trans_a) {
        if (!trans_b) gA.noalias() += G * B.transpose();
        else gA.noalias() += G * B;
      } else {
        if (!trans_b) gA.noalias() += B * G.transpose();
        else gA.noalias() += B.transpose() * G.transpose();
      }
    }
    if (tape.requires_grad(b.id)) {
      auto gB = grads(bt);
      // d op(b) = op(a)^T * G
      if (!trans_b) {
        if (!trans_a) gB.noalias() += A.transpose() * G;
        else gB.noalias() += A * G;
      } else {
        if (!trans_a) gB.noalias() += G.transpose() * A;
        else gB.noalias() += G.transpose() * A.transpose();
      }
    }
  });
}

// Adds a bias row to every row of x.
template <class T>
Var<T> add_row(Var<T> x, Var<T> bias) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& bv = bias.value();
  detail::require(bv.size() == xv.cols(), "add_row: bias " + shape_str(bv.shape()) +
                                              " does not match columns of " + shape_str(xv.shape()));
  Tensor<T> out = Tensor<T>(xv.shape(), std::vector<T>(xv.values().begin(), xv.values().end()));
  const std::size_t r = xv.rows(), c = xv.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  return x.tape->record(std::move(out), "add_row", {x, bias},
                        [x, bias, r, c](Tape<T>& tape, std::uint32_t self) {
    auto g = tape.tensor(self).grad();
    if (tape.requires_grad(x.id)) {
      auto gx = tape.tensor(x.id).grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tape.requires_grad(bias.id)) {
      auto gb = tape.tensor(bias.id).grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
  });
}

// x^T W + bias for a row (or each row of a batch).
template <class T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> bias) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Tensor<T>& bv = bias.value();
  if (wv.rank() != 2 || xv.cols() != wv.rows() || bv.size() != wv.cols()) {
    throw NumericError("affine: shape mismatch, x " + shape_str(xv.shape()) + ", W " +
                       shape_str(wv.shape()) + ", bias " + shape_str(bv.shape()));
  }
  return add_row(matmul(x, w), bias);
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_shape("add", a.value(), b.value());
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape->record(std::move(out), "add", {a, b}, [a, b](Tape<T>& tape, std::uint32_t self) {
    auto g = tape.tensor(self).grad();
    for (auto in : {a, b}) {
      if (!tape.requires_grad(in.id)) continue;
      auto gi = tape.tensor(in.id).grad();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

// Hadamard product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_shape("mul", a.value(), b.value());
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->record(std::move(out), "mul", {a, b}, [a, b](Tape<T>& tape, std::uint32_t self) {
    auto g = tape.tensor(self).grad();
    const Tensor<T>& av = tape.tensor(a.id);
    const Tensor<T>& bv = tape.tensor(b.id);
    if (tape.requires_grad(a.id)) {
      auto ga = tape.tensor(a.id).grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tape.requires_grad(b.id)) {
      auto gb = tape.tensor(b.id).grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> x, T s) {
  return detail::unary<T>("scale", x, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  return detail::unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> tanh(Var<T> x) {
  return detail::unary<T>("tanh", x, [](T v) { return std::tanh(v); },
                          [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> relu(Var<T> x) {
  return detail::unary<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                          [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

// Element-wise gate: beta * a + (1 - beta) * b.
template <class T>
Var<T> gate(Var<T> beta, Var<T> a, Var<T> b) {
  detail::same_shape("gate", beta.value(), a.value());
  detail::same_shape("gate", a.value(), b.value());
  const Tensor<T>& gv = beta.value();
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gv[i] * av[i] + (T(1) - gv[i]) * bv[i];
  return a.tape->record(std::move(out), "gate", {beta, a, b},
                        [beta, a, b](Tape<T>& tape, std::uint32_t self) {
    auto g = tape.tensor(self).grad();
    const Tensor<T>& gv = tape.tensor(beta.id);
    const Tensor<T>& av = tape.tensor(a.id);
    const Tensor<T>& bv = tape.tensor(b.id);
    if (tape.requires_grad(beta.id)) {
      auto gg = tape.tensor(beta.id).grad();
      for (std::size_t i = 0; i < g.size(); ++i) gg[i] += g[i] * (av[i] - bv[i]);
    }
    if (tape.requires_grad(a.id)) {
      auto ga = tape.tensor(a.id).grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gv[i];
    }
    if (tape.requires_grad(b.id)) {
      auto gb = tape.tensor(b.id).grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (T(1) - gv[i]);
    }
  });
}

// Concatenation along the feature (column) axis; all parts share row count.
template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::require(p.rows() == r, "concat_cols: row mismatch " + shape_str(parts.front().shape()) +
                                       " vs " + shape_str(p.shape()));
    widths.push_back(p.cols());
    total += p.cols();
  }
  const bool vec = parts.front().value().rank() == 1;
  Tensor<T> out(vec ? Shape{total} : Shape{r, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor<T>& pv = p.value();
    const std::size_t c = pv.cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(pv.data() + i * c, c, out.data() + i * total + off);
    off += c;
  }
  return parts.front().tape->record(std::move(out), "concat_cols", parts,
                                    [parts, widths, r, total](Tape<T>& tape, std::uint32_t self) {
    const T* g = tape.tensor(self).grad_data();
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const std::size_t c = widths[p];
      if (tape.requires_grad(parts[p].id)) {
        T* gp = tape.tensor(parts[p].id).grad_data();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * total + off + j];
      }
      off += c;
    }
  });
}

// Embedding lookup: row i of the result is table row idx[i].
template <class T>
Var<T> gather_rows(Var<T> table, std::vector<std::uint32_t> idx) {
  const Tensor<T>& tv = table.value();
  const std::size_t d = tv.cols();
  for (auto i : idx) {
    detail::require(i < tv.rows(), "gather_rows: index " + std::to_string(i) + " outside table " +
                                       shape_str(tv.shape()));
  }
  Tensor<T> out(Shape{idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(tv.data() + idx[r] * d, d, out.data() + r * d);
  return table.tape->record(std::move(out), "gather_rows", {table},
                            [table, idx = std::move(idx), d](Tape<T>& tape, std::uint32_t self) {
    const T* g = tape.tensor(self).grad_data();
    T* gt = tape.tensor(table.id).grad_data();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += g[r * d + j];
  });
}

// Repeats a vector as `r` identical rows.
template <class T>
Var<T> broadcast_rows(Var<T> v, std::size_t r) {
  const Tensor<T>& vv = v.value();
  const std::size_t c = vv.size();
  Tensor<T> out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i) std::copy_n(vv.data(), c, out.data() + i * c);
  return v.tape->record(std::move(out), "broadcast_rows", {v}, [v, r, c](Tape<T>& tape, std::uint32_t self) {
    const T* g = tape.tensor(self).grad_data();
    T* gv = tape.tensor(v.id).grad_data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
  });
}

// Token windows for a 1-D convolution with zero "same" padding. `offsets`
// delimits sentences (size S+1) inside the stacked token rows of x; windows
// never cross a sentence boundary. Row t of the result is
// [x_{t-p}; ...; x_{t+w-1-p}] with p = (w-1)/2.
template <class T>
Var<T> window_stack(Var<T> x, std::vector<std::uint32_t> offsets, std::size_t window) {
  const Tensor<T>& xv = x.value();
  detail::require(window >= 1, "window_stack: window must be >= 1");
  detail::require(!offsets.empty() && offsets.back() == xv.rows(),
                  "window_stack: offsets do not cover " + shape_str(xv.shape()));
  const std::size_t d = xv.cols();
  const std::size_t total = xv.rows();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((window - 1) / 2);
  Tensor<T> out(Shape{total, window * d});
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::ptrdiff_t lo = offsets[s], hi = offsets[s + 1];
    for (std::ptrdiff_t t = lo; t < hi; ++t) {
      for (std::size_t j = 0; j < window; ++j) {
        const std::ptrdiff_t src = t - pad + static_cast<std::ptrdiff_t>(j);
        if (src < lo || src >= hi) continue;
        std::copy_n(xv.data() + src * d, d, out.data() + (t * window + j) * d);
      }
    }
  }
  return x.tape->record(std::move(out), "window_stack", {x},
                        [x, offsets = std::move(offsets), window, d, pad](Tape<T>& tape, std::uint32_t self) {
    const T* g = tape.tensor(self).grad_data();
    T* gx = tape.tensor(x.id).grad_data();
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const std::ptrdiff_t lo = offsets[s], hi = offsets[s + 1];
      for (std::ptrdiff_t t = lo; t < hi; ++t) {
        for (std::size_t j = 0; j < window; ++j) {
          const std::ptrdiff_t src = t - pad + static_cast<std::ptrdiff_t>(j);
          if (src < lo || src >= hi) continue;
          const T* gs = g + (t * window + j) * d;
          T* gd = gx + src * d;
          for (std::size_t k = 0; k < d; ++k) gd[k] += gs[k];
        }
      }
    }
  });
}

// Stacked 1-D convolution: windows of x (see window_stack) times the filter
// bank w [window*d x filters], plus a per-filter bias.
template <class T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> bias, std::vector<std::uint32_t> offsets, std::size_t window) {
  detail::require(w.rows() == window * x.cols(),
                  "conv1d: filter bank " + shape_str(w.shape()) + " does not match window " +
                      std::to_string(window) + " over input " + shape_str(x.shape()));
  return add_row(matmul(window_stack(x, std::move(offsets), window), w), bias);
}

// Split points for one sentence: segments are [0, first], (first, second],
// (second, length), with `first <= second` local token indices.
struct SegmentSplit {
  std::uint32_t first = 0;
  std::uint32_t second = 0;
};

// Piecewise max over three segments per sentence. Result row s is
// [max seg1 (c); max seg2 (c); max seg3 (c)]. An empty segment yields 0 and
// bumps *empty_segments when provided.
template <class T>
Var<T> segment_max(Var<T> f, std::vector<std::uint32_t> offsets, const std::vector<SegmentSplit>& splits,
                   std::size_t* empty_segments = nullptr) {
  const Tensor<T>& fv = f.value();
  const std::size_t c = fv.cols();
  const std::size_t sentences = offsets.size() - 1;
  detail::require(splits.size() == sentences, "segment_max: one split per sentence required");
  Tensor<T> out(Shape{sentences, 3 * c});
  // argmax row per (sentence, segment, filter); -1 for empty segments
  std::vector<std::int64_t> arg(sentences * 3 * c, -1);
  for (std::size_t s = 0; s < sentences; ++s) {
    const std::int64_t lo = offsets[s], hi = offsets[s + 1];
    const SegmentSplit& sp = splits[s];
    detail::require(sp.first <= sp.second, "segment_max: split points out of order");
    const std::int64_t bounds[4] = {lo, std::min<std::int64_t>(hi, lo + sp.first + 1),
                                    std::min<std::int64_t>(hi, lo + sp.second + 1), hi};
    for (std::size_t seg = 0; seg < 3; ++seg) {
      const std::int64_t a = std::max(bounds[seg], lo), b = bounds[seg + 1];
      if (a >= b) {
        if (empty_segments) ++*empty_segments;
        continue;  // stays 0
      }
      for (std::size_t k = 0; k < c; ++k) {
        std::int64_t best = a;
        T m = fv[a * c + k];
        for (std::int64_t t = a + 1; t < b; ++t) {
          if (fv[t * c + k] > m) {
            m = fv[t * c + k];
            best = t;
          }
        }
        out[s * 3 * c + seg * c + k] = m;
        arg[s * 3 * c + seg * c + k] = best;
      }
    }
  }
  return f.tape->record(std::move(out), "segment_max", {f},
                        [f, arg = std::move(arg), c](Tape<T>& tape, std::uint32_t self) {
    const T* g = tape.tensor(self).grad_data();
    T* gf = tape.tensor(f.id).grad_data();
    for (std::size_t i = 0; i < arg.size(); ++i) {
      if (arg[i] < 0) continue;
      gf[arg[i] * c + i % c] += g[i];
    }
  });
}

// Row-wise softmax with max subtraction.
template <class T>
Var<T> softmax_rows(Var<T> x) {
  const Tensor<T>& xv = x.value();
  for (auto v : xv.values()) detail::require(!std::isnan(v), "softmax: NaN input");
  const std::size_t r = xv.rows(), c = xv.cols();
  detail::require(c >= 1, "softmax: empty rows");
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const T* in = xv.data() + i * c;
    T* o = out.data() + i * c;
    const T mx = *std::max_element(in, in + c);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[j] /= sum;
  }
  return x.tape->record(std::move(out), "softmax", {x}, [x, r, c](Tape<T>& tape, std::uint32_t self) {
    const Tensor<T>& y = tape.tensor(self);
    const T* g = y.grad_data();
    T* gx = tape.tensor(x.id).grad_data();
    for (std::size_t i = 0; i < r; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

template <class T>
Var<T> log_softmax_rows(Var<T> x) {
  const Tensor<T>& xv = x.value();
  for (auto v : xv.values()) detail::require(!std::isnan(v), "log_softmax: NaN input");
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const T* in = xv.data() + i * c;
    T* o = out.data() + i * c;
    const T mx = *std::max_element(in, in + c);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(in[j] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) o[j] = in[j] - lse;
  }
  return x.tape->record(std::move(out), "log_softmax", {x}, [x, r, c](Tape<T>& tape, std::uint32_t self) {
    const Tensor<T>& y = tape.tensor(self);
    const T* g = y.grad_data();
    T* gx = tape.tensor(x.id).grad_data();
    for (std::size_t i = 0; i < r; ++i) {
      T gsum = 0;
      for (std::size_t j = 0; j < c; ++j) gsum += g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * gsum;
    }
  });
}

// Row-wise layer normalization (population variance, eps inside the root),
// followed by a per-feature gain and shift.
template <class T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gain, Var<T> shift, T eps) {
  const Tensor<T>& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  detail::require(c >= 2, "layer_norm: need at least 2 features, got " + shape_str(xv.shape()));
  detail::require(gain.value().size() == c && shift.value().size() == c,
                  "layer_norm: gain/shift " + shape_str(gain.shape()) + "/" + shape_str(shift.shape()) +
                      " do not match " + shape_str(xv.shape()));
  Tensor<T> out(xv.shape());
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(r);
  const Tensor<T>& gv = gain.value();
  const Tensor<T>& sv = shift.value();
  for (std::size_t i = 0; i < r; ++i) {
    const T* in = xv.data() + i * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += in[j];
    mean /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= T(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = var + eps > T(0) ? (in[j] - mean) * inv_std[i] : T(0);
      out[i * c + j] = gv[j] * xhat[i * c + j] + sv[j];
    }
  }
  return x.tape->record(std::move(out), "layer_norm", {x, gain, shift},
                        [x, gain, shift, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                            Tape<T>& tape, std::uint32_t self) {
    const T* g = tape.tensor(self).grad_data();
    const Tensor<T>& gv = tape.tensor(gain.id);
    if (tape.requires_grad(gain.id)) {
      T* gg = tape.tensor(gain.id).grad_data();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
    }
    if (tape.requires_grad(shift.id)) {
      T* gs = tape.tensor(shift.id).grad_data();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gs[j] += g[i * c + j];
    }
    if (tape.requires_grad(x.id)) {
      T* gx = tape.tensor(x.id).grad_data();
      for (std::size_t i = 0; i < r; ++i) {
        if (!std::isfinite(inv_std[i])) continue;
        T mean_d = 0, mean_dx = 0;
        for (std::size_t j = 0; j < c; ++j) {
          const T d = g[i * c + j] * gv[j];
          mean_d += d;
          mean_dx += d * xhat[i * c + j];
        }
        mean_d /= T(c);
        mean_dx /= T(c);
        for (std::size_t j = 0; j < c; ++j) {
          const T d = g[i * c + j] * gv[j];
          gx[i * c + j] += inv_std[i] * (d - mean_d - xhat[i * c + j] * mean_dx);
        }
      }
    }
  });
}

// Softmax over contiguous groups of a score column; offsets has one entry per
// group boundary (size groups+1). Result has the shape of `scores`.
template <class T>
Var<T> segment_softmax(Var<T> scores, std::vector<std::uint32_t> offsets) {
  const Tensor<T>& sv = scores.value();
  detail::require(!offsets.empty() && offsets.back() == sv.size(),
                  "segment_softmax: offsets do not cover " + shape_str(sv.shape()));
  Tensor<T> out(sv.shape());
  for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
    const std::size_t lo = offsets[g], hi = offsets[g + 1];
    detail::require(hi > lo, "segment_softmax: empty group");
    T mx = sv[lo];
    for (std::size_t i = lo; i < hi; ++i) mx = std::max(mx, sv[i]);
    T sum = 0;
    for (std::size_t i = lo; i < hi; ++i) sum += (out[i] = std::exp(sv[i] - mx));
    for (std::size_t i = lo; i < hi; ++i) out[i] /= sum;
  }
  return scores.tape->record(std::move(out), "segment_softmax", {scores},
                             [scores, offsets = std::move(offsets)](Tape<T>& tape, std::uint32_t self) {
    const Tensor<T>& y = tape.tensor(self);
    const T* g = y.grad_data();
    T* gs = tape.tensor(scores.id).grad_data();
    for (std::size_t k = 0; k + 1 < offsets.size(); ++k) {
      T dot = 0;
      for (std::size_t i = offsets[k]; i < offsets[k + 1]; ++i) dot += g[i] * y[i];
      for (std::size_t i = offsets[k]; i < offsets[k + 1]; ++i) gs[i] += y[i] * (g[i] - dot);
    }
  });
}

// Row g of the result is sum_{i in group g} weights[i] * x[i, :].
template <class T>
Var<T> segment_weighted_sum(Var<T> weights, Var<T> x, std::vector<std::uint32_t> offsets) {
  const Tensor<T>& wv = weights.value();
  const Tensor<T>& xv = x.value();
  detail::require(wv.size() == xv.rows() && offsets.back() == xv.rows(),
                  "segment_weighted_sum: weights " + shape_str(wv.shape()) + " vs rows " +
                      shape_str(xv.shape()));
  const std::size_t groups = offsets.size() - 1, d = xv.cols();
  Tensor<T> out(Shape{groups, d});
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = offsets[g]; i < offsets[g + 1]; ++i)
      for (std::size_t j = 0; j < d; ++j) out[g * d + j] += wv[i] * xv[i * d + j];
  return x.tape->record(std::move(out), "segment_weighted_sum", {weights, x},
                        [weights, x, offsets = std::move(offsets), d](Tape<T>& tape, std::uint32_t self) {
    const T* g = tape.tensor(self).grad_data();
    const Tensor<T>& wv = tape.tensor(weights.id);
    const Tensor<T>& xv = tape.tensor(x.id);
    const bool gw = tape.requires_grad(weights.id), gxn = tape.requires_grad(x.id);
    T* gwd = gw ? tape.tensor(weights.id).grad_data() : nullptr;
    T* gxd = gxn ? tape.tensor(x.id).grad_data() : nullptr;
    for (std::size_t k = 0; k + 1 < offsets.size(); ++k) {
      for (std::size_t i = offsets[k]; i < offsets[k + 1]; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < d; ++j) {
          dot += g[k * d + j] * xv[i * d + j];
          if (gxd) gxd[i * d + j] += g[k * d + j] * wv[i];
        }
        if (gwd) gwd[i] += dot;
      }
    }
  });
}

// Inverted dropout: keeps each entry with probability 1-p and rescales by
// 1/(1-p). p == 0 returns x unchanged.
template <class T, class Rng>
Var<T> dropout(Var<T> x, T p, Rng& rng) {
  detail::require(p >= T(0) && p < T(1), "dropout: rate must be in [0, 1)");
  if (p == T(0)) return x;
  const Tensor<T>& xv = x.value();
  std::vector<T> mask(xv.size());
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  const T s = T(1) / (T(1) - p);
  for (auto& m : mask) m = keep(rng) ? s : T(0);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return x.tape->record(std::move(out), "dropout", {x}, [x, mask = std::move(mask)](Tape<T>& tape, std::uint32_t self) {
    const T* g = tape.tensor(self).grad_data();
    T* gx = tape.tensor(x.id).grad_data();
    for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

// Mean negative log-likelihood: -(1/rows) sum_i logp[i, target[i]].
template <class T>
Var<T> nll(Var<T> log_probs, const std::vector<std::uint32_t>& targets) {
  const Tensor<T>& lv = log_probs.value();
  const std::size_t r = lv.rows(), c = lv.cols();
  detail::require(targets.size() == r, "nll: " + std::to_string(targets.size()) + " targets for " +
                                           std::to_string(r) + " rows");
  detail::require(r > 0, "nll: empty batch");
  T sum = 0;
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] >= c) {
      throw NumericError("nll: target " + std::to_string(targets[i]) + " outside " + std::to_string(c) +
                         " classes");
    }
    sum -= lv[i * c + targets[i]];
  }
  Tensor<T> out(Shape{1}, {sum / T(r)});
  return log_probs.tape->record(std::move(out), "nll", {log_probs},
                                [log_probs, targets, r, c](Tape<T>& tape, std::uint32_t self) {
    const T g = tape.tensor(self).grad()[0];
    T* gl = tape.tensor(log_probs.id).grad_data();
    for (std::size_t i = 0; i < r; ++i) gl[i * c + targets[i]] -= g / T(r);
  });
}

template <class T>
Var<T> sum_squares(Var<T> x) {
  const Tensor<T>& xv = x.value();
  T s = 0;
  for (auto v : xv.values()) s += v * v;
  return x.tape->record(Tensor<T>(Shape{1}, {s}), "sum_squares", {x}, [x](Tape<T>& tape, std::uint32_t self) {
    const T g = tape.tensor(self).grad()[0];
    Tensor<T>& xt = tape.tensor(x.id);
    auto gx = xt.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += T(2) * g * xt[i];
  });
}

// sum_i weight_i * term_i over scalar terms. Terms with weight exactly 0
// receive no gradient at all.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  detail::require(!terms.empty() && terms.size() == weights.size(), "weighted_sum: arity mismatch");
  T s = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    detail::require(terms[i].value().size() == 1, "weighted_sum: terms must be scalars");
    if (weights[i] != T(0)) s += weights[i] * terms[i].scalar();
  }
  return terms.front().tape->record(Tensor<T>(Shape{1}, {s}), "weighted_sum", terms,
                                    [terms, weights](Tape<T>& tape, std::uint32_t self) {
    const T g = tape.tensor(self).grad()[0];
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (weights[i] == T(0) || !tape.requires_grad(terms[i].id)) continue;
      tape.tensor(terms[i].id).grad()[0] += weights[i] * g;
    }
  });
}

}  // namespace rhia::ops
