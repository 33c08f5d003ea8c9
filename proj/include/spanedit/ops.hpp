#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "spanedit/errors.hpp"
#include "spanedit/narray.hpp"
#include "spanedit/rng.hpp"
#include "spanedit/tape.hpp"

// Differentiable op set. Every op reads its operands' values, records the
// result on the operands' tape and, when any operand is tracked, a closure
// that pushes the output gradient back to the operands.
namespace spanedit::ad {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline Tape& same_tape(std::initializer_list<Var> vs) {
  Tape* t = nullptr;
  for (const Var& v : vs) {
    if (!v.valid()) throw ValidationError("op on an empty Var");
    if (t && &v.tape() != t) throw ValidationError("operands live on different tapes");
    t = &v.tape();
  }
  return *t;
}

inline Tape& same_tape(std::span<const Var> vs) {
  if (vs.empty()) throw ValidationError("op needs at least one operand");
  Tape* t = &vs.front().tape();
  for (const Var& v : vs)
    if (&v.tape() != t) throw ValidationError("operands live on different tapes");
  return *t;
}

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// (outer, len, inner) decomposition of a reduction over `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + s.str());
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.rank(); ++i) r.inner *= s[i];
  return r;
}

inline Shape drop_axis(const Shape& s, std::size_t axis) {
  std::vector<std::size_t> d;
  for (std::size_t i = 0; i < s.rank(); ++i)
    if (i != axis) d.push_back(s[i]);
  return Shape(std::span<const std::size_t>(d));
}

template <typename F>
Var unary(Var a, F&& f, BackwardFn bw) {
  Tape& t = a.tape();
  const NArray& av = a.value();
  NArray out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return t.record(std::move(out), a.requires_grad(), std::move(bw));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

// a: [m, k] or [k]; b: [k, n] (or [n, k] when transpose_b). Result [m, n],
// or [n] when a is a vector.
inline Var matmul(Var a, Var b, bool transpose_b = false) {
  using namespace detail;
  Tape& t = same_tape({a, b});
  const NArray& av = a.value();
  const NArray& bv = b.value();
  if (av.rank() < 1 || av.rank() > 2 || bv.rank() != 2)
    shape_mismatch("matmul", av.shape(), bv.shape());
  const std::size_t m = av.rows(), k = av.cols();
  const std::size_t bk = transpose_b ? bv.shape()[1] : bv.shape()[0];
  const std::size_t n = transpose_b ? bv.shape()[0] : bv.shape()[1];
  if (k != bk) shape_mismatch("matmul", av.shape(), bv.shape());
  NArray out(av.rank() == 1 ? Shape{n} : Shape{m, n});
  ConstMap A(av.data(), m, k);
  ConstMap B(bv.data(), bv.shape()[0], bv.shape()[1]);
  MutMap C(out.data(), m, n);
  if (transpose_b)
    C.noalias() = A * B.transpose();
  else
    C.noalias() = A * B;
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), t.tracking({a, b}), [ia, ib, m, k, n, transpose_b](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    ConstMap G(g.data(), m, n);
    if (tp.requires_grad(ia)) {
      const NArray& bv = tp.value(ib);
      ConstMap B(bv.data(), bv.shape()[0], bv.shape()[1]);
      MutMap GA(tp.grad(ia).data(), m, k);
      if (transpose_b)
        GA.noalias() += G * B;
      else
        GA.noalias() += G * B.transpose();
    }
    if (tp.requires_grad(ib)) {
      const NArray& av = tp.value(ia);
      ConstMap A(av.data(), m, k);
      NArray& gbv = tp.grad(ib);
      MutMap GB(gbv.data(), gbv.shape()[0], gbv.shape()[1]);
      if (transpose_b)
        GB.noalias() += G.transpose() * A;
      else
        GB.noalias() += A.transpose() * G;
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

// Same-shape addition, or a [c] vector broadcast over the rows of an [r, c]
// matrix.
inline Var add(Var a, Var b) {
  using namespace detail;
  Tape& t = same_tape({a, b});
  const NArray& av = a.value();
  const NArray& bv = b.value();
  const bool broadcast = !(av.shape() == bv.shape());
  if (broadcast && !(av.rank() == 2 && bv.rank() == 1 && av.cols() == bv.size()))
    shape_mismatch("add", av.shape(), bv.shape());
  NArray out = av;
  if (!broadcast) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  } else {
    const std::size_t c = bv.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % c];
  }
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), t.tracking({a, b}), [ia, ib, broadcast](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    if (tp.requires_grad(ia)) {
      NArray& ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      NArray& gb = tp.grad(ib);
      const std::size_t c = gb.size();
      if (!broadcast)
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      else
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  using namespace detail;
  Tape& t = same_tape({a, b});
  const NArray& av = a.value();
  const NArray& bv = b.value();
  if (!(av.shape() == bv.shape())) shape_mismatch("sub", av.shape(), bv.shape());
  NArray out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), t.tracking({a, b}), [ia, ib](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    if (tp.requires_grad(ia)) {
      NArray& ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      NArray& gb = tp.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  using namespace detail;
  Tape& t = same_tape({a, b});
  const NArray& av = a.value();
  const NArray& bv = b.value();
  if (!(av.shape() == bv.shape())) shape_mismatch("mul", av.shape(), bv.shape());
  NArray out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), t.tracking({a, b}), [ia, ib](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    if (tp.requires_grad(ia)) {
      NArray& ga = tp.grad(ia);
      const NArray& bv = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(ib)) {
      NArray& gb = tp.grad(ib);
      const NArray& av = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double c) {
  const int ia = a.id();
  return detail::unary(a, [c](double v) { return c * v; }, [ia, c](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    NArray& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

inline Var neg(Var a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Nonlinearities

inline Var sigmoid(Var a) {
  const int ia = a.id();
  return detail::unary(a, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [ia](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    const NArray& y = tp.value(self);
    NArray& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

inline Var tanh(Var a) {
  const int ia = a.id();
  return detail::unary(a, [](double v) { return std::tanh(v); }, [ia](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    const NArray& y = tp.value(self);
    NArray& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

inline Var exp(Var a) {
  const int ia = a.id();
  return detail::unary(a, [](double v) { return std::exp(v); }, [ia](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    const NArray& y = tp.value(self);
    NArray& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

// Inverted dropout: kept entries are scaled by 1 / (1 - rate) at train time;
// identity otherwise.
inline Var dropout(Var a, double rate, bool train, SplitMix64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (!train || rate == 0.0) return a;
  Tape& t = a.tape();
  const NArray& av = a.value();
  auto keep = std::make_shared<std::vector<double>>(av.size());
  const double s = 1.0 / (1.0 - rate);
  NArray out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    (*keep)[i] = rng.uniform01() >= rate ? s : 0.0;
    out[i] = av[i] * (*keep)[i];
  }
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, keep](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    NArray& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*keep)[i];
  });
}

// ---------------------------------------------------------------------------
// Structural ops

// Concatenation along `axis` (rank 1: axis 0; rank 2: axis 0 or 1).
inline Var concat(std::span<const Var> parts, std::size_t axis) {
  using namespace detail;
  Tape& t = same_tape(parts);
  const Shape& s0 = parts.front().shape();
  if (axis >= s0.rank()) throw ShapeError("concat axis " + std::to_string(axis) + " out of range for " + s0.str());
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.rank() != s0.rank()) shape_mismatch("concat", s0, s);
    for (std::size_t d = 0; d < s.rank(); ++d)
      if (d != axis && s[d] != s0[d]) shape_mismatch("concat", s0, s);
    total += s[axis];
  }
  std::vector<std::size_t> dims(s0.dims().begin(), s0.dims().end());
  dims[axis] = total;
  const Shape out_shape{std::span<const std::size_t>(dims)};
  const AxisSplit os = split_axis(out_shape, axis);
  NArray out(out_shape);
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const NArray& v = p.value();
    const AxisSplit ps = split_axis(v.shape(), axis);
    const std::size_t chunk = ps.len * ps.inner;
    for (std::size_t o = 0; o < ps.outer; ++o)
      std::copy_n(v.data() + o * chunk, chunk, out.data() + (o * os.len + offset) * os.inner);
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += ps.len;
  }
  return t.record(std::move(out), t.tracking(parts), [ids, offsets, axis, os](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (!tp.requires_grad(ids[p])) continue;
      NArray& gp = tp.grad(ids[p]);
      const AxisSplit ps = split_axis(gp.shape(), axis);
      const std::size_t chunk = ps.len * ps.inner;
      for (std::size_t o = 0; o < ps.outer; ++o) {
        const double* src = g.data() + (o * os.len + offsets[p]) * os.inner;
        double* dst = gp.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    }
  });
}

inline Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

// Entries [begin, end) along `axis`; the axis is kept.
inline Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  using namespace detail;
  Tape& t = a.tape();
  const NArray& av = a.value();
  const AxisSplit s = split_axis(av.shape(), axis);
  if (begin > end || end > s.len)
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                     av.shape().str());
  std::vector<std::size_t> dims(av.shape().dims().begin(), av.shape().dims().end());
  dims[axis] = end - begin;
  NArray out{Shape{std::span<const std::size_t>(dims)}};
  const std::size_t chunk = (end - begin) * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(av.data() + (o * s.len + begin) * s.inner, chunk, out.data() + o * chunk);
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, s, begin, chunk](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    NArray& ga = tp.grad(ia);
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = ga.data() + (o * s.len + begin) * s.inner;
      const double* src = g.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

// Row r of a matrix, as a vector.
inline Var row(Var a, std::size_t r) {
  Tape& t = a.tape();
  const NArray& av = a.value();
  if (av.rank() != 2 || r >= av.rows())
    throw ShapeError("row " + std::to_string(r) + " out of range for " + av.shape().str());
  const std::size_t c = av.cols();
  NArray out(Shape{c});
  std::copy_n(av.data() + r * c, c, out.data());
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, r, c](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    NArray& ga = tp.grad(ia);
    for (std::size_t i = 0; i < c; ++i) ga[r * c + i] += g[i];
  });
}

// Stacks same-shaped scalars into a vector, or vectors into a matrix.
inline Var stack(std::span<const Var> parts) {
  using namespace detail;
  Tape& t = same_tape(parts);
  const Shape& s0 = parts.front().shape();
  if (s0.rank() > 1) throw ShapeError("stack expects scalars or vectors, got " + s0.str());
  const std::size_t w = s0.numel();
  NArray out(s0.rank() == 0 ? Shape{parts.size()} : Shape{parts.size(), w});
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    if (!(parts[p].shape() == s0)) shape_mismatch("stack", s0, parts[p].shape());
    std::copy_n(parts[p].value().data(), w, out.data() + p * w);
    ids.push_back(parts[p].id());
  }
  return t.record(std::move(out), t.tracking(parts), [ids, w](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (!tp.requires_grad(ids[p])) continue;
      NArray& gp = tp.grad(ids[p]);
      for (std::size_t i = 0; i < w; ++i) gp[i] += g[p * w + i];
    }
  });
}

inline Var reshape(Var a, Shape shape) {
  Tape& t = a.tape();
  const NArray& av = a.value();
  if (shape.numel() != av.size()) detail::shape_mismatch("reshape", av.shape(), shape);
  NArray out(shape, std::vector<double>(av.values().begin(), av.values().end()));
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    NArray& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// Rows of `table` selected by `ids`: [len(ids), cols].
inline Var embed_lookup(Var table, std::span<const int> ids) {
  Tape& t = table.tape();
  const NArray& tv = table.value();
  if (tv.rank() != 2) throw ShapeError("embedding table must be a matrix, got " + tv.shape().str());
  const std::size_t c = tv.cols();
  NArray out(Shape{ids.size(), c});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows())
      throw ValidationError("embedding id " + std::to_string(ids[r]) + " out of range");
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * c, c, out.data() + r * c);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  const int it = table.id();
  return t.record(std::move(out), table.requires_grad(), [it, idv, c](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    NArray& gt = tp.grad(it);
    for (std::size_t r = 0; r < idv.size(); ++r) {
      double* dst = gt.data() + static_cast<std::size_t>(idv[r]) * c;
      for (std::size_t i = 0; i < c; ++i) dst[i] += g[r * c + i];
    }
  });
}

// Flat-index gather: result[i] = a.flat[indices[i]].
inline Var gather(Var a, std::span<const std::size_t> indices) {
  Tape& t = a.tape();
  const NArray& av = a.value();
  NArray out(Shape{indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= av.size()) throw ShapeError("gather index out of range for " + av.shape().str());
    out[i] = av[indices[i]];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, idx](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    NArray& ga = tp.grad(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
  });
}

// Single flat entry as a scalar.
inline Var pick(Var a, std::size_t index) {
  Tape& t = a.tape();
  const NArray& av = a.value();
  if (index >= av.size()) throw ShapeError("pick index out of range for " + av.shape().str());
  const int ia = a.id();
  return t.record(NArray::scalar(av[index]), a.requires_grad(), [ia, index](Tape& tp, int self) {
    tp.grad(ia)[index] += tp.grad_if_any(self)->item();
  });
}

// Pairwise sums laid out row-major: for vectors u, v of length n the result
// is [n * n] with entry i * n + e = u[i] + v[e]; for [r, n] matrices it is
// the same per row, giving [r, n * n].
inline Var outer_add(Var u, Var v) {
  using namespace detail;
  Tape& t = same_tape({u, v});
  const NArray& uv = u.value();
  const NArray& vv = v.value();
  if (!(uv.shape() == vv.shape()) || uv.rank() < 1 || uv.rank() > 2) shape_mismatch("outer_add", uv.shape(), vv.shape());
  const std::size_t r = uv.rows(), n = uv.cols();
  NArray out(uv.rank() == 1 ? Shape{n * n} : Shape{r, n * n});
  for (std::size_t k = 0; k < r; ++k) {
    const double* ur = uv.data() + k * n;
    const double* vr = vv.data() + k * n;
    double* o = out.data() + k * n * n;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t e = 0; e < n; ++e) o[i * n + e] = ur[i] + vr[e];
  }
  const int iu = u.id(), iv = v.id();
  return t.record(std::move(out), t.tracking({u, v}), [iu, iv, r, n](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    const bool gu = tp.requires_grad(iu), gv = tp.requires_grad(iv);
    double* du = gu ? tp.grad(iu).data() : nullptr;
    double* dv = gv ? tp.grad(iv).data() : nullptr;
    for (std::size_t k = 0; k < r; ++k) {
      const double* gk = g.data() + k * n * n;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t e = 0; e < n; ++e) {
          const double x = gk[i * n + e];
          if (gu) du[k * n + i] += x;
          if (gv) dv[k * n + e] += x;
        }
    }
  });
}

// Sets entries to -inf where mask is nonzero. The mask either matches the
// full size of `a` or its last axis (then it applies to every row).
inline Var masked_fill(Var a, std::shared_ptr<const std::vector<std::uint8_t>> mask) {
  Tape& t = a.tape();
  const NArray& av = a.value();
  const std::size_t m = mask->size();
  if (m != av.size() && m != av.cols())
    throw ShapeError("mask of length " + std::to_string(m) + " does not fit " + av.shape().str());
  NArray out = av;
  for (std::size_t i = 0; i < out.size(); ++i)
    if ((*mask)[i % m]) out[i] = kNegInf;
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, mask, m](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    NArray& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(*mask)[i % m]) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalizers. All subtract the running max, and treat -inf
// entries as exact zeros of probability with zero gradient.

namespace detail {

inline double lane_max(const double* p, std::size_t len, std::size_t stride) {
  double m = kNegInf;
  for (std::size_t l = 0; l < len; ++l) m = std::max(m, p[l * stride]);
  return m;
}

inline double lane_logsumexp(const double* p, std::size_t len, std::size_t stride) {
  const double m = lane_max(p, len, stride);
  if (m == kNegInf) throw NumericError("log-sum-exp over an axis with no finite entry (no valid action)");
  double s = 0.0;
  for (std::size_t l = 0; l < len; ++l) s += std::exp(p[l * stride] - m);
  return m + std::log(s);
}

}  // namespace detail

inline Var log_softmax(Var a, std::size_t axis) {
  using namespace detail;
  Tape& t = a.tape();
  const NArray& av = a.value();
  const AxisSplit s = split_axis(av.shape(), axis);
  NArray out(av.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      const double lse = lane_logsumexp(av.data() + base, s.len, s.inner);
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] = av[base + l * s.inner] - lse;
    }
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, s](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    const NArray& y = tp.value(self);
    NArray& ga = tp.grad(ia);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        double gsum = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) gsum += g[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = base + l * s.inner;
          const double p = y[idx] == kNegInf ? 0.0 : std::exp(y[idx]);
          ga[idx] += g[idx] - p * gsum;
        }
      }
  });
}

inline Var softmax(Var a, std::size_t axis) {
  using namespace detail;
  Tape& t = a.tape();
  const NArray& av = a.value();
  const AxisSplit s = split_axis(av.shape(), axis);
  NArray out(av.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      const double lse = lane_logsumexp(av.data() + base, s.len, s.inner);
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] = std::exp(av[base + l * s.inner] - lse);
    }
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, s](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    const NArray& y = tp.value(self);
    NArray& ga = tp.grad(ia);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) dot += g[base + l * s.inner] * y[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = base + l * s.inner;
          ga[idx] += y[idx] * (g[idx] - dot);
        }
      }
  });
}

// Reduces `axis` away.
inline Var logsumexp(Var a, std::size_t axis = 0) {
  using namespace detail;
  Tape& t = a.tape();
  const NArray& av = a.value();
  const AxisSplit s = split_axis(av.shape(), axis);
  NArray out(drop_axis(av.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i)
      out[o * s.inner + i] = lane_logsumexp(av.data() + o * s.len * s.inner + i, s.len, s.inner);
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, s](Tape& tp, int self) {
    const NArray& g = *tp.grad_if_any(self);
    const NArray& y = tp.value(self);
    const NArray& x = tp.value(ia);
    NArray& ga = tp.grad(ia);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const double lse = y[o * s.inner + i];
        const double go = g[o * s.inner + i];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = o * s.len * s.inner + l * s.inner + i;
          if (x[idx] != kNegInf) ga[idx] += go * std::exp(x[idx] - lse);
        }
      }
  });
}

inline Var sum(Var a) {
  Tape& t = a.tape();
  const NArray& av = a.value();
  double s = 0.0;
  for (double v : av.values()) s += v;
  const int ia = a.id();
  return t.record(NArray::scalar(s), a.requires_grad(), [ia](Tape& tp, int self) {
    const double g = tp.grad_if_any(self)->item();
    NArray& ga = tp.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

}  // namespace spanedit::ad
