#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>

#include "tdl/tensor.hpp"

// Differentiable tensor operations. Every op computes its forward value
// eagerly and, when a tape is active and some input is grad-linked, records
// a backward rule that accumulates into the input gradients. Broadcasting
// is NumPy-style: shapes are right-aligned and extent-1 axes stretch.

namespace tdl {

// -------------------- broadcast helpers --------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(strcat_msg(op, ": shapes ", shape_str(a), " and ",
                                  shape_str(b), " do not broadcast"));
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `shape` padded to the rank of `out_shape`, with 0 on stretched axes.
inline std::vector<int64_t> bcast_strides(const Shape& shape, const Shape& out_shape) {
  const size_t r = out_shape.size();
  const size_t pr = r - shape.size();
  const auto st = strides_of(shape);
  std::vector<int64_t> out(r, 0);
  for (size_t i = 0; i < shape.size(); ++i)
    out[pr + i] = (shape[i] == 1 && out_shape[pr + i] != 1) ? 0 : st[i];
  return out;
}

// Walks every element of out_shape; fn(out_flat, a_off, b_off).
template <typename F>
void for_each_broadcast(const Shape& out_shape, const std::vector<int64_t>& a_stride,
                        const std::vector<int64_t>& b_stride, F&& fn) {
  const size_t r = out_shape.size();
  const int64_t total = numel_of(out_shape);
  if (r == 0) {
    fn(int64_t(0), int64_t(0), int64_t(0));
    return;
  }
  std::vector<int64_t> idx(r, 0);
  int64_t ao = 0, bo = 0;
  for (int64_t flat = 0; flat < total; ++flat) {
    fn(flat, ao, bo);
    for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
      ++idx[d];
      ao += a_stride[d];
      bo += b_stride[d];
      if (idx[d] < out_shape[d]) break;
      ao -= a_stride[d] * out_shape[d];
      bo -= b_stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
}

// -------------------- tape plumbing --------------------

template <typename T>
inline bool tape_should_record(std::initializer_list<const Tensor<T>*> ins) {
  if (!Tape<T>::active()) return false;
  for (auto* p : ins)
    if (p->requires_grad()) return true;
  return false;
}

template <typename T>
inline void tape_record(const char* op, std::initializer_list<const Tensor<T>*> ins,
                        Tensor<T>& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  std::vector<ImplPtr<T>> impls;
  impls.reserve(ins.size());
  for (auto* p : ins) impls.push_back(p->impl());
  Tape<T>::active()->record(op, std::move(impls), out.impl(), std::move(fn));
}

// -------------------- elementwise binary ops --------------------

namespace detail {

template <typename T, typename FwdF, typename BwdF>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b,
                    FwdF fwd, BwdF bwd) {
  const Shape os = broadcast_shape(a.shape(), b.shape(), name);
  const auto as = bcast_strides(a.shape(), os);
  const auto bs = bcast_strides(b.shape(), os);
  Tensor<T> out = Tensor<T>::zeros(os);
  {
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.mutable_data().data();
    for_each_broadcast(os, as, bs, [&](int64_t o, int64_t ai, int64_t bi) {
      po[o] = fwd(pa[ai], pb[bi]);
    });
  }
  if (tape_should_record<T>({&a, &b})) {
    auto ai_ = a.impl();
    auto bi_ = b.impl();
    auto oi_ = out.impl();
    tape_record<T>(name, {&a, &b}, out, [ai_, bi_, oi_, os, as, bs, bwd]() {
      const bool ga = ai_->requires_grad;
      const bool gb = bi_->requires_grad;
      if (ga) ai_->ensure_grad();
      if (gb) bi_->ensure_grad();
      const T* pa = ai_->data.data();
      const T* pb = bi_->data.data();
      const T* g = oi_->grad.data();
      for_each_broadcast(os, as, bs, [&](int64_t o, int64_t aoff, int64_t boff) {
        T da, db;
        bwd(pa[aoff], pb[boff], g[o], da, db);
        if (ga) ai_->grad[aoff] += da;
        if (gb) bi_->grad[boff] += db;
      });
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g, T& da, T& db) { da = g; db = g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g, T& da, T& db) { da = g; db = -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g, T& da, T& db) { da = g * y; db = g * x; });
}

template <typename T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T x, T y, T g, T& da, T& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

// -------------------- elementwise unary ops --------------------

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  {
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = c * px[i];
  }
  if (tape_should_record<T>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape_record<T>("scale", {&x}, out, [xi, oi, c]() {
      xi->ensure_grad();
      for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += c * oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  {
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = px[i] + c;
  }
  if (tape_should_record<T>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape_record<T>("add_scalar", {&x}, out, [xi, oi]() {
      xi->ensure_grad();
      for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

namespace detail {

template <typename T, typename FwdF, typename GradF>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, FwdF fwd, GradF dfdx) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  {
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = fwd(px[i]);
  }
  if (tape_should_record<T>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape_record<T>(name, {&x}, out, [xi, oi, dfdx]() {
      xi->ensure_grad();
      for (size_t i = 0; i < xi->grad.size(); ++i)
        xi->grad[i] += oi->grad[i] * dfdx(xi->data[i], oi->data[i]);
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

// GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubicCoeff = 0.044715;

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T k = static_cast<T>(kGeluSqrt2OverPi);
  const T c = static_cast<T>(kGeluCubicCoeff);
  return detail::unary_op<T>(
      "gelu", x,
      [k, c](T v) {
        const T u = k * (v + c * v * v * v);
        return T(0.5) * v * (T(1) + std::tanh(u));
      },
      [k, c](T v, T) {
        const T u = k * (v + c * v * v * v);
        const T t = std::tanh(u);
        const T du = k * (T(1) + T(3) * c * v * v);
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
      });
}

// -------------------- shape ops --------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (numel_of(new_shape) != x.numel())
    throw ShapeError(strcat_msg("reshape: ", shape_str(x.shape()), " to ",
                                shape_str(new_shape), " changes element count"));
  Tensor<T> out(new_shape, std::vector<T>(x.data().begin(), x.data().end()));
  if (tape_should_record<T>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape_record<T>("reshape", {&x}, out, [xi, oi]() {
      xi->ensure_grad();
      for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::vector<int64_t> axes) {
  const size_t r = x.shape().size();
  if (axes.size() != r)
    throw ShapeError(strcat_msg("permute: got ", axes.size(), " axes for rank ", r));
  std::vector<bool> seen(r, false);
  Shape os(r);
  for (size_t i = 0; i < r; ++i) {
    const int64_t a = axes[i];
    if (a < 0 || a >= static_cast<int64_t>(r) || seen[a])
      throw ShapeError("permute: axes are not a permutation");
    seen[a] = true;
    os[i] = x.shape()[a];
  }
  // Walk output in order; input offset follows the permuted strides.
  const auto in_st = strides_of(x.shape());
  std::vector<int64_t> walk_st(r);
  for (size_t i = 0; i < r; ++i) walk_st[i] = in_st[axes[i]];

  Tensor<T> out = Tensor<T>::zeros(os);
  {
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    const std::vector<int64_t> zero(r, 0);
    for_each_broadcast(os, walk_st, zero,
                       [&](int64_t o, int64_t ii, int64_t) { po[o] = px[ii]; });
  }
  if (tape_should_record<T>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape_record<T>("permute", {&x}, out, [xi, oi, os, walk_st]() {
      xi->ensure_grad();
      const std::vector<int64_t> zero(os.size(), 0);
      for_each_broadcast(os, walk_st, zero, [&](int64_t o, int64_t ii, int64_t) {
        xi->grad[ii] += oi->grad[o];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int64_t axis, int64_t start, int64_t len) {
  const int64_t r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("narrow: axis out of range");
  const int64_t dim = x.shape()[axis];
  if (start < 0 || len < 0 || start + len > dim)
    throw ShapeError(strcat_msg("narrow: [", start, ",", start + len,
                                ") outside extent ", dim));
  Shape os = x.shape();
  os[axis] = len;
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (int64_t i = axis + 1; i < r; ++i) inner *= x.shape()[i];

  Tensor<T> out = Tensor<T>::zeros(os);
  {
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(po + o * len * inner, px + (o * dim + start) * inner,
                  static_cast<size_t>(len * inner) * sizeof(T));
  }
  if (tape_should_record<T>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape_record<T>("narrow", {&x}, out, [xi, oi, outer, inner, dim, start, len]() {
      xi->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        T* gx = xi->grad.data() + (o * dim + start) * inner;
        const T* g = oi->grad.data() + o * len * inner;
        for (int64_t i = 0; i < len * inner; ++i) gx[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int64_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int64_t r = parts[0].rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
  Shape os = parts[0].shape();
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int64_t i = 0; i < r; ++i)
      if (i != axis && p.shape()[i] != os[i])
        throw ShapeError(strcat_msg("concat: shapes ", shape_str(os), " and ",
                                    shape_str(p.shape()), " differ off-axis"));
    total += p.shape()[axis];
  }
  os[axis] = total;
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= os[i];
  for (int64_t i = axis + 1; i < r; ++i) inner *= os[i];

  Tensor<T> out = Tensor<T>::zeros(os);
  {
    T* po = out.mutable_data().data();
    int64_t at = 0;
    for (const auto& p : parts) {
      const int64_t len = p.shape()[axis];
      const T* px = p.data().data();
      for (int64_t o = 0; o < outer; ++o)
        std::memcpy(po + (o * total + at) * inner, px + o * len * inner,
                    static_cast<size_t>(len * inner) * sizeof(T));
      at += len;
    }
  }
  bool rec = Tape<T>::active() != nullptr;
  if (rec) {
    rec = false;
    for (const auto& p : parts) rec = rec || p.requires_grad();
  }
  if (rec) {
    out.set_requires_grad(true);
    std::vector<ImplPtr<T>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    auto oi = out.impl();
    auto fn = [impls, oi, outer, inner, total, axis]() {
      int64_t at = 0;
      for (const auto& pi : impls) {
        const int64_t len = pi->shape[axis];
        if (pi->requires_grad) {
          pi->ensure_grad();
          for (int64_t o = 0; o < outer; ++o) {
            T* gx = pi->grad.data() + o * len * inner;
            const T* g = oi->grad.data() + (o * total + at) * inner;
            for (int64_t i = 0; i < len * inner; ++i) gx[i] += g[i];
          }
        }
        at += len;
      }
    };
    Tape<T>::active()->record("concat", std::move(impls), out.impl(), std::move(fn));
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, int64_t axis,
                             const std::vector<int64_t>& sizes) {
  const int64_t r = x.rank();
  int64_t ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) throw ShapeError("split: axis out of range");
  int64_t total = 0;
  for (int64_t s : sizes) total += s;
  if (total != x.shape()[ax])
    throw ShapeError(strcat_msg("split: sizes sum to ", total, ", extent is ",
                                x.shape()[ax]));
  std::vector<Tensor<T>> out;
  int64_t at = 0;
  for (int64_t s : sizes) {
    out.push_back(narrow(x, ax, at, s));
    at += s;
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_equal(const Tensor<T>& x, int64_t axis, int64_t parts) {
  const int64_t r = x.rank();
  int64_t ax = axis < 0 ? axis + r : axis;
  const int64_t dim = x.shape()[ax];
  if (parts <= 0 || dim % parts != 0)
    throw ShapeError(strcat_msg("split: extent ", dim, " not divisible by ", parts));
  return split(x, ax, std::vector<int64_t>(parts, dim / parts));
}

// -------------------- reductions --------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::vector<int64_t> axes, bool keepdims = false) {
  const int64_t r = x.rank();
  std::vector<bool> reduced(r, false);
  for (int64_t a : axes) {
    if (a < 0) a += r;
    if (a < 0 || a >= r) throw ShapeError("sum: axis out of range");
    reduced[a] = true;
  }
  Shape kept(r);
  for (int64_t i = 0; i < r; ++i) kept[i] = reduced[i] ? 1 : x.shape()[i];
  Shape os;
  for (int64_t i = 0; i < r; ++i)
    if (!reduced[i])
      os.push_back(x.shape()[i]);
    else if (keepdims)
      os.push_back(1);

  // Iterate over x; the output offset uses stride 0 on reduced axes.
  const auto out_st_kept = strides_of(kept);
  std::vector<int64_t> gather_st(r, 0);
  for (int64_t i = 0; i < r; ++i) gather_st[i] = reduced[i] ? 0 : out_st_kept[i];

  Tensor<T> out = Tensor<T>::zeros(os);
  {
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    const auto x_st = strides_of(x.shape());
    for_each_broadcast(x.shape(), gather_st, x_st,
                       [&](int64_t, int64_t ooff, int64_t xoff) { po[ooff] += px[xoff]; });
  }
  if (tape_should_record<T>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    const Shape xs = x.shape();
    tape_record<T>("sum", {&x}, out, [xi, oi, xs, gather_st]() {
      xi->ensure_grad();
      const auto x_st = strides_of(xs);
      for_each_broadcast(xs, gather_st, x_st, [&](int64_t, int64_t ooff, int64_t xoff) {
        xi->grad[xoff] += oi->grad[ooff];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  std::vector<int64_t> axes(x.rank());
  for (int64_t i = 0; i < x.rank(); ++i) axes[i] = i;
  return sum(x, axes, false);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::vector<int64_t> axes, bool keepdims = false) {
  int64_t n = 1;
  const int64_t r = x.rank();
  for (int64_t a : axes) n *= x.shape()[a < 0 ? a + r : a];
  return scale(sum(x, std::move(axes), keepdims), T(1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// -------------------- matmul / linear --------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError(strcat_msg("matmul: need rank >= 2, got ", shape_str(a.shape()),
                                " and ", shape_str(b.shape())));
  const int64_t m = a.shape()[a.rank() - 2];
  const int64_t k = a.shape()[a.rank() - 1];
  const int64_t kb = b.shape()[b.rank() - 2];
  const int64_t n = b.shape()[b.rank() - 1];
  if (k != kb)
    throw ShapeError(strcat_msg("matmul: inner extents disagree: ",
                                shape_str(a.shape()), " x ", shape_str(b.shape())));
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shape(a_batch, b_batch, "matmul");
  Shape os = batch;
  os.push_back(m);
  os.push_back(n);

  const auto a_bst = bcast_strides(a_batch, batch);
  const auto b_bst = bcast_strides(b_batch, batch);
  const int64_t nbatch = numel_of(batch);

  Tensor<T> out = Tensor<T>::zeros(os);
  {
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.mutable_data().data();
    int64_t bi = 0;
    for_each_broadcast(batch, a_bst, b_bst, [&](int64_t, int64_t ao, int64_t bo) {
      const T* A = pa + ao * m * k;
      const T* B = pb + bo * k * n;
      T* O = po + bi * m * n;
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
          const T av = A[i * k + kk];
          if (av == T(0)) continue;
          const T* Br = B + kk * n;
          T* Or = O + i * n;
          for (int64_t j = 0; j < n; ++j) Or[j] += av * Br[j];
        }
      ++bi;
    });
    (void)nbatch;
  }
  if (tape_should_record<T>({&a, &b})) {
    auto ai_ = a.impl();
    auto bi_ = b.impl();
    auto oi_ = out.impl();
    tape_record<T>("matmul", {&a, &b}, out,
                   [ai_, bi_, oi_, batch, a_bst, b_bst, m, n, k]() {
      const bool ga = ai_->requires_grad;
      const bool gb = bi_->requires_grad;
      if (ga) ai_->ensure_grad();
      if (gb) bi_->ensure_grad();
      const T corrupt = debug::corrupt_matmul_backward ? T(1.01) : T(1);
      const T* pa = ai_->data.data();
      const T* pb = bi_->data.data();
      const T* pg = oi_->grad.data();
      int64_t bidx = 0;
      for_each_broadcast(batch, a_bst, b_bst, [&](int64_t, int64_t ao, int64_t bo) {
        const T* A = pa + ao * m * k;
        const T* B = pb + bo * k * n;
        const T* G = pg + bidx * m * n;
        if (ga) {
          // dA = dC * B^T
          T* dA = ai_->grad.data() + ao * m * k;
          for (int64_t i = 0; i < m; ++i)
            for (int64_t kk = 0; kk < k; ++kk) {
              T acc = T(0);
              const T* Gr = G + i * n;
              const T* Br = B + kk * n;
              for (int64_t j = 0; j < n; ++j) acc += Gr[j] * Br[j];
              dA[i * k + kk] += corrupt * acc;
            }
        }
        if (gb) {
          // dB = A^T * dC
          T* dB = bi_->grad.data() + bo * k * n;
          for (int64_t kk = 0; kk < k; ++kk)
            for (int64_t i = 0; i < m; ++i) {
              const T av = A[i * k + kk];
              if (av == T(0)) continue;
              const T* Gr = G + i * n;
              T* dBr = dB + kk * n;
              for (int64_t j = 0; j < n; ++j) dBr[j] += av * Gr[j];
            }
        }
        ++bidx;
      });
    });
  }
  return out;
}

// x[.., in] * W[in, out] + b[out], broadcast over leading axes. Pass an
// undefined bias tensor to skip the bias.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
  if (w.rank() != 2)
    throw ShapeError(strcat_msg("linear: weight must be rank 2, got ",
                                shape_str(w.shape())));
  const int64_t in = w.shape()[0];
  const int64_t out_dim = w.shape()[1];
  if (x.rank() < 1 || x.shape().back() != in)
    throw ShapeError(strcat_msg("linear: input ", shape_str(x.shape()),
                                " does not match weight ", shape_str(w.shape())));
  if (b.defined() && (b.rank() != 1 || b.shape()[0] != out_dim))
    throw ShapeError(strcat_msg("linear: bias ", shape_str(b.shape()),
                                " does not match weight ", shape_str(w.shape())));
  const int64_t rows = x.numel() / in;
  Tensor<T> flat = reshape(x, {rows, in});
  Tensor<T> y = matmul(flat, w);
  Shape os = x.shape();
  os.back() = out_dim;
  y = reshape(y, os);
  if (b.defined()) y = add(y, b);
  return y;
}

// -------------------- softmax family --------------------

namespace detail {

inline int64_t normalize_axis(int64_t axis, int64_t rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ShapeError(strcat_msg(op, ": axis out of range for rank ", rank));
  return axis;
}

// Decompose shape into [outer, C, inner] around `axis`.
struct AxisLanes {
  int64_t outer, c, inner;
};

inline AxisLanes lanes_of(const Shape& s, int64_t axis) {
  AxisLanes l{1, s[axis], 1};
  for (int64_t i = 0; i < axis; ++i) l.outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

}  // namespace detail

// Max-subtracted softmax along `axis`; slices along the axis sum to 1.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int64_t axis) {
  const int64_t ax = detail::normalize_axis(axis, x.rank(), "softmax");
  const auto l = detail::lanes_of(x.shape(), ax);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  {
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    for (int64_t o = 0; o < l.outer; ++o)
      for (int64_t in = 0; in < l.inner; ++in) {
        const int64_t base = o * l.c * l.inner + in;
        T mx = px[base];
        for (int64_t c = 1; c < l.c; ++c)
          mx = std::max(mx, px[base + c * l.inner]);
        T denom = T(0);
        for (int64_t c = 0; c < l.c; ++c) {
          const T e = std::exp(px[base + c * l.inner] - mx);
          po[base + c * l.inner] = e;
          denom += e;
        }
        for (int64_t c = 0; c < l.c; ++c) po[base + c * l.inner] /= denom;
      }
  }
  if (tape_should_record<T>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape_record<T>("softmax", {&x}, out, [xi, oi, l]() {
      xi->ensure_grad();
      const T* y = oi->data.data();
      const T* g = oi->grad.data();
      for (int64_t o = 0; o < l.outer; ++o)
        for (int64_t in = 0; in < l.inner; ++in) {
          const int64_t base = o * l.c * l.inner + in;
          T dot = T(0);
          for (int64_t c = 0; c < l.c; ++c)
            dot += g[base + c * l.inner] * y[base + c * l.inner];
          for (int64_t c = 0; c < l.c; ++c) {
            const int64_t i = base + c * l.inner;
            xi->grad[i] += y[i] * (g[i] - dot);
          }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int64_t axis) {
  const int64_t ax = detail::normalize_axis(axis, x.rank(), "log_softmax");
  const auto l = detail::lanes_of(x.shape(), ax);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  {
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    for (int64_t o = 0; o < l.outer; ++o)
      for (int64_t in = 0; in < l.inner; ++in) {
        const int64_t base = o * l.c * l.inner + in;
        T mx = px[base];
        for (int64_t c = 1; c < l.c; ++c)
          mx = std::max(mx, px[base + c * l.inner]);
        T denom = T(0);
        for (int64_t c = 0; c < l.c; ++c) denom += std::exp(px[base + c * l.inner] - mx);
        const T lse = mx + std::log(denom);
        for (int64_t c = 0; c < l.c; ++c)
          po[base + c * l.inner] = px[base + c * l.inner] - lse;
      }
  }
  if (tape_should_record<T>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape_record<T>("log_softmax", {&x}, out, [xi, oi, l]() {
      xi->ensure_grad();
      const T* y = oi->data.data();
      const T* g = oi->grad.data();
      for (int64_t o = 0; o < l.outer; ++o)
        for (int64_t in = 0; in < l.inner; ++in) {
          const int64_t base = o * l.c * l.inner + in;
          T gsum = T(0);
          for (int64_t c = 0; c < l.c; ++c) gsum += g[base + c * l.inner];
          for (int64_t c = 0; c < l.c; ++c) {
            const int64_t i = base + c * l.inner;
            xi->grad[i] += g[i] - std::exp(y[i]) * gsum;
          }
        }
    });
  }
  return out;
}

// -------------------- layer normalization --------------------

// Per-token normalization over the last axis, then affine. Uses the biased
// variance; eps sits inside the square root.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-5)) {
  const int64_t c = x.shape().back();
  if (gamma.rank() != 1 || gamma.shape()[0] != c || beta.rank() != 1 ||
      beta.shape()[0] != c)
    throw ShapeError(strcat_msg("layernorm: affine shapes ", shape_str(gamma.shape()),
                                "/", shape_str(beta.shape()),
                                " do not match channel extent ", c));
  const int64_t rows = x.numel() / c;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  {
    const T* px = x.data().data();
    const T* pg = gamma.data().data();
    const T* pb = beta.data().data();
    T* po = out.mutable_data().data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = px + r * c;
      T mu = T(0);
      for (int64_t i = 0; i < c; ++i) mu += row[i];
      mu /= static_cast<T>(c);
      T var = T(0);
      for (int64_t i = 0; i < c; ++i) {
        const T d = row[i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(c);
      const T is = T(1) / std::sqrt(var + eps);
      (*inv_std)[r] = is;
      for (int64_t i = 0; i < c; ++i) {
        const T xh = (row[i] - mu) * is;
        (*xhat)[r * c + i] = xh;
        po[r * c + i] = pg[i] * xh + pb[i];
      }
    }
  }
  if (tape_should_record<T>({&x, &gamma, &beta})) {
    auto xi = x.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    auto oi = out.impl();
    tape_record<T>("layernorm", {&x, &gamma, &beta}, out,
                   [xi, gi, bi, oi, xhat, inv_std, rows, c]() {
      const bool gx = xi->requires_grad;
      const bool gg = gi->requires_grad;
      const bool gb = bi->requires_grad;
      if (gx) xi->ensure_grad();
      if (gg) gi->ensure_grad();
      if (gb) bi->ensure_grad();
      const T* g = oi->grad.data();
      const T* gam = gi->data.data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* grow = g + r * c;
        const T* xh = xhat->data() + r * c;
        if (gg || gb) {
          for (int64_t i = 0; i < c; ++i) {
            if (gg) gi->grad[i] += grow[i] * xh[i];
            if (gb) bi->grad[i] += grow[i];
          }
        }
        if (gx) {
          T m1 = T(0), m2 = T(0);
          for (int64_t i = 0; i < c; ++i) {
            const T dxh = grow[i] * gam[i];
            m1 += dxh;
            m2 += dxh * xh[i];
          }
          m1 /= static_cast<T>(c);
          m2 /= static_cast<T>(c);
          const T is = (*inv_std)[r];
          for (int64_t i = 0; i < c; ++i) {
            const T dxh = grow[i] * gam[i];
            xi->grad[r * c + i] += is * (dxh - m1 - xh[i] * m2);
          }
        }
      }
    });
  }
  return out;
}

// -------------------- indexed lookup --------------------

// Row gather: out[i, :] = table[indices[i], :]. Backward scatter-adds into
// the table, which is how the relative position bias table learns.
template <typename T>
Tensor<T> take_rows(const Tensor<T>& table, const std::vector<int64_t>& indices) {
  if (table.rank() != 2)
    throw ShapeError(strcat_msg("take_rows: table must be rank 2, got ",
                                shape_str(table.shape())));
  const int64_t n = table.shape()[0];
  const int64_t c = table.shape()[1];
  for (int64_t ix : indices)
    if (ix < 0 || ix >= n)
      throw ShapeError(strcat_msg("take_rows: index ", ix, " outside table of ", n));
  const int64_t k = static_cast<int64_t>(indices.size());
  Tensor<T> out = Tensor<T>::zeros({k, c});
  {
    const T* pt = table.data().data();
    T* po = out.mutable_data().data();
    for (int64_t i = 0; i < k; ++i)
      std::memcpy(po + i * c, pt + indices[i] * c, static_cast<size_t>(c) * sizeof(T));
  }
  if (tape_should_record<T>({&table})) {
    auto ti = table.impl();
    auto oi = out.impl();
    tape_record<T>("take_rows", {&table}, out, [ti, oi, indices, c]() {
      ti->ensure_grad();
      for (size_t i = 0; i < indices.size(); ++i) {
        const T* g = oi->grad.data() + static_cast<int64_t>(i) * c;
        T* gt = ti->grad.data() + indices[i] * c;
        for (int64_t j = 0; j < c; ++j) gt[j] += g[j];
      }
    });
  }
  return out;
}

// -------------------- bilinear upsampling --------------------

// x[B,H,W,C] -> [B, rH, rW, C], half-pixel-centre sampling with edge clamp.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int64_t factor) {
  if (x.rank() != 4)
    throw ShapeError(strcat_msg("bilinear_upsample: need [B,H,W,C], got ",
                                shape_str(x.shape())));
  if (factor < 1) throw ShapeError("bilinear_upsample: factor must be >= 1");
  const int64_t b = x.shape()[0], h = x.shape()[1], w = x.shape()[2], c = x.shape()[3];
  const int64_t oh = h * factor, ow = w * factor;

  struct Taps {
    int64_t lo, hi;
    T w_hi;
  };
  auto make_taps = [factor](int64_t out_len, int64_t in_len) {
    std::vector<Taps> taps(static_cast<size_t>(out_len));
    for (int64_t o = 0; o < out_len; ++o) {
      double s = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
      s = std::max(0.0, std::min(s, static_cast<double>(in_len - 1)));
      const int64_t lo = static_cast<int64_t>(std::floor(s));
      const int64_t hi = std::min(lo + 1, in_len - 1);
      taps[o] = {lo, hi, static_cast<T>(s - static_cast<double>(lo))};
    }
    return taps;
  };
  const auto ty = make_taps(oh, h);
  const auto tx = make_taps(ow, w);

  Tensor<T> out = Tensor<T>::zeros({b, oh, ow, c});
  {
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    for (int64_t bb = 0; bb < b; ++bb)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          const auto& yy = ty[oy];
          const auto& xx = tx[ox];
          const T w00 = (T(1) - yy.w_hi) * (T(1) - xx.w_hi);
          const T w01 = (T(1) - yy.w_hi) * xx.w_hi;
          const T w10 = yy.w_hi * (T(1) - xx.w_hi);
          const T w11 = yy.w_hi * xx.w_hi;
          const T* r00 = px + ((bb * h + yy.lo) * w + xx.lo) * c;
          const T* r01 = px + ((bb * h + yy.lo) * w + xx.hi) * c;
          const T* r10 = px + ((bb * h + yy.hi) * w + xx.lo) * c;
          const T* r11 = px + ((bb * h + yy.hi) * w + xx.hi) * c;
          T* o = po + ((bb * oh + oy) * ow + ox) * c;
          for (int64_t ch = 0; ch < c; ++ch)
            o[ch] = w00 * r00[ch] + w01 * r01[ch] + w10 * r10[ch] + w11 * r11[ch];
        }
  }
  if (tape_should_record<T>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape_record<T>("bilinear_upsample", {&x}, out, [xi, oi, ty, tx, b, h, w, c, oh, ow]() {
      xi->ensure_grad();
      const T* g = oi->grad.data();
      for (int64_t bb = 0; bb < b; ++bb)
        for (int64_t oy = 0; oy < oh; ++oy)
          for (int64_t ox = 0; ox < ow; ++ox) {
            const auto& yy = ty[oy];
            const auto& xx = tx[ox];
            const T w00 = (T(1) - yy.w_hi) * (T(1) - xx.w_hi);
            const T w01 = (T(1) - yy.w_hi) * xx.w_hi;
            const T w10 = yy.w_hi * (T(1) - xx.w_hi);
            const T w11 = yy.w_hi * xx.w_hi;
            const T* go = g + ((bb * oh + oy) * ow + ox) * c;
            T* g00 = xi->grad.data() + ((bb * h + yy.lo) * w + xx.lo) * c;
            T* g01 = xi->grad.data() + ((bb * h + yy.lo) * w + xx.hi) * c;
            T* g10 = xi->grad.data() + ((bb * h + yy.hi) * w + xx.lo) * c;
            T* g11 = xi->grad.data() + ((bb * h + yy.hi) * w + xx.hi) * c;
            for (int64_t ch = 0; ch < c; ++ch) {
              g00[ch] += w00 * go[ch];
              g01[ch] += w01 * go[ch];
              g10[ch] += w10 * go[ch];
              g11[ch] += w11 * go[ch];
            }
          }
    });
  }
  return out;
}

}  // namespace tdl
