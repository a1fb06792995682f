#pragma once

#include "tdl/params.hpp"

// Shifted-window attention machinery: window partition/reverse, cyclic
// shifting, relative position bias, the additive region mask, windowed
// multi-head self-attention, and the two-block (plain + shifted) recurrence.

namespace tdl {

// Additive mask value for forbidden attention pairs. Large enough to zero
// the softmax weight, finite so gradients stay finite.
inline constexpr double kAttnMaskValue = -100.0;

// Largest window side m <= min(pref, h, w) that divides both grid extents.
// Falls back to 1 (always a divisor), so the result is well defined.
inline int64_t clamp_window(int64_t pref, int64_t h, int64_t w) {
  int64_t m = std::min(pref, std::min(h, w));
  while (m > 1 && (h % m != 0 || w % m != 0)) --m;
  return m;
}

// [B,H,W,C] -> [B*nW, M*M, C]; windows row-major over the window grid,
// tokens row-major within each window.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, int64_t m) {
  if (x.rank() != 4)
    throw ShapeError(strcat_msg("window_partition: need [B,H,W,C], got ",
                                shape_str(x.shape())));
  const int64_t b = x.shape()[0], h = x.shape()[1], w = x.shape()[2], c = x.shape()[3];
  if (h % m != 0 || w % m != 0)
    throw ShapeError(strcat_msg("window_partition: grid ", h, "x", w,
                                " not divisible by window ", m));
  Tensor<T> t = reshape(x, {b, h / m, m, w / m, m, c});
  t = permute(t, {0, 1, 3, 2, 4, 5});  // [B, nH, nW, M, M, C]
  return reshape(t, {b * (h / m) * (w / m), m * m, c});
}

// Exact inverse of window_partition.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& wins, int64_t h, int64_t w, int64_t m) {
  if (wins.rank() != 3 || wins.shape()[1] != m * m)
    throw ShapeError(strcat_msg("window_reverse: need [B*nW,", m * m, ",C], got ",
                                shape_str(wins.shape())));
  const int64_t n_wins = (h / m) * (w / m);
  if (n_wins == 0 || wins.shape()[0] % n_wins != 0)
    throw ShapeError(strcat_msg("window_reverse: ", wins.shape()[0],
                                " windows do not tile a ", h, "x", w, " grid"));
  const int64_t b = wins.shape()[0] / n_wins;
  const int64_t c = wins.shape()[2];
  Tensor<T> t = reshape(wins, {b, h / m, w / m, m, m, c});
  t = permute(t, {0, 1, 3, 2, 4, 5});  // [B, nH, M, nW, M, C]
  return reshape(t, {b, h, w, c});
}

// Toroidal roll of the spatial axes of [B,H,W,C]: the row that was at
// index r moves to (r + shift_h) mod H, likewise for columns. Built from
// narrow+concat so it is differentiable and bit-exactly invertible.
template <typename T>
Tensor<T> roll2d(const Tensor<T>& x, int64_t shift_h, int64_t shift_w) {
  if (x.rank() != 4)
    throw ShapeError(strcat_msg("roll2d: need [B,H,W,C], got ", shape_str(x.shape())));
  Tensor<T> t = x;
  const int64_t ext[2] = {x.shape()[1], x.shape()[2]};
  const int64_t shift[2] = {shift_h, shift_w};
  for (int axis = 0; axis < 2; ++axis) {
    const int64_t n = ext[axis];
    const int64_t s = ((shift[axis] % n) + n) % n;
    if (s == 0) continue;
    Tensor<T> tail = narrow(t, axis + 1, n - s, s);
    Tensor<T> head = narrow(t, axis + 1, 0, n - s);
    t = concat<T>({tail, head}, axis + 1);
  }
  return t;
}

// Shift for windowed attention: roll by (-s, -s); undone by cyclic_shift(-s).
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, int64_t s) {
  return roll2d(x, -s, -s);
}

// index[i*M*M + j] = (dh + M-1)*(2M-1) + (dw + M-1), where (dh, dw) is the
// in-window coordinate of token i minus that of token j.
inline std::vector<int64_t> relative_position_index(int64_t m) {
  const int64_t p = m * m;
  std::vector<int64_t> index(static_cast<size_t>(p * p));
  for (int64_t i = 0; i < p; ++i)
    for (int64_t j = 0; j < p; ++j) {
      const int64_t dh = i / m - j / m;
      const int64_t dw = i % m - j % m;
      index[static_cast<size_t>(i * p + j)] = (dh + m - 1) * (2 * m - 1) + (dw + m - 1);
    }
  return index;
}

// Additive attention mask [nW, M², M²] for the shifted layout. Grid cells
// are labelled by the 3x3 slicing of the shifted frame at the window and
// shift boundaries ((0, H-M), (H-M, H-s), (H-s, H), same for columns); the
// labels are window-partitioned, and token pairs whose labels differ get
// kAttnMaskValue. Pairs are allowed iff both tokens came from the same
// contiguous region of the unshifted grid.
template <typename T>
Tensor<T> build_shift_mask(int64_t h, int64_t w, int64_t m, int64_t s) {
  const int64_t n_wins = (h / m) * (w / m);
  const int64_t p = m * m;
  Tensor<T> mask = Tensor<T>::zeros({n_wins, p, p});
  if (s == 0) return mask;

  std::vector<int> labels(static_cast<size_t>(h * w));
  const int64_t h_cuts[4] = {0, h - m, h - s, h};
  const int64_t w_cuts[4] = {0, w - m, w - s, w};
  int label = 0;
  for (int hs = 0; hs < 3; ++hs)
    for (int ws = 0; ws < 3; ++ws) {
      for (int64_t r = h_cuts[hs]; r < h_cuts[hs + 1]; ++r)
        for (int64_t c = w_cuts[ws]; c < w_cuts[ws + 1]; ++c)
          labels[static_cast<size_t>(r * w + c)] = label;
      ++label;
    }

  T* md = mask.mutable_data().data();
  for (int64_t wr = 0; wr < h / m; ++wr)
    for (int64_t wc = 0; wc < w / m; ++wc) {
      const int64_t win = wr * (w / m) + wc;
      for (int64_t i = 0; i < p; ++i)
        for (int64_t j = 0; j < p; ++j) {
          const int64_t ri = wr * m + i / m, ci = wc * m + i % m;
          const int64_t rj = wr * m + j / m, cj = wc * m + j % m;
          if (labels[static_cast<size_t>(ri * w + ci)] !=
              labels[static_cast<size_t>(rj * w + cj)])
            md[(win * p + i) * p + j] = static_cast<T>(kAttnMaskValue);
        }
    }
  return mask;
}

// Windowed multi-head self-attention with learned relative position bias.
// Q, K, V come from one fused [C, 3C] projection; per head,
// softmax(QK^T/sqrt(d) + bias (+ mask)) V; heads are concatenated and
// projected back to C.
template <typename T>
struct WindowAttention {
  int64_t dim = 0, heads = 0, window = 0;
  Linear<T> qkv;   // C -> 3C, bias
  Linear<T> proj;  // C -> C, bias
  Tensor<T> bias_table;             // [(2M-1)^2, heads], zero-init
  std::vector<int64_t> bias_index;  // length M^4

  WindowAttention() = default;
  WindowAttention(int64_t dim_, int64_t heads_, int64_t window_, Rng& rng)
      : dim(dim_),
        heads(heads_),
        window(window_),
        qkv(dim_, 3 * dim_, true, rng),
        proj(dim_, dim_, true, rng) {
    if (dim % heads != 0)
      throw ConfigError(strcat_msg("attention: dim ", dim, " not divisible by ",
                                   heads, " heads"));
    const int64_t span = 2 * window - 1;
    bias_table = Tensor<T>::zeros({span * span, heads}, true);
    bias_index = relative_position_index(window);
  }

  // x: [B*nW, M², C]; mask: [nW, M², M²] or undefined.
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& mask) const {
    const int64_t bnw = x.shape()[0];
    const int64_t p = window * window;
    const int64_t d = dim / heads;

    Tensor<T> t = qkv.forward(x);                            // [bnw, P, 3C]
    t = reshape(t, {bnw, p, 3, heads, d});
    t = permute(t, {2, 0, 3, 1, 4});                         // [3, bnw, h, P, d]
    auto parts = split_equal(t, 0, 3);
    Tensor<T> q = reshape(parts[0], {bnw, heads, p, d});
    Tensor<T> k = reshape(parts[1], {bnw, heads, p, d});
    Tensor<T> v = reshape(parts[2], {bnw, heads, p, d});

    q = scale(q, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
    Tensor<T> attn = matmul(q, permute(k, {0, 1, 3, 2}));    // [bnw, h, P, P]

    Tensor<T> bias = take_rows(bias_table, bias_index);      // [P*P, h]
    bias = permute(reshape(bias, {p, p, heads}), {2, 0, 1});
    attn = add(attn, reshape(bias, {1, heads, p, p}));

    if (mask.defined()) {
      const int64_t n_wins = mask.shape()[0];
      const int64_t b = bnw / n_wins;
      attn = reshape(attn, {b, n_wins, heads, p, p});
      attn = add(attn, reshape(mask, {1, n_wins, 1, p, p}));
      attn = reshape(attn, {bnw, heads, p, p});
    }

    attn = softmax(attn, -1);
    Tensor<T> out = matmul(attn, v);                         // [bnw, h, P, d]
    out = reshape(permute(out, {0, 2, 1, 3}), {bnw, p, dim});
    return proj.forward(out);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    qkv.collect(prefix + ".qkv", out);
    proj.collect(prefix + ".proj", out);
    out.push_back({prefix + ".bias_table", bias_table, false});
  }
};

template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;

  Mlp() = default;
  Mlp(int64_t dim, int64_t ratio, Rng& rng)
      : fc1(dim, ratio * dim, true, rng), fc2(ratio * dim, dim, true, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return fc2.forward(gelu(fc1.forward(x)));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

// One transformer block on a fixed token grid:
//   x + Attn(LN(x)) followed by  x + MLP(LN(x)),
// where Attn is W-MSA (shift 0) or SW-MSA (cyclic shift by floor(M'/2) with
// the region mask). The preferred window size is clamped to the largest
// divisor of the grid; mask and window geometry are fixed at construction.
template <typename T>
struct SwinBlock {
  int64_t h = 0, w = 0, dim = 0;
  int64_t window = 0, shift = 0;
  LayerNorm<T> norm1, norm2;
  WindowAttention<T> attn;
  Mlp<T> mlp;
  Tensor<T> mask;  // defined iff shift > 0

  SwinBlock() = default;
  SwinBlock(int64_t h_, int64_t w_, int64_t dim_, int64_t heads, int64_t window_pref,
            bool shifted, int64_t mlp_ratio, Rng& rng)
      : h(h_), w(w_), dim(dim_) {
    window = clamp_window(window_pref, h, w);
    shift = shifted ? window / 2 : 0;
    norm1 = LayerNorm<T>(dim);
    norm2 = LayerNorm<T>(dim);
    attn = WindowAttention<T>(dim, heads, window, rng);
    mlp = Mlp<T>(dim, mlp_ratio, rng);
    if (shift > 0) mask = build_shift_mask<T>(h, w, window, shift);
  }

  // x: [B, H*W, C].
  Tensor<T> forward(const Tensor<T>& x) const {
    const int64_t b = x.shape()[0];
    Tensor<T> y = norm1.forward(x);
    y = reshape(y, {b, h, w, dim});
    if (shift > 0) y = cyclic_shift(y, shift);
    y = window_partition(y, window);
    y = attn.forward(y, mask);
    y = window_reverse(y, h, w, window);
    if (shift > 0) y = cyclic_shift(y, -shift);
    y = reshape(y, {b, h * w, dim});
    Tensor<T> z = add(x, y);
    return add(z, mlp.forward(norm2.forward(z)));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    norm1.collect(prefix + ".norm1", out);
    attn.collect(prefix + ".attn", out);
    norm2.collect(prefix + ".norm2", out);
    mlp.collect(prefix + ".mlp", out);
  }
};

// The two-block recurrence: a plain-window block followed by a
// shifted-window block with the same geometry.
template <typename T>
struct SwinBlockPair {
  SwinBlock<T> plain, shifted;

  SwinBlockPair() = default;
  SwinBlockPair(int64_t h, int64_t w, int64_t dim, int64_t heads, int64_t window_pref,
                int64_t mlp_ratio, Rng& rng)
      : plain(h, w, dim, heads, window_pref, false, mlp_ratio, rng),
        shifted(h, w, dim, heads, window_pref, true, mlp_ratio, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return shifted.forward(plain.forward(x));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    plain.collect(prefix + ".b0", out);
    shifted.collect(prefix + ".b1", out);
  }
};

}  // namespace tdl
