#pragma once

#include <algorithm>
#include <cmath>
#include <set>

#include "tdl/metrics.hpp"
#include "tdl/swin.hpp"

// Independent reference implementations used to cross-check the production
// kernels. Everything here is written with plain scalar loops and, where a
// construction exists in the main code path (the shift mask, boundary
// extraction, confusion counting), a different formulation of the same
// definition, so agreement is evidence rather than tautology.

namespace tdl {

// O((M^2)^2) windowed multi-head attention over [nWB, P, C] token windows,
// computed directly from the fused-projection weights. `mask` (optional,
// [nW, P, P]) is added to the logits exactly as in the kernel.
template <typename T>
Tensor<T> reference_window_attention(const Tensor<T>& x, const WindowAttention<T>& wa,
                                     const Tensor<T>& mask) {
  const int64_t bnw = x.shape()[0];
  const int64_t p = x.shape()[1];
  const int64_t c = x.shape()[2];
  const int64_t heads = wa.heads;
  const int64_t d = c / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  const T* w = wa.qkv.w.data().data();    // [C, 3C]
  const T* wb = wa.qkv.b.data().data();   // [3C]
  const T* pw = wa.proj.w.data().data();  // [C, C]
  const T* pb = wa.proj.b.data().data();  // [C]
  const T* bt = wa.bias_table.data().data();
  const int64_t n_wins = mask.defined() ? mask.shape()[0] : 0;

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  T* po = out.mutable_data().data();
  std::vector<double> q(static_cast<size_t>(p * d)), k(q.size()), v(q.size());
  std::vector<double> mixed(static_cast<size_t>(p * c));

  for (int64_t win = 0; win < bnw; ++win) {
    const T* xs = x.data().data() + win * p * c;
    std::fill(mixed.begin(), mixed.end(), 0.0);
    for (int64_t h = 0; h < heads; ++h) {
      // The fused projection's output axis decomposes as (q|k|v, head, d).
      for (int64_t i = 0; i < p; ++i)
        for (int64_t dd = 0; dd < d; ++dd) {
          double aq = wb[0 * c + h * d + dd];
          double ak = wb[1 * c + h * d + dd];
          double av = wb[2 * c + h * d + dd];
          for (int64_t ch = 0; ch < c; ++ch) {
            const double xv = xs[i * c + ch];
            aq += xv * w[ch * 3 * c + 0 * c + h * d + dd];
            ak += xv * w[ch * 3 * c + 1 * c + h * d + dd];
            av += xv * w[ch * 3 * c + 2 * c + h * d + dd];
          }
          q[static_cast<size_t>(i * d + dd)] = aq * inv_sqrt_d;
          k[static_cast<size_t>(i * d + dd)] = ak;
          v[static_cast<size_t>(i * d + dd)] = av;
        }
      for (int64_t i = 0; i < p; ++i) {
        std::vector<double> logit(static_cast<size_t>(p));
        for (int64_t j = 0; j < p; ++j) {
          double s = 0;
          for (int64_t dd = 0; dd < d; ++dd)
            s += q[static_cast<size_t>(i * d + dd)] * k[static_cast<size_t>(j * d + dd)];
          s += bt[wa.bias_index[static_cast<size_t>(i * p + j)] * heads + h];
          if (mask.defined())
            s += mask.data()[((win % n_wins) * p + i) * p + j];
          logit[static_cast<size_t>(j)] = s;
        }
        const double mx = *std::max_element(logit.begin(), logit.end());
        double denom = 0;
        for (double& l : logit) {
          l = std::exp(l - mx);
          denom += l;
        }
        for (int64_t j = 0; j < p; ++j)
          for (int64_t dd = 0; dd < d; ++dd)
            mixed[static_cast<size_t>(i * c + h * d + dd)] +=
                logit[static_cast<size_t>(j)] / denom *
                v[static_cast<size_t>(j * d + dd)];
      }
    }
    for (int64_t i = 0; i < p; ++i)
      for (int64_t co = 0; co < c; ++co) {
        double acc = pb[co];
        for (int64_t ci = 0; ci < c; ++ci)
          acc += mixed[static_cast<size_t>(i * c + ci)] * pw[ci * c + co];
        po[(win * p + i) * c + co] = static_cast<T>(acc);
      }
  }
  return out;
}

// Shifted-window attention on a full [B,H,W,C] grid, computed without the
// mask machinery: the grid is rolled by (-s,-s), tokens are windowed, and a
// token pair may attend iff its displacement in original coordinates equals
// its displacement in shifted coordinates on both axes (no wrap between
// them); forbidden pairs are excluded from the softmax outright. The result
// is rolled back to the original frame.
template <typename T>
Tensor<T> reference_shifted_attention(const Tensor<T>& x, const WindowAttention<T>& wa,
                                      int64_t s) {
  const int64_t b = x.shape()[0], hgt = x.shape()[1], wid = x.shape()[2],
                c = x.shape()[3];
  const int64_t m = wa.window;
  const int64_t heads = wa.heads;
  const int64_t d = c / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const int64_t p = m * m;

  const T* w = wa.qkv.w.data().data();
  const T* wb = wa.qkv.b.data().data();
  const T* pw = wa.proj.w.data().data();
  const T* pb = wa.proj.b.data().data();
  const T* bt = wa.bias_table.data().data();

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  T* po = out.mutable_data().data();

  for (int64_t bb = 0; bb < b; ++bb) {
    // Shifted frame: row r holds original row (r+s) mod H.
    std::vector<double> shifted(static_cast<size_t>(hgt * wid * c));
    for (int64_t r = 0; r < hgt; ++r)
      for (int64_t cc = 0; cc < wid; ++cc) {
        const int64_t ro = (r + s) % hgt, co = (cc + s) % wid;
        for (int64_t ch = 0; ch < c; ++ch)
          shifted[static_cast<size_t>((r * wid + cc) * c + ch)] =
              x.data()[((bb * hgt + ro) * wid + co) * c + ch];
      }
    std::vector<double> result(shifted.size(), 0.0);

    for (int64_t wr = 0; wr < hgt / m; ++wr)
      for (int64_t wc = 0; wc < wid / m; ++wc) {
        std::vector<int64_t> rows(static_cast<size_t>(p)), cols(static_cast<size_t>(p));
        for (int64_t i = 0; i < p; ++i) {
          rows[static_cast<size_t>(i)] = wr * m + i / m;
          cols[static_cast<size_t>(i)] = wc * m + i % m;
        }
        auto allowed = [&](int64_t i, int64_t j) {
          const int64_t ri = rows[static_cast<size_t>(i)], rj = rows[static_cast<size_t>(j)];
          const int64_t ci = cols[static_cast<size_t>(i)], cj = cols[static_cast<size_t>(j)];
          const bool row_ok = (ri + s) % hgt - (rj + s) % hgt == ri - rj;
          const bool col_ok = (ci + s) % wid - (cj + s) % wid == ci - cj;
          return row_ok && col_ok;
        };
        std::vector<double> q(static_cast<size_t>(p * d)), k(q.size()), v(q.size());
        std::vector<double> mixed(static_cast<size_t>(p * c), 0.0);
        for (int64_t h = 0; h < heads; ++h) {
          for (int64_t i = 0; i < p; ++i)
            for (int64_t dd = 0; dd < d; ++dd) {
              double aq = wb[0 * c + h * d + dd];
              double ak = wb[1 * c + h * d + dd];
              double av = wb[2 * c + h * d + dd];
              for (int64_t ch = 0; ch < c; ++ch) {
                const double xv = shifted[static_cast<size_t>(
                    (rows[static_cast<size_t>(i)] * wid + cols[static_cast<size_t>(i)]) *
                        c +
                    ch)];
                aq += xv * w[ch * 3 * c + 0 * c + h * d + dd];
                ak += xv * w[ch * 3 * c + 1 * c + h * d + dd];
                av += xv * w[ch * 3 * c + 2 * c + h * d + dd];
              }
              q[static_cast<size_t>(i * d + dd)] = aq * inv_sqrt_d;
              k[static_cast<size_t>(i * d + dd)] = ak;
              v[static_cast<size_t>(i * d + dd)] = av;
            }
          for (int64_t i = 0; i < p; ++i) {
            double mx = -1e300, denom = 0;
            std::vector<double> logit(static_cast<size_t>(p), 0.0);
            for (int64_t j = 0; j < p; ++j) {
              if (!allowed(i, j)) continue;
              double sc = 0;
              for (int64_t dd = 0; dd < d; ++dd)
                sc += q[static_cast<size_t>(i * d + dd)] *
                      k[static_cast<size_t>(j * d + dd)];
              sc += bt[wa.bias_index[static_cast<size_t>(i * p + j)] * heads + h];
              logit[static_cast<size_t>(j)] = sc;
              mx = std::max(mx, sc);
            }
            for (int64_t j = 0; j < p; ++j)
              if (allowed(i, j)) denom += std::exp(logit[static_cast<size_t>(j)] - mx);
            for (int64_t j = 0; j < p; ++j) {
              if (!allowed(i, j)) continue;
              const double wgt = std::exp(logit[static_cast<size_t>(j)] - mx) / denom;
              for (int64_t dd = 0; dd < d; ++dd)
                mixed[static_cast<size_t>(i * c + h * d + dd)] +=
                    wgt * v[static_cast<size_t>(j * d + dd)];
            }
          }
        }
        for (int64_t i = 0; i < p; ++i)
          for (int64_t co = 0; co < c; ++co) {
            double acc = pb[co];
            for (int64_t ci = 0; ci < c; ++ci)
              acc += mixed[static_cast<size_t>(i * c + ci)] * pw[ci * c + co];
            result[static_cast<size_t>(
                (rows[static_cast<size_t>(i)] * wid + cols[static_cast<size_t>(i)]) * c +
                co)] = acc;
          }
      }

    // Roll back: shifted row r is original row (r+s) mod H.
    for (int64_t r = 0; r < hgt; ++r)
      for (int64_t cc = 0; cc < wid; ++cc) {
        const int64_t ro = (r + s) % hgt, co = (cc + s) % wid;
        for (int64_t ch = 0; ch < c; ++ch)
          po[((bb * hgt + ro) * wid + co) * c + ch] = static_cast<T>(
              result[static_cast<size_t>((r * wid + cc) * c + ch)]);
      }
  }
  return out;
}

// ------------- naive metrics reference (set formulation) -------------

struct NaiveClassMetrics {
  double dice = 0;
  double hausdorff = 0;
  double sensitivity = 0;
  double specificity = 0;
  double accuracy = 0;
};

// Same definitions as the production metrics, written over explicit
// coordinate sets with a full distance matrix.
inline NaiveClassMetrics naive_class_metrics(const std::vector<int64_t>& pred,
                                             const std::vector<int64_t>& truth,
                                             int64_t h, int64_t w, int64_t cls) {
  using Coord = std::pair<int64_t, int64_t>;
  std::set<Coord> p_set, t_set;
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      if (pred[static_cast<size_t>(r * w + c)] == cls) p_set.insert({r, c});
      if (truth[static_cast<size_t>(r * w + c)] == cls) t_set.insert({r, c});
    }
  std::vector<Coord> inter;
  std::set_intersection(p_set.begin(), p_set.end(), t_set.begin(), t_set.end(),
                        std::back_inserter(inter));
  const double tp = static_cast<double>(inter.size());
  const double total = static_cast<double>(h * w);
  const double fp = static_cast<double>(p_set.size()) - tp;
  const double fn = static_cast<double>(t_set.size()) - tp;
  const double tn = total - tp - fp - fn;

  NaiveClassMetrics m;
  m.dice = (p_set.empty() && t_set.empty())
               ? 1.0
               : 2.0 * tp / (static_cast<double>(p_set.size()) +
                             static_cast<double>(t_set.size()));
  m.sensitivity = (tp + fn) == 0 ? 1.0 : tp / (tp + fn);
  m.specificity = (tn + fp) == 0 ? 1.0 : tn / (tn + fp);
  m.accuracy = (tp + tn) / total;

  auto boundary = [&](const std::set<Coord>& s) {
    std::vector<Coord> out;
    for (const Coord& q : s) {
      const Coord up{q.first - 1, q.second}, down{q.first + 1, q.second};
      const Coord left{q.first, q.second - 1}, right{q.first, q.second + 1};
      const bool interior = q.first > 0 && q.first < h - 1 && q.second > 0 &&
                            q.second < w - 1 && s.count(up) && s.count(down) &&
                            s.count(left) && s.count(right);
      if (!interior) out.push_back(q);
    }
    return out;
  };
  const auto pb = boundary(p_set);
  const auto tb = boundary(t_set);
  if (pb.empty() && tb.empty()) {
    m.hausdorff = 0.0;
  } else if (pb.empty() || tb.empty()) {
    m.hausdorff = std::numeric_limits<double>::infinity();
  } else {
    auto directed = [](const std::vector<Coord>& a, const std::vector<Coord>& b) {
      double worst = 0;
      for (const Coord& pa : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const Coord& pbq : b) {
          const double dy = static_cast<double>(pa.first - pbq.first);
          const double dx = static_cast<double>(pa.second - pbq.second);
          best = std::min(best, std::sqrt(dy * dy + dx * dx));
        }
        worst = std::max(worst, best);
      }
      return worst;
    };
    m.hausdorff = std::max(directed(pb, tb), directed(tb, pb));
  }
  return m;
}

}  // namespace tdl
