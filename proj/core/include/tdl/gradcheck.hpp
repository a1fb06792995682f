#pragma once

#include <cmath>
#include <functional>

#include "tdl/ops.hpp"
#include "tdl/rng.hpp"

// Finite-difference gradient checking. A loss thunk rebuilds the forward
// graph from a set of leaf tensors; analytic gradients from one taped
// backward pass are compared against central differences taken with the
// tape inactive.

namespace tdl {

template <typename T>
bool all_finite(const Tensor<T>& x) {
  for (T v : x.data())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
struct GradcheckResult {
  T max_rel_err = T(0);
  T max_abs_err = T(0);
  size_t worst_leaf = 0;
  int64_t worst_coord = -1;
  T analytic_at_worst = T(0);
  T numeric_at_worst = T(0);
  int64_t coords_checked = 0;
};

// Relative error with a unit floor, so tiny gradients compare absolutely:
// |a - n| / max(1, |a|, |n|).
template <typename T>
inline T rel_err(T a, T n) {
  return std::abs(a - n) / std::max(T(1), std::max(std::abs(a), std::abs(n)));
}

// `loss_fn` must return a scalar tensor computed from `leaves` (reading their
// current data each call). `max_coords_per_leaf < 0` checks every coordinate;
// otherwise coordinates are sampled evenly, with a random phase when `rng`
// is given.
template <typename T>
GradcheckResult<T> gradcheck(const std::function<Tensor<T>()>& loss_fn,
                             std::vector<Tensor<T>> leaves, T eps,
                             int64_t max_coords_per_leaf = -1, Rng* rng = nullptr) {
  for (auto& l : leaves) l.set_requires_grad(true);

  std::vector<std::vector<T>> analytic(leaves.size());
  {
    Tape<T> tape;
    for (auto& l : leaves) l.zero_grad();
    Tensor<T> loss = loss_fn();
    tape.backward(loss);
    for (size_t i = 0; i < leaves.size(); ++i) {
      const auto g = leaves[i].grad();
      analytic[i].assign(g.begin(), g.end());
      if (analytic[i].empty())
        analytic[i].assign(static_cast<size_t>(leaves[i].numel()), T(0));
    }
  }

  GradcheckResult<T> res;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto data = leaves[li].mutable_data();
    const int64_t n = leaves[li].numel();
    int64_t count = (max_coords_per_leaf < 0) ? n : std::min<int64_t>(n, max_coords_per_leaf);
    const int64_t phase =
        (rng && count < n) ? static_cast<int64_t>(rng->next_below(static_cast<uint64_t>(n)))
                           : 0;
    for (int64_t k = 0; k < count; ++k) {
      const int64_t j = (count == n) ? k : (phase + (k * n) / count) % n;
      const T orig = data[j];
      data[j] = orig + eps;
      const T fp = loss_fn().item();
      data[j] = orig - eps;
      const T fm = loss_fn().item();
      data[j] = orig;
      const T numeric = (fp - fm) / (T(2) * eps);
      const T a = analytic[li][static_cast<size_t>(j)];
      const T re = rel_err(a, numeric);
      const T ae = std::abs(a - numeric);
      res.max_abs_err = std::max(res.max_abs_err, ae);
      if (re > res.max_rel_err) {
        res.max_rel_err = re;
        res.worst_leaf = li;
        res.worst_coord = j;
        res.analytic_at_worst = a;
        res.numeric_at_worst = numeric;
      }
      ++res.coords_checked;
    }
  }
  return res;
}

}  // namespace tdl
