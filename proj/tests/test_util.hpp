#pragma once

#include <gtest/gtest.h>

#include "tdl/gradcheck.hpp"
#include "tdl/ops.hpp"
#include "tdl/rng.hpp"

// Shared helpers for the unit tests.

namespace tdl::testutil {

template <typename T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                        double hi = 1.0) {
  Tensor<T> t = Tensor<T>::zeros(shape);
  for (T& v : t.mutable_data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
void expect_all_near(const Tensor<T>& a, const Tensor<T>& b, double tol,
                     const char* what = "") {
  ASSERT_EQ(a.shape(), b.shape()) << what;
  for (size_t i = 0; i < a.data().size(); ++i)
    ASSERT_NEAR(static_cast<double>(a.data()[i]), static_cast<double>(b.data()[i]),
                tol)
        << what << " at flat index " << i;
}

template <typename T>
void expect_bit_equal(const Tensor<T>& a, const Tensor<T>& b, const char* what = "") {
  ASSERT_EQ(a.shape(), b.shape()) << what;
  for (size_t i = 0; i < a.data().size(); ++i)
    ASSERT_EQ(a.data()[i], b.data()[i]) << what << " at flat index " << i;
}

// Runs a finite-difference gradient check and asserts the max relative error.
inline void expect_gradcheck(const std::function<Tensor<double>()>& loss_fn,
                             std::vector<Tensor<double>> leaves, double tol,
                             double eps = 1e-5) {
  GradcheckResult<double> r = gradcheck<double>(loss_fn, std::move(leaves), eps);
  EXPECT_LT(r.max_rel_err, tol)
      << "worst leaf " << r.worst_leaf << " coord " << r.worst_coord << ": analytic "
      << r.analytic_at_worst << " vs numeric " << r.numeric_at_worst;
}

}  // namespace tdl::testutil
