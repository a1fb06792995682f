#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "tdl/ops.hpp"
#include "tdl/tensor.hpp"
#include "test_util.hpp"

namespace tdl {
namespace {

using testutil::expect_all_near;
using testutil::expect_bit_equal;
using testutil::expect_gradcheck;
using testutil::random_tensor;

// Pinned tolerances for finite-difference gradient checks (f64, central
// differences at eps = 1e-5).
constexpr double kElemwiseTol = 1e-5;
constexpr double kMatmulTol = 1e-6;
constexpr double kCompositeTol = 1e-4;

// ---------------------------------------------------------------------------
// Construction and accessors
// ---------------------------------------------------------------------------

TEST(Tensor, ConstructionAndAccessors) {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2);
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.dim(0), 2);
  EXPECT_EQ(t.dim(1), 3);
  EXPECT_DOUBLE_EQ(t.at({0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(t.at({1, 2}), 6.0);

  Tensor<double> s = Tensor<double>::scalar(4.5);
  EXPECT_EQ(s.rank(), 0);
  EXPECT_DOUBLE_EQ(s.item(), 4.5);

  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 2}, {1, 2, 3}), ShapeError);

  Tensor<float> f = t.astype<float>();
  EXPECT_EQ(f.shape(), t.shape());
  EXPECT_FLOAT_EQ(f.at({1, 1}), 5.0f);
}

TEST(Tensor, CloneDetachedIsIndependent) {
  Tensor<double> t({3}, {1, 2, 3});
  Tensor<double> c = t.clone_detached();
  c.mutable_data()[0] = 99;
  EXPECT_DOUBLE_EQ(t.at({0}), 1.0);
  EXPECT_DOUBLE_EQ(c.at({0}), 99.0);
  EXPECT_FALSE(c.requires_grad());
}

TEST(Tensor, ZerosAndFull) {
  Tensor<double> z = Tensor<double>::zeros({2, 2});
  for (double v : z.data()) EXPECT_DOUBLE_EQ(v, 0.0);
  Tensor<double> f = Tensor<double>::full({4}, 2.5);
  for (double v : f.data()) EXPECT_DOUBLE_EQ(v, 2.5);
}

// ---------------------------------------------------------------------------
// Elementwise forward values
// ---------------------------------------------------------------------------

TEST(Elementwise, BinaryHandValues) {
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  Tensor<double> b({2, 2}, {10, 20, 30, 40});
  expect_all_near(add(a, b), Tensor<double>({2, 2}, {11, 22, 33, 44}), 0, "add");
  expect_all_near(sub(b, a), Tensor<double>({2, 2}, {9, 18, 27, 36}), 0, "sub");
  expect_all_near(mul(a, b), Tensor<double>({2, 2}, {10, 40, 90, 160}), 0, "mul");
  expect_all_near(divide(b, a), Tensor<double>({2, 2}, {10, 10, 10, 10}), 0, "div");
  expect_all_near(scale(a, 3.0), Tensor<double>({2, 2}, {3, 6, 9, 12}), 0, "scale");
  expect_all_near(add_scalar(a, -1.0), Tensor<double>({2, 2}, {0, 1, 2, 3}), 0,
                  "add_scalar");
  expect_all_near(neg(a), Tensor<double>({2, 2}, {-1, -2, -3, -4}), 0, "neg");
}

TEST(Elementwise, ReluValues) {
  Tensor<double> x({5}, {-2, -0.5, 0, 0.5, 2});
  expect_all_near(relu(x), Tensor<double>({5}, {0, 0, 0, 0.5, 2}), 0, "relu");
}

TEST(Elementwise, SigmoidValues) {
  Tensor<double> x({3}, {0.0, 2.0, -2.0});
  Tensor<double> y = sigmoid(x);
  EXPECT_DOUBLE_EQ(y.at({0}), 0.5);
  EXPECT_NEAR(y.at({1}), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
  // sigmoid(-x) = 1 - sigmoid(x)
  EXPECT_NEAR(y.at({1}) + y.at({2}), 1.0, 1e-15);
}

// Reference for the tanh-approximated GELU, written out independently.
double gelu_ref(double v) {
  const double u = std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v);
  return 0.5 * v * (1.0 + std::tanh(u));
}

TEST(Elementwise, GeluMatchesClosedForm) {
  const std::vector<double> pts = {-3, -1, -0.5, 0, 0.5, 1, 3};
  Tensor<double> x({static_cast<int64_t>(pts.size())}, pts);
  Tensor<double> y = gelu(x);
  for (size_t i = 0; i < pts.size(); ++i)
    EXPECT_NEAR(y.data()[i], gelu_ref(pts[i]), 1e-12) << "at x = " << pts[i];
  // Spot values: exactly zero at zero, and ~2.9964 at 3 (the tanh form keeps
  // nearly all of the input this far into the positive tail).
  EXPECT_DOUBLE_EQ(y.at({3}), 0.0);
  EXPECT_NEAR(y.at({6}), 2.9964, 1e-4);
}

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

TEST(Broadcast, ShapeRules) {
  EXPECT_EQ(broadcast_shape({2, 1, 3}, {4, 3}, "t"), (Shape{2, 4, 3}));
  EXPECT_EQ(broadcast_shape({5, 4}, {1}, "t"), (Shape{5, 4}));
  EXPECT_EQ(broadcast_shape({}, {3, 2}, "t"), (Shape{3, 2}));
  EXPECT_EQ(broadcast_shape({8, 1, 6, 1}, {7, 1, 5}, "t"), (Shape{8, 7, 6, 5}));
  EXPECT_THROW(broadcast_shape({3}, {4}, "t"), ShapeError);
  EXPECT_THROW(broadcast_shape({2, 3}, {2, 4}, "t"), ShapeError);
}

TEST(Broadcast, RowBiasValues) {
  Tensor<double> x({2, 3}, {0, 0, 0, 10, 10, 10});
  Tensor<double> b({3}, {1, 2, 3});
  expect_all_near(add(x, b), Tensor<double>({2, 3}, {1, 2, 3, 11, 12, 13}), 0);
}

TEST(Broadcast, ScalarAgainstMatrix) {
  Tensor<double> x({2, 2}, {1, 2, 3, 4});
  Tensor<double> s = Tensor<double>::scalar(10.0);
  expect_all_near(mul(x, s), Tensor<double>({2, 2}, {10, 20, 30, 40}), 0);
}

TEST(Broadcast, ColumnAgainstRow) {
  Tensor<double> col({2, 1}, {1, 2});
  Tensor<double> row({1, 3}, {10, 20, 30});
  expect_all_near(add(col, row), Tensor<double>({2, 3}, {11, 21, 31, 12, 22, 32}), 0);
}

// Gradients of a broadcast operand must reduce back to the operand's shape.
TEST(Broadcast, GradientReducesToOperandShape) {
  Tensor<double> x = Tensor<double>::zeros({2, 3});
  Tensor<double> b({3}, {1, 2, 3});
  x.set_requires_grad(true);
  b.set_requires_grad(true);
  {
    Tape<double> tape;
    Tensor<double> loss = sum_all(add(x, b));
    tape.backward(loss);
  }
  ASSERT_EQ(b.grad().size(), 3u);
  // b participates in both rows, so each coordinate accumulates twice.
  for (double g : b.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Broadcast, GradcheckBothOperands) {
  Rng rng(401);
  auto x = random_tensor<double>({2, 1, 3}, rng);
  auto b = random_tensor<double>({4, 3}, rng);
  expect_gradcheck([&] { return sum_all(mul(x, b)); }, {x, b}, kElemwiseTol);
}

// ---------------------------------------------------------------------------
// Per-op gradient checks (f64 central differences)
// ---------------------------------------------------------------------------

TEST(Gradcheck, Add) {
  Rng rng(1);
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({3, 4}, rng);
  expect_gradcheck([&] { return sum_all(add(a, b)); }, {a, b}, kElemwiseTol);
}

TEST(Gradcheck, Sub) {
  Rng rng(2);
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({3, 4}, rng);
  expect_gradcheck([&] { return sum_all(sub(a, b)); }, {a, b}, kElemwiseTol);
}

TEST(Gradcheck, Mul) {
  Rng rng(3);
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({3, 4}, rng);
  expect_gradcheck([&] { return sum_all(mul(a, b)); }, {a, b}, kElemwiseTol);
}

TEST(Gradcheck, Divide) {
  Rng rng(4);
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({3, 4}, rng, 0.5, 2.0);  // keep away from 0
  expect_gradcheck([&] { return sum_all(divide(a, b)); }, {a, b}, kElemwiseTol);
}

TEST(Gradcheck, ScaleAndAddScalar) {
  Rng rng(5);
  auto x = random_tensor<double>({2, 5}, rng);
  expect_gradcheck([&] { return sum_all(scale(add_scalar(x, 0.7), -1.3)); }, {x},
                   kElemwiseTol);
}

TEST(Gradcheck, ReluAwayFromKink) {
  Rng rng(6);
  // Bias points away from 0 so the subgradient at the kink never enters.
  Tensor<double> x = random_tensor<double>({4, 4}, rng);
  for (double& v : x.mutable_data()) v += (v >= 0 ? 0.5 : -0.5);
  expect_gradcheck([&] { return sum_all(mul(relu(x), x)); }, {x}, kElemwiseTol);
}

TEST(Gradcheck, Sigmoid) {
  Rng rng(7);
  auto x = random_tensor<double>({3, 5}, rng, -3.0, 3.0);
  expect_gradcheck([&] { return sum_all(sigmoid(x)); }, {x}, kElemwiseTol);
}

TEST(Gradcheck, Gelu) {
  Rng rng(8);
  auto x = random_tensor<double>({3, 5}, rng, -3.0, 3.0);
  expect_gradcheck([&] { return sum_all(gelu(x)); }, {x}, kElemwiseTol);
}

TEST(Gradcheck, MeanAndWeightedLoss) {
  Rng rng(9);
  auto x = random_tensor<double>({4, 6}, rng);
  expect_gradcheck([&] { return mean_all(mul(x, x)); }, {x}, kElemwiseTol);
}

TEST(Gradcheck, ReshapePermuteNarrowConcat) {
  Rng rng(10);
  auto x = random_tensor<double>({2, 3, 4}, rng);
  auto y = random_tensor<double>({2, 3, 4}, rng);
  expect_gradcheck(
      [&] {
        Tensor<double> p = permute(x, {2, 0, 1});           // [4,2,3]
        Tensor<double> r = reshape(p, {4, 6});              // [4,6]
        Tensor<double> n = narrow(r, 1, 1, 4);              // [4,4]
        Tensor<double> q = reshape(permute(y, {1, 0, 2}), {6, 4});
        Tensor<double> c = concat<double>({n, narrow(q, 0, 0, 2)}, 0);  // [6,4]
        return sum_all(mul(c, c));
      },
      {x, y}, kCompositeTol);
}

TEST(Gradcheck, SplitRejoin) {
  Rng rng(11);
  auto x = random_tensor<double>({4, 6}, rng);
  expect_gradcheck(
      [&] {
        auto parts = split(x, 1, {2, 3, 1});
        // Unequal weights per part so a lost or swapped route shows up.
        return sum_all(add(scale(sum_all(mul(parts[0], parts[0])), 1.0),
                           add(scale(sum_all(parts[1]), 2.0),
                               scale(sum_all(mul(parts[2], parts[2])), 3.0))));
      },
      {x}, kCompositeTol);
}

TEST(Gradcheck, Matmul) {
  Rng rng(12);
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({4, 5}, rng);
  expect_gradcheck([&] { return sum_all(matmul(a, b)); }, {a, b}, kMatmulTol);
}

TEST(Gradcheck, MatmulBatchedBroadcast) {
  Rng rng(13);
  auto a = random_tensor<double>({2, 1, 3, 4}, rng);
  auto b = random_tensor<double>({3, 4, 2}, rng);
  expect_gradcheck([&] { return sum_all(matmul(a, b)); }, {a, b}, kMatmulTol);
}

TEST(Gradcheck, LinearWithBias) {
  Rng rng(14);
  auto x = random_tensor<double>({5, 3}, rng);
  auto w = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({4}, rng);
  expect_gradcheck([&] { return sum_all(mul(linear(x, w, b), linear(x, w, b))); },
                   {x, w, b}, kCompositeTol);
}

TEST(Gradcheck, Softmax) {
  Rng rng(15);
  auto x = random_tensor<double>({3, 6}, rng, -2.0, 2.0);
  auto t = random_tensor<double>({3, 6}, rng);
  expect_gradcheck([&] { return sum_all(mul(softmax(x, -1), t)); }, {x},
                   kCompositeTol);
}

TEST(Gradcheck, LogSoftmax) {
  Rng rng(16);
  auto x = random_tensor<double>({3, 6}, rng, -2.0, 2.0);
  auto t = random_tensor<double>({3, 6}, rng);
  expect_gradcheck([&] { return sum_all(mul(log_softmax(x, -1), t)); }, {x},
                   kCompositeTol);
}

TEST(Gradcheck, SoftmaxInteriorAxis) {
  Rng rng(17);
  auto x = random_tensor<double>({2, 4, 3}, rng, -2.0, 2.0);
  auto t = random_tensor<double>({2, 4, 3}, rng);
  expect_gradcheck([&] { return sum_all(mul(softmax(x, 1), t)); }, {x},
                   kCompositeTol);
}

TEST(Gradcheck, Layernorm) {
  Rng rng(18);
  auto x = random_tensor<double>({4, 6}, rng);
  auto g = random_tensor<double>({6}, rng, 0.5, 1.5);
  auto b = random_tensor<double>({6}, rng);
  expect_gradcheck([&] { return sum_all(mul(layernorm(x, g, b), x)); }, {x, g, b},
                   kCompositeTol);
}

TEST(Gradcheck, TakeRows) {
  Rng rng(19);
  auto table = random_tensor<double>({5, 3}, rng);
  const std::vector<int64_t> idx = {0, 2, 2, 4, 1};  // repeats must accumulate
  expect_gradcheck(
      [&] {
        Tensor<double> r = take_rows(table, idx);
        return sum_all(mul(r, r));
      },
      {table}, kCompositeTol);
}

TEST(Gradcheck, BilinearUpsample) {
  Rng rng(20);
  auto x = random_tensor<double>({1, 2, 3, 3}, rng);
  expect_gradcheck(
      [&] {
        Tensor<double> u = bilinear_upsample(x, 2);
        return sum_all(mul(u, u));
      },
      {x}, kCompositeTol);
}

// Integer data plus a finite-difference step of 0.5: every intermediate is
// exactly representable, so the sum gradient matches to the last bit.
TEST(Gradcheck, SumIsExactWithRepresentableStep) {
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  GradcheckResult<double> r =
      gradcheck<double>([&] { return sum_all(x); }, {x}, 0.5);
  EXPECT_EQ(r.max_rel_err, 0.0);
  EXPECT_EQ(r.max_abs_err, 0.0);
  EXPECT_EQ(r.coords_checked, 6);
}

TEST(Gradcheck, SumOverAxesKeepdims) {
  Rng rng(21);
  auto x = random_tensor<double>({2, 3, 4}, rng);
  auto t = random_tensor<double>({2, 1, 4}, rng);
  expect_gradcheck([&] { return sum_all(mul(sum(x, {1}, true), t)); }, {x},
                   kCompositeTol);

  Tensor<double> s = sum(x, {1}, true);
  EXPECT_EQ(s.shape(), (Shape{2, 1, 4}));
  Tensor<double> s2 = sum(x, {0, 2}, false);
  EXPECT_EQ(s2.shape(), (Shape{3}));
}

// The fault-injection hook must make an otherwise-passing check fail; this
// guards the checker itself against false positives.
TEST(Gradcheck, MatmulCorruptionHookIsDetected) {
  Rng rng(22);
  auto a = random_tensor<double>({3, 3}, rng);
  auto b = random_tensor<double>({3, 3}, rng);
  debug::corrupt_matmul_backward = true;
  GradcheckResult<double> r = gradcheck<double>(
      [&] { return sum_all(matmul(a, b)); }, {a, b}, 1e-5);
  debug::corrupt_matmul_backward = false;
  EXPECT_GT(r.max_rel_err, 1e-3);
}

// ---------------------------------------------------------------------------
// Reductions: forward values
// ---------------------------------------------------------------------------

TEST(Reduce, SumAndMeanValues) {
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_DOUBLE_EQ(sum_all(x).item(), 21.0);
  EXPECT_DOUBLE_EQ(mean_all(x).item(), 3.5);
  expect_all_near(sum(x, {0}), Tensor<double>({3}, {5, 7, 9}), 0);
  expect_all_near(sum(x, {1}), Tensor<double>({2}, {6, 15}), 0);
  expect_all_near(mean(x, {1}), Tensor<double>({2}, {2, 5}), 0);
  expect_all_near(sum(x, {0, 1}), Tensor<double>::scalar(21.0), 0);
}

// ---------------------------------------------------------------------------
// Matmul against a naive triple loop
// ---------------------------------------------------------------------------

void naive_matmul(const double* a, const double* b, double* o, int64_t m, int64_t k,
                  int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0;
      for (int64_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      o[i * n + j] = acc;
    }
}

TEST(Matmul, HandValues) {
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  Tensor<double> b({2, 2}, {5, 6, 7, 8});
  expect_all_near(matmul(a, b), Tensor<double>({2, 2}, {19, 22, 43, 50}), 0);
}

TEST(Matmul, MatchesNaiveLoop) {
  Rng rng(23);
  auto a = random_tensor<double>({5, 7}, rng);
  auto b = random_tensor<double>({7, 4}, rng);
  Tensor<double> got = matmul(a, b);
  std::vector<double> want(5 * 4);
  naive_matmul(a.data().data(), b.data().data(), want.data(), 5, 7, 4);
  expect_all_near(got, Tensor<double>({5, 4}, std::move(want)), 1e-12);
}

TEST(Matmul, BatchBroadcastMatchesPerSlice) {
  Rng rng(24);
  auto a = random_tensor<double>({2, 3, 4}, rng);   // batch of 2
  auto b = random_tensor<double>({4, 5}, rng);      // shared right factor
  Tensor<double> got = matmul(a, b);
  ASSERT_EQ(got.shape(), (Shape{2, 3, 5}));
  for (int64_t batch = 0; batch < 2; ++batch) {
    std::vector<double> want(3 * 5);
    naive_matmul(a.data().data() + batch * 12, b.data().data(), want.data(), 3, 4, 5);
    for (int64_t i = 0; i < 15; ++i)
      EXPECT_NEAR(got.data()[batch * 15 + i], want[static_cast<size_t>(i)], 1e-12);
  }
}

TEST(Matmul, ShapeErrors) {
  Tensor<double> a({2, 3}, std::vector<double>(6, 1.0));
  Tensor<double> b({4, 2}, std::vector<double>(8, 1.0));
  EXPECT_THROW(matmul(a, b), ShapeError);
  Tensor<double> v({3}, {1, 2, 3});
  EXPECT_THROW(matmul(v, a), ShapeError);
}

// ---------------------------------------------------------------------------
// Shape-op roundtrips (bit-exact)
// ---------------------------------------------------------------------------

TEST(ShapeOps, ReshapeRoundtrip) {
  Rng rng(25);
  auto x = random_tensor<double>({3, 4, 5}, rng);
  Tensor<double> y = reshape(reshape(x, {12, 5}), {3, 4, 5});
  expect_bit_equal(x, y);
  EXPECT_THROW(reshape(x, {7, 9}), ShapeError);
}

TEST(ShapeOps, PermuteInverseRoundtrip) {
  Rng rng(26);
  auto x = random_tensor<double>({2, 3, 4, 5}, rng);
  Tensor<double> p = permute(x, {3, 1, 0, 2});
  EXPECT_EQ(p.shape(), (Shape{5, 3, 2, 4}));
  // The inverse of {3,1,0,2} is {2,1,3,0}.
  Tensor<double> back = permute(p, {2, 1, 3, 0});
  expect_bit_equal(x, back);
}

TEST(ShapeOps, PermuteMovesValues) {
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> t = permute(x, {1, 0});
  expect_all_near(t, Tensor<double>({3, 2}, {1, 4, 2, 5, 3, 6}), 0);
}

TEST(ShapeOps, NarrowConcatRoundtrip) {
  Rng rng(27);
  auto x = random_tensor<double>({4, 6}, rng);
  for (int64_t axis = 0; axis < 2; ++axis) {
    const int64_t extent = x.dim(axis);
    Tensor<double> left = narrow(x, axis, 0, extent / 2);
    Tensor<double> right = narrow(x, axis, extent / 2, extent - extent / 2);
    expect_bit_equal(x, concat<double>({left, right}, axis));
  }
  EXPECT_THROW(narrow(x, 0, 3, 2), ShapeError);
}

TEST(ShapeOps, SplitConcatRoundtrip) {
  Rng rng(28);
  auto x = random_tensor<double>({2, 9, 3}, rng);
  auto parts = split(x, 1, {2, 4, 3});
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[0].shape(), (Shape{2, 2, 3}));
  EXPECT_EQ(parts[1].shape(), (Shape{2, 4, 3}));
  EXPECT_EQ(parts[2].shape(), (Shape{2, 3, 3}));
  expect_bit_equal(x, concat(parts, 1));

  auto eq = split_equal(x, 1, 3);
  ASSERT_EQ(eq.size(), 3u);
  expect_bit_equal(x, concat(eq, 1));
  EXPECT_THROW(split_equal(x, 1, 2), ShapeError);
}

// ---------------------------------------------------------------------------
// Softmax invariants
// ---------------------------------------------------------------------------

TEST(Softmax, RowsSumToOne) {
  Rng rng(29);
  auto x = random_tensor<double>({7, 11}, rng, -30.0, 30.0);
  Tensor<double> p = softmax(x, -1);
  for (int64_t r = 0; r < 7; ++r) {
    double s = 0;
    for (int64_t c = 0; c < 11; ++c) {
      const double v = p.at({r, c});
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Softmax, ShiftInvariance) {
  Rng rng(30);
  auto x = random_tensor<double>({5, 9}, rng, -5.0, 5.0);
  Tensor<double> shifted = add_scalar(x, 123.456);
  expect_all_near(softmax(x, -1), softmax(shifted, -1), 1e-6);
}

TEST(Softmax, LargeLogitsStayFinite) {
  Tensor<double> x({1, 3}, {1000.0, 999.0, -1000.0});
  Tensor<double> p = softmax(x, -1);
  for (double v : p.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(p.at({0, 0}) + p.at({0, 1}) + p.at({0, 2}), 1.0, 1e-12);
  EXPECT_GT(p.at({0, 0}), p.at({0, 1}));
}

TEST(Softmax, LogSoftmaxConsistency) {
  Rng rng(31);
  auto x = random_tensor<double>({4, 6}, rng, -4.0, 4.0);
  Tensor<double> lp = log_softmax(x, -1);
  Tensor<double> p = softmax(x, -1);
  for (size_t i = 0; i < p.data().size(); ++i)
    EXPECT_NEAR(std::exp(lp.data()[i]), p.data()[i], 1e-12);
}

// ---------------------------------------------------------------------------
// Tape semantics
// ---------------------------------------------------------------------------

TEST(Tape, FanOutAccumulates) {
  Tensor<double> x({3}, {1, 2, 3});
  x.set_requires_grad(true);
  {
    Tape<double> tape;
    Tensor<double> y = add(x, x);  // y = 2x, both routes through the same leaf
    tape.backward(sum_all(y));
  }
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
}

TEST(Tape, DiamondGraph) {
  Tensor<double> x({1}, {3.0});
  x.set_requires_grad(true);
  {
    Tape<double> tape;
    Tensor<double> a = scale(x, 2.0);
    Tensor<double> b = mul(x, x);
    // loss = 2x + x^2, d/dx = 2 + 2x = 8 at x = 3
    tape.backward(sum_all(add(a, b)));
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

TEST(Tape, NoGradLeafStaysEmpty) {
  Tensor<double> x({2}, {1, 2});
  Tensor<double> w({2}, {3, 4});
  w.set_requires_grad(true);
  {
    Tape<double> tape;
    tape.backward(sum_all(mul(x, w)));
  }
  EXPECT_FALSE(x.has_grad());
  ASSERT_TRUE(w.has_grad());
  EXPECT_DOUBLE_EQ(w.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], 2.0);
}

TEST(Tape, BackwardRequiresScalar) {
  Tensor<double> x({2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> y = mul(x, x);
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Tape, NoRecordingOutsideTape) {
  Tensor<double> x({2}, {1, 2});
  x.set_requires_grad(true);
  Tensor<double> y = mul(x, x);  // no tape alive: forward only
  {
    Tape<double> tape;
    tape.backward(sum_all(mul(x, x)));
  }
  ASSERT_TRUE(x.has_grad());
  // Only the taped product contributes; the untaped one is invisible.
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
  (void)y;
}

TEST(Tape, GradAccumulatesAcrossBackwardsUntilZeroed) {
  Tensor<double> x({1}, {2.0});
  x.set_requires_grad(true);
  for (int pass = 0; pass < 2; ++pass) {
    Tape<double> tape;
    tape.backward(sum_all(mul(x, x)));
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);  // 2 passes x d(x^2)/dx = 4
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

}  // namespace
}  // namespace tdl
