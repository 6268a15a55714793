// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/tensor.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "sparsekit/rng.hpp"
#include "test_util.hpp"

namespace sparsekit {
namespace {

TEST(Matvec, IdentityReturnsInput) {
  const auto m = Matrix<double>::identity(3);
  const std::vector<double> v = {1, 2, 3};
  EXPECT_EQ(matvec<double>(m, v), v);
}

TEST(Matvec, ZeroMatrixGivesZeros) {
  const Matrix<double> m(2, 3);
  const std::vector<double> v = {4, -5, 6};
  EXPECT_EQ(matvec<double>(m, v), (std::vector<double>{0, 0}));
}

TEST(Matvec, HandExample) {
  const auto m = Matrix<double>::from_rows({{1, 2}, {3, 4}});
  const std::vector<double> v = {1, -1};
  EXPECT_EQ(matvec<double>(m, v), (std::vector<double>{-1, -1}));
}

TEST(Matvec, RejectsShapeMismatch) {
  const Matrix<double> m(2, 3);
  const std::vector<double> v = {1, 2};
  EXPECT_THROW(matvec<double>(m, v), ShapeError);
}

TEST(Matvec, TransposedMatchesExplicitTranspose) {
  const auto m = Matrix<double>::from_rows({{1, 2, 3}, {4, 5, 6}});
  const std::vector<double> v = {1, -2};
  EXPECT_EQ(matvec_transposed<double>(m, v), (std::vector<double>{-7, -8, -9}));
}

template <typename T>
void check_distributes(double tol) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng.index(24);
    const std::size_t cols = 1 + rng.index(24);
    Matrix<T> m(rows, cols);
    for (T& e : m.data()) e = static_cast<T>(rng.normal());
    std::vector<T> a(cols), b(cols), ab(cols);
    for (std::size_t j = 0; j < cols; ++j) {
      a[j] = static_cast<T>(rng.normal());
      b[j] = static_cast<T>(rng.normal());
      ab[j] = a[j] + b[j];
    }
    const auto lhs = matvec<T>(m, ab);
    const auto ra = matvec<T>(m, a);
    const auto rb = matvec<T>(m, b);
    for (std::size_t i = 0; i < rows; ++i) {
      // Relative to the size of the terms being summed.
      double scale = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        scale += std::abs(double(m(i, j))) * (std::abs(double(a[j])) + std::abs(double(b[j])));
      }
      EXPECT_LE(std::abs(double(lhs[i]) - (double(ra[i]) + double(rb[i]))), tol * scale);
    }
  }
}

TEST(MatvecProperty, DistributesOverAdditionF32) { check_distributes<float>(1e-6); }
TEST(MatvecProperty, DistributesOverAdditionF64) { check_distributes<double>(1e-12); }

TEST(L2Norm, ZeroVector) {
  const std::vector<double> v = {0, 0, 0};
  EXPECT_EQ(l2_norm<double>(v), 0.0);
}

TEST(L2Norm, PythagoreanTriple) {
  const std::vector<double> v = {3, 4};
  EXPECT_EQ(l2_norm<double>(v), 5.0);
  const std::vector<float> f = {3, 4};
  EXPECT_EQ(l2_norm<float>(f), 5.0f);
}

// Kahan-compensated sum of squares in f64.
double compensated_norm(std::span<const float> v) {
  double sum = 0.0, c = 0.0;
  for (const float x : v) {
    const double y = double(x) * double(x) - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
  return std::sqrt(sum);
}

TEST(L2Norm, MatchesCompensatedOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> v(128);
    for (float& x : v) x = static_cast<float>(rng.normal());
    const double oracle = compensated_norm(v);
    EXPECT_NEAR(l2_norm<float>(v), oracle, 1e-6 * oracle);
  }
}

TEST(L2NormProperty, TriangleInequality) {
  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.index(40);
    const auto a = testing::random_vector(n, rng);
    const auto b = testing::random_vector(n, rng);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = a[i] + b[i];
    EXPECT_LE(l2_norm<double>(s), (l2_norm<double>(a) + l2_norm<double>(b)) * (1 + 1e-15));
  }
}

TEST(Quantiles, ConstantData) {
  const std::vector<double> v = {5, 5, 5};
  EXPECT_EQ(quantiles(v, 10), std::vector<double>(10, 5.0));
}

TEST(Quantiles, TwoPointInterpolation) {
  const std::vector<double> v = {0, 1};
  EXPECT_EQ(quantiles(v, 1), std::vector<double>{0.5});
}

TEST(Quantiles, PermutationMatchesFullSortOracle) {
  std::vector<double> v(1000);
  std::iota(v.begin(), v.end(), 1.0);
  Rng rng(3);
  std::shuffle(v.begin(), v.end(), rng.engine());
  // Sorted values are 1..1000; p*(n-1) = 249.75, 499.5, 749.25.
  EXPECT_EQ(quantiles(v, 3), (std::vector<double>{250.75, 500.5, 750.25}));
}

TEST(Quantiles, RejectsEmptyInputAndZeroCount) {
  EXPECT_THROW(quantiles({}, 3), std::invalid_argument);
  const std::vector<double> v = {1};
  EXPECT_THROW(quantiles(v, 0), std::invalid_argument);
}

TEST(QuantilesProperty, NonDecreasingWithinRange) {
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const auto v = testing::random_vector(1 + rng.index(300), rng);
    const auto q = quantiles(v, 1 + rng.index(50));
    EXPECT_TRUE(std::is_sorted(q.begin(), q.end()));
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    EXPECT_GE(q.front(), *lo);
    EXPECT_LE(q.back(), *hi);
  }
}

TEST(AllFinite, DetectsNanAndInf) {
  const std::vector<double> ok = {1, 2};
  const std::vector<double> nan = {1, std::nan("")};
  const std::vector<double> inf = {HUGE_VAL};
  EXPECT_TRUE(all_finite<double>(ok));
  EXPECT_FALSE(all_finite<double>(nan));
  EXPECT_FALSE(all_finite<double>(inf));
}

TEST(Rng, DeriveSeparatesStreams) {
  EXPECT_NE(Rng::derive(1, 0), Rng::derive(1, 1));
  EXPECT_NE(Rng::derive(1, 0), Rng::derive(2, 0));
  EXPECT_EQ(Rng::derive(7, 3), Rng::derive(7, 3));
}

}  // namespace
}  // namespace sparsekit
