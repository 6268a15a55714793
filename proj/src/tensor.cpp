// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace sparsekit {

template <std::floating_point T>
Vector<T> matvec(const Matrix<T>& m, std::span<const T> v) {
  if (m.cols() != v.size()) {
    throw ShapeError("matvec: matrix has " + std::to_string(m.cols()) +
                     " columns but vector has length " + std::to_string(v.size()));
  }
  Vector<T> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.row(i);
    T acc{0};
    for (std::size_t j = 0; j < row.size(); ++j) acc += row[j] * v[j];
    out[i] = acc;
  }
  return out;
}

template <std::floating_point T>
Vector<T> matvec_transposed(const Matrix<T>& m, std::span<const T> v) {
  if (m.rows() != v.size()) {
    throw ShapeError("matvec_transposed: matrix has " + std::to_string(m.rows()) +
                     " rows but vector has length " + std::to_string(v.size()));
  }
  Vector<T> out(m.cols(), T{0});
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) out[j] += row[j] * v[i];
  }
  return out;
}

template <std::floating_point T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  T acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <std::floating_point T>
T l2_norm(std::span<const T> v) {
  T acc{0};
  for (const T x : v) acc += x * x;
  return std::sqrt(acc);
}

template <std::floating_point T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

std::vector<double> quantiles(std::span<const double> values, std::size_t count) {
  if (values.empty()) throw std::invalid_argument("quantiles: empty input");
  if (count == 0) throw std::invalid_argument("quantiles: count must be positive");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  std::vector<double> out(count);
  for (std::size_t k = 1; k <= count; ++k) {
    const double p = static_cast<double>(k) / static_cast<double>(count + 1);
    const double pos = p * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    // lo + frac*(hi-lo) keeps the result inside [sorted[lo], sorted[hi]].
    double q = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
    q = std::clamp(q, sorted[lo], sorted[hi]);
    out[k - 1] = q;
  }
  return out;
}

#define SPARSEKIT_INSTANTIATE(T)                                              \
  template Vector<T> matvec<T>(const Matrix<T>&, std::span<const T>);         \
  template Vector<T> matvec_transposed<T>(const Matrix<T>&, std::span<const T>); \
  template T dot<T>(std::span<const T>, std::span<const T>);                  \
  template T l2_norm<T>(std::span<const T>);                                  \
  template bool all_finite<T>(std::span<const T>);

SPARSEKIT_INSTANTIATE(float)
SPARSEKIT_INSTANTIATE(double)
#undef SPARSEKIT_INSTANTIATE

}  // namespace sparsekit
