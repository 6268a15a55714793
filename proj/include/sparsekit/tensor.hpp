// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "sparsekit/errors.hpp"

namespace sparsekit {

// Dense vectors are plain std::vector; operations take spans.
template <std::floating_point T>
using Vector = std::vector<T>;

// Row-major dense matrix.
template <std::floating_point T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length does not match rows*cols");
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  template <std::floating_point U>
  Matrix<U> cast() const {
    return Matrix<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// result_i = sum_j m(i, j) * v_j, accumulated left to right from zero.
template <std::floating_point T>
Vector<T> matvec(const Matrix<T>& m, std::span<const T> v);

// result_j = sum_i m(i, j) * v_i, accumulated in increasing i.
template <std::floating_point T>
Vector<T> matvec_transposed(const Matrix<T>& m, std::span<const T> v);

template <std::floating_point T>
T dot(std::span<const T> a, std::span<const T> b);

// sqrt of the left-to-right sum of squares.
template <std::floating_point T>
T l2_norm(std::span<const T> v);

// `count` sample quantiles at p_k = k / (count + 1), k = 1..count, linearly
// interpolated between order statistics (position p * (n - 1)).
std::vector<double> quantiles(std::span<const double> values, std::size_t count);

template <std::floating_point T>
bool all_finite(std::span<const T> v);

}  // namespace sparsekit
