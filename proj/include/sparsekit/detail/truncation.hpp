// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sparsekit/ffn.hpp"

namespace sparsekit::detail {

// Running sum of neuron outputs for one token, visited in ascending
// magnitude order (stable by index). advance_below(eps) absorbs every
// neuron with magnitude < eps and returns the norm of the running sum;
// thresholds passed to successive calls must be non-decreasing.
// full_norm() absorbs the rest and returns |sum + b_out|.
template <std::floating_point T>
class TokenTruncation {
 public:
  TokenTruncation(const FfnWeights<T>& w, std::span<const T> x);

  T advance_below(T epsilon);
  T full_norm();

  std::span<const T> magnitudes() const { return magnitudes_; }

 private:
  void add(std::size_t neuron);

  const FfnWeights<T>* w_;
  Vector<T> hidden_;
  Vector<T> magnitudes_;
  std::vector<std::size_t> order_;
  Vector<T> running_;
  Vector<T> scratch_;
  std::size_t next_ = 0;
};

}  // namespace sparsekit::detail
