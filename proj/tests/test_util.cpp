// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include <limits>

#include "sparsekit/tensor.hpp"

namespace sparsekit::testing {

double ffn_gradient_check(const FfnWeights<double>& w0, std::span<const double> x0,
                          std::span<const double> upstream, double kink) {
  const HiddenState<double> h = ffn_hidden<double>(w0, x0);
  for (const double z : h.pre) {
    if (std::abs(z) < kink) return std::numeric_limits<double>::quiet_NaN();
  }
  FfnWeights<double> w = w0;
  std::vector<double> x(x0.begin(), x0.end());
  const auto loss = [&] {
    const Vector<double> y = ffn_forward<double>(w, x);
    return dot<double>(y, upstream);
  };
  const FfnGrads<double> g = ffn_backward<double>(w0, x0, upstream);

  double worst = 0.0;
  const auto check = [&](std::span<double> p, std::span<const double> analytic) {
    worst = std::max(worst, gradient_error(analytic, numeric_gradient(p, loss)));
  };
  check(w.w_in.data(), g.w_in.data());
  if (w.v_in) check(w.v_in->data(), g.v_in->data());
  check(w.w_out.data(), g.w_out.data());
  if (w.b_in) check(*w.b_in, *g.b_in);
  if (w.b_out) check(*w.b_out, *g.b_out);
  check(x, g.x);
  return worst;
}

}  // namespace sparsekit::testing
