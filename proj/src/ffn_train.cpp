// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <string>
#include <vector>

#include "sparsekit/ffn.hpp"

namespace sparsekit {

namespace {

// Parameter and gradient fields visited in a fixed order.
std::vector<std::span<double>> parameter_views(FfnWeights<double>& w) {
  std::vector<std::span<double>> views{w.w_in.data()};
  if (w.v_in) views.push_back(w.v_in->data());
  views.push_back(w.w_out.data());
  if (w.b_in) views.push_back(*w.b_in);
  if (w.b_out) views.push_back(*w.b_out);
  return views;
}

std::vector<std::span<double>> gradient_views(FfnGrads<double>& g) {
  std::vector<std::span<double>> views{g.w_in.data()};
  if (g.v_in) views.push_back(g.v_in->data());
  views.push_back(g.w_out.data());
  if (g.b_in) views.push_back(*g.b_in);
  if (g.b_out) views.push_back(*g.b_out);
  return views;
}

std::vector<double> draw_inputs(std::size_t count, std::size_t d_model, Rng& rng) {
  std::vector<double> xs(count * d_model);
  for (double& v : xs) v = rng.normal();
  return xs;
}

double distill_loss(const FfnWeights<double>& student, const FfnWeights<double>& teacher,
                    std::span<const double> xs, std::size_t d_model) {
  const std::size_t n = xs.size() / d_model;
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const auto x = xs.subspan(s * d_model, d_model);
    const Vector<double> ys = ffn_forward(student, x);
    const Vector<double> yt = ffn_forward(teacher, x);
    double sq = 0.0;
    for (std::size_t j = 0; j < ys.size(); ++j) sq += (ys[j] - yt[j]) * (ys[j] - yt[j]);
    total += 0.5 * sq;
  }
  return total / static_cast<double>(n);
}

}  // namespace

ToyTrainResult train_toy_ffn(const ToyTrainConfig& config) {
  if (config.d_model == 0 || config.d_ff == 0 || config.batch_size == 0 ||
      config.eval_samples == 0) {
    throw std::invalid_argument("train_toy_ffn: dimensions and batch sizes must be positive");
  }
  const std::size_t dm = config.d_model;

  ToyTrainResult result;
  {
    Rng teacher_rng(Rng::derive(config.seed, 1));
    result.teacher = random_ffn(config.teacher_kind.value_or(config.kind), dm,
                                config.teacher_d_ff.value_or(config.d_ff), config.with_bias,
                                teacher_rng);
    Rng student_rng(Rng::derive(config.seed, 2));
    result.student = random_ffn(config.kind, dm, config.d_ff, config.with_bias, student_rng);
  }
  Rng eval_rng(Rng::derive(config.seed, 4));
  const std::vector<double> eval_xs = draw_inputs(config.eval_samples, dm, eval_rng);
  result.initial_loss = distill_loss(result.student, result.teacher, eval_xs, dm);
  if (config.steps == 0) {
    result.final_loss = result.initial_loss;
    return result;
  }

  FfnWeights<double>& student = result.student;
  const std::vector<std::span<double>> params = parameter_views(student);
  std::vector<std::vector<double>> m1(params.size()), m2(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    m1[p].assign(params[p].size(), 0.0);
    m2[p].assign(params[p].size(), 0.0);
  }

  Rng data_rng(Rng::derive(config.seed, 3));
  const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
  double beta1_pow = 1.0;
  double beta2_pow = 1.0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const std::vector<double> xs = draw_inputs(config.batch_size, dm, data_rng);

    std::vector<std::vector<double>> grad(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) grad[p].assign(params[p].size(), 0.0);
    double batch_loss = 0.0;
    for (std::size_t s = 0; s < config.batch_size; ++s) {
      const auto x = std::span<const double>(xs).subspan(s * dm, dm);
      const Vector<double> ys = ffn_forward(student, x);
      const Vector<double> yt = ffn_forward(result.teacher, x);
      Vector<double> upstream(dm);
      for (std::size_t j = 0; j < dm; ++j) {
        const double diff = ys[j] - yt[j];
        batch_loss += 0.5 * diff * diff * inv_batch;
        upstream[j] = diff * inv_batch;
      }
      FfnGrads<double> g = ffn_backward(student, x, std::span<const double>(upstream));
      const auto gviews = gradient_views(g);
      for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t k = 0; k < gviews[p].size(); ++k) grad[p][k] += gviews[p][k];
      }
    }
    if (!std::isfinite(batch_loss)) {
      throw DivergenceError("toy FFN training diverged at step " + std::to_string(step));
    }

    beta1_pow *= config.beta1;
    beta2_pow *= config.beta2;
    const double c1 = 1.0 - beta1_pow;
    const double c2 = 1.0 - beta2_pow;
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (std::size_t k = 0; k < params[p].size(); ++k) {
        const double gk = grad[p][k];
        m1[p][k] = config.beta1 * m1[p][k] + (1.0 - config.beta1) * gk;
        m2[p][k] = config.beta2 * m2[p][k] + (1.0 - config.beta2) * gk * gk;
        const double mhat = m1[p][k] / c1;
        const double vhat = m2[p][k] / c2;
        params[p][k] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_eps);
      }
    }
  }

  result.final_loss = distill_loss(student, result.teacher, eval_xs, dm);
  if (!std::isfinite(result.final_loss)) {
    throw DivergenceError("toy FFN training produced a non-finite evaluation loss");
  }
  return result;
}

}  // namespace sparsekit
