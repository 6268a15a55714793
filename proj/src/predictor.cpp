// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace sparsekit {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Vector<double> low_rank_hidden(const PredictorParams& p, std::span<const double> x) {
  Vector<double> h = matvec(p.w1, x);
  for (std::size_t k = 0; k < h.size(); ++k) h[k] += p.b1[k];
  return h;
}

}  // namespace

void PredictorParams::validate() const {
  if (rank() == 0 || d_model() == 0 || d_ff() == 0) {
    throw ShapeError("predictor dimensions must be positive");
  }
  if (b1.size() != rank()) throw ShapeError("b1 length must equal the predictor rank");
  if (w2.cols() != rank()) throw ShapeError("w2 must have rank columns");
  if (b2.size() != d_ff()) throw ShapeError("b2 length must equal d_ff");
  if (!all_finite(w1.data()) || !all_finite(w2.data()) ||
      !all_finite(std::span<const double>(b1)) || !all_finite(std::span<const double>(b2))) {
    throw std::invalid_argument("predictor parameters contain non-finite values");
  }
}

std::size_t PredictorParams::parameter_count() const {
  return w1.data().size() + b1.size() + w2.data().size() + b2.size();
}

std::size_t default_predictor_rank(std::size_t d_model, std::size_t d_ff,
                                   std::size_t matrix_count) {
  const double ffn = static_cast<double>(d_model) * static_cast<double>(d_ff) *
                     static_cast<double>(matrix_count);
  const double r = std::floor(0.06 * ffn / static_cast<double>(d_model + d_ff));
  return std::max<std::size_t>(1, static_cast<std::size_t>(r));
}

PredictorParams zero_predictor(std::size_t d_model, std::size_t d_ff, std::size_t rank) {
  PredictorParams p;
  p.w1 = Matrix<double>(rank, d_model);
  p.b1 = Vector<double>(rank, 0.0);
  p.w2 = Matrix<double>(d_ff, rank);
  p.b2 = Vector<double>(d_ff, 0.0);
  return p;
}

Vector<double> predict_scores(const PredictorParams& p, std::span<const double> x) {
  if (x.size() != p.d_model()) {
    throw ShapeError("predictor input has length " + std::to_string(x.size()) +
                     ", expected " + std::to_string(p.d_model()));
  }
  const Vector<double> h = low_rank_hidden(p, x);
  Vector<double> scores = matvec(p.w2, std::span<const double>(h));
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = sigmoid(scores[i] + p.b2[i]);
  return scores;
}

SelectionResult select_topk(std::span<const double> scores, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("top-k fraction must lie in (0, 1]");
  }
  const std::size_t n = scores.size();
  // Guard against 0.2 * 10 landing a hair above 2.
  const auto k = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  SelectionResult out;
  out.active.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.active.begin(), out.active.end());
  out.scores.assign(scores.begin(), scores.end());
  return out;
}

SelectionResult select_threshold(std::span<const double> scores) {
  SelectionResult out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > 0.5) out.active.push_back(i);
  }
  out.scores.assign(scores.begin(), scores.end());
  return out;
}

double bce_loss(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("bce_loss: length mismatch");
  if (scores.empty()) throw std::invalid_argument("bce_loss: empty input");
  constexpr double kEps = 1e-12;
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = std::clamp(scores[i], kEps, 1.0 - kEps);
    total += labels[i] != 0 ? std::log(s) : std::log(1.0 - s);
  }
  return -total / static_cast<double>(scores.size());
}

ActivationDataset build_dataset(const MagnitudeTrace& trace, std::size_t layer, double epsilon,
                                std::size_t first, std::size_t last) {
  if (layer >= trace.layers) throw std::out_of_range("build_dataset: layer out of range");
  if (!trace.has_inputs()) throw std::invalid_argument("build_dataset: trace has no inputs");
  if (first > last || last > trace.tokens) {
    throw std::out_of_range("build_dataset: token range out of bounds");
  }
  ActivationDataset data;
  data.d_model = trace.d_model;
  data.d_ff = trace.d_ff;
  for (std::size_t t = first; t < last; ++t) {
    const auto x = trace.input_of(t, layer);
    data.inputs.insert(data.inputs.end(), x.begin(), x.end());
    for (const double m : trace.magnitudes_of(t, layer)) {
      data.labels.push_back(m >= epsilon ? 1 : 0);
    }
  }
  return data;
}

PredictorGrads bce_gradients(const PredictorParams& p, const ActivationDataset& data,
                             std::span<const std::size_t> samples) {
  if (data.d_model != p.d_model() || data.d_ff != p.d_ff()) {
    throw ShapeError("dataset does not match predictor dimensions");
  }
  if (samples.empty()) throw std::invalid_argument("bce_gradients: no samples");
  const std::size_t r = p.rank();
  const std::size_t dm = p.d_model();
  const std::size_t df = p.d_ff();
  PredictorGrads g{Matrix<double>(r, dm), Vector<double>(r, 0.0), Matrix<double>(df, r),
                   Vector<double>(df, 0.0)};
  const double scale = 1.0 / (static_cast<double>(df) * static_cast<double>(samples.size()));
  Vector<double> dz(df);
  for (const std::size_t s : samples) {
    const auto x = data.input(s);
    const auto y = data.label(s);
    const Vector<double> h = low_rank_hidden(p, x);
    const Vector<double> z = matvec(p.w2, std::span<const double>(h));
    for (std::size_t i = 0; i < df; ++i) {
      dz[i] = (sigmoid(z[i] + p.b2[i]) - (y[i] != 0 ? 1.0 : 0.0)) * scale;
      g.b2[i] += dz[i];
      for (std::size_t k = 0; k < r; ++k) g.w2(i, k) += dz[i] * h[k];
    }
    const Vector<double> dh = matvec_transposed(p.w2, std::span<const double>(dz));
    for (std::size_t k = 0; k < r; ++k) {
      g.b1[k] += dh[k];
      for (std::size_t j = 0; j < dm; ++j) g.w1(k, j) += dh[k] * x[j];
    }
  }
  return g;
}

double dataset_loss(const PredictorParams& p, const ActivationDataset& data) {
  const std::size_t n = data.size();
  if (n == 0) throw std::invalid_argument("dataset_loss: empty dataset");
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    total += bce_loss(predict_scores(p, data.input(s)), data.label(s));
  }
  return total / static_cast<double>(n);
}

PredictorTrainResult train_predictor(const ActivationDataset& data,
                                     const PredictorTrainConfig& config) {
  const std::size_t n = data.size();
  if (n == 0) throw std::invalid_argument("train_predictor: empty dataset");
  if (config.batch_size == 0) throw std::invalid_argument("train_predictor: zero batch size");
  const std::size_t rank =
      config.rank != 0 ? config.rank : default_predictor_rank(data.d_model, data.d_ff, 2);

  Rng init_rng(Rng::derive(config.seed, 1));
  PredictorTrainResult result;
  PredictorParams& p = result.params;
  p = zero_predictor(data.d_model, data.d_ff, rank);
  const double w1_std = 1.0 / std::sqrt(static_cast<double>(data.d_model));
  const double w2_std = 1.0 / std::sqrt(static_cast<double>(rank));
  for (double& v : p.w1.data()) v = init_rng.normal(w1_std);
  for (double& v : p.w2.data()) v = init_rng.normal(w2_std);

  result.initial_loss = dataset_loss(p, data);
  if (config.epochs == 0) {
    result.final_loss = result.initial_loss;
    return result;
  }

  // The descent step is taken on the per-neuron summed loss (d_ff times the
  // reported mean), so the learning rate does not shrink with layer width.
  const auto step_scale = static_cast<double>(data.d_ff);
  PredictorGrads velocity{Matrix<double>(rank, data.d_model), Vector<double>(rank, 0.0),
                          Matrix<double>(data.d_ff, rank), Vector<double>(data.d_ff, 0.0)};
  const auto update = [&](std::span<double> param, std::span<double> vel,
                          std::span<const double> grad) {
    for (std::size_t k = 0; k < param.size(); ++k) {
      vel[k] = config.momentum * vel[k] - config.learning_rate * step_scale * grad[k];
      param[k] += vel[k];
    }
  };

  Rng shuffle_rng(Rng::derive(config.seed, 2));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const auto batch = std::span<const std::size_t>(order).subspan(start, stop - start);
      PredictorGrads g = bce_gradients(p, data, batch);
      update(p.w1.data(), velocity.w1.data(), g.w1.data());
      update(p.b1, velocity.b1, g.b1);
      update(p.w2.data(), velocity.w2.data(), g.w2.data());
      update(p.b2, velocity.b2, g.b2);
    }
    const double loss = dataset_loss(p, data);
    if (!std::isfinite(loss) || !all_finite<double>(p.w1.data()) || !all_finite<double>(p.w2.data())) {
      throw DivergenceError("predictor training diverged in epoch " + std::to_string(epoch));
    }
    result.final_loss = loss;
  }
  return result;
}

PredictorMetrics predictor_metrics(const SelectionResult& prediction,
                                   std::span<const std::size_t> truth, std::size_t d_ff) {
  if (d_ff == 0) throw std::invalid_argument("predictor_metrics: d_ff must be positive");
  PredictorMetrics m;
  m.prediction_sparsity =
      static_cast<double>(d_ff - prediction.active.size()) / static_cast<double>(d_ff);
  if (truth.empty()) return m;
  std::vector<std::size_t> sorted_truth(truth.begin(), truth.end());
  std::sort(sorted_truth.begin(), sorted_truth.end());
  std::vector<std::size_t> hit;
  std::set_intersection(prediction.active.begin(), prediction.active.end(),
                        sorted_truth.begin(), sorted_truth.end(), std::back_inserter(hit));
  m.recall = static_cast<double>(hit.size()) / static_cast<double>(sorted_truth.size());
  m.recall_defined = true;
  return m;
}

void MetricAverager::add(const PredictorMetrics& m) {
  sparsity_sum += m.prediction_sparsity;
  ++sparsity_count;
  if (m.recall_defined) {
    recall_sum += m.recall;
    ++recall_count;
  }
}

double MetricAverager::mean_recall() const {
  return recall_count == 0 ? 0.0 : recall_sum / static_cast<double>(recall_count);
}

double MetricAverager::mean_prediction_sparsity() const {
  return sparsity_count == 0 ? 0.0 : sparsity_sum / static_cast<double>(sparsity_count);
}

SelectionResult random_selection(std::size_t d_ff, std::size_t count, Rng& rng) {
  if (count > d_ff) throw std::invalid_argument("random_selection: count exceeds d_ff");
  std::vector<std::size_t> all(d_ff);
  std::iota(all.begin(), all.end(), std::size_t{0});
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.index(d_ff - i);
    std::swap(all[i], all[j]);
  }
  SelectionResult out;
  out.active.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(out.active.begin(), out.active.end());
  return out;
}

std::vector<std::size_t> active_indices(std::span<const std::uint8_t> labels) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0) out.push_back(i);
  }
  return out;
}

}  // namespace sparsekit
