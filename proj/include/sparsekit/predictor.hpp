// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sparsekit/rng.hpp"
#include "sparsekit/sparsity.hpp"
#include "sparsekit/tensor.hpp"

namespace sparsekit {

// Low-rank activation predictor: scores = sigmoid(W2 (W1 x + b1) + b2).
struct PredictorParams {
  Matrix<double> w1;  // rank x d_model
  Vector<double> b1;  // rank
  Matrix<double> w2;  // d_ff x rank
  Vector<double> b2;  // d_ff

  std::size_t rank() const { return w1.rows(); }
  std::size_t d_model() const { return w1.cols(); }
  std::size_t d_ff() const { return w2.rows(); }

  void validate() const;
  std::size_t parameter_count() const;

  bool operator==(const PredictorParams&) const = default;
};

// floor(0.06 * d_model * d_ff * matrices / (d_model + d_ff)), at least 1:
// a predictor holding about 6% of the FFN's matrix parameters.
std::size_t default_predictor_rank(std::size_t d_model, std::size_t d_ff,
                                   std::size_t matrix_count);

PredictorParams zero_predictor(std::size_t d_model, std::size_t d_ff, std::size_t rank);

Vector<double> predict_scores(const PredictorParams& p, std::span<const double> x);

struct SelectionResult {
  std::vector<std::size_t> active;  // ascending
  Vector<double> scores;
};

// The ceil(fraction * d_ff) highest scores; ties go to the lower index.
SelectionResult select_topk(std::span<const double> scores, double fraction);

// Every neuron scoring strictly above 0.5.
SelectionResult select_threshold(std::span<const double> scores);

// -mean[y log s + (1 - y) log(1 - s)] with s clamped to [1e-12, 1 - 1e-12].
double bce_loss(std::span<const double> scores, std::span<const std::uint8_t> labels);

// FFN inputs with per-neuron labels (1 iff magnitude >= epsilon).
struct ActivationDataset {
  std::size_t d_model = 0;
  std::size_t d_ff = 0;
  std::vector<double> inputs;         // size() * d_model
  std::vector<std::uint8_t> labels;   // size() * d_ff

  std::size_t size() const { return d_model == 0 ? 0 : inputs.size() / d_model; }
  std::span<const double> input(std::size_t s) const {
    return std::span<const double>(inputs).subspan(s * d_model, d_model);
  }
  std::span<const std::uint8_t> label(std::size_t s) const {
    return std::span<const std::uint8_t>(labels).subspan(s * d_ff, d_ff);
  }
};

// Tokens [first, last) of one layer.
ActivationDataset build_dataset(const MagnitudeTrace& trace, std::size_t layer, double epsilon,
                                std::size_t first, std::size_t last);

struct PredictorGrads {
  Matrix<double> w1;
  Vector<double> b1;
  Matrix<double> w2;
  Vector<double> b2;
};

// Gradient of the mean over samples of bce_loss, for samples [first, last).
PredictorGrads bce_gradients(const PredictorParams& p, const ActivationDataset& data,
                             std::span<const std::size_t> samples);

// Mean bce_loss over the samples.
double dataset_loss(const PredictorParams& p, const ActivationDataset& data);

// Mini-batch gradient descent with heavy-ball momentum.
struct PredictorTrainConfig {
  std::size_t rank = 0;  // 0 selects default_predictor_rank(.., 2)
  double learning_rate = 1e-2;
  double momentum = 0.9;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct PredictorTrainResult {
  PredictorParams params;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Throws DivergenceError on a non-finite loss.
PredictorTrainResult train_predictor(const ActivationDataset& data,
                                     const PredictorTrainConfig& config);

struct PredictorMetrics {
  double recall = 0.0;              // |A & truth| / |truth|; 0 when truth is empty
  bool recall_defined = false;      // false when truth is empty
  double prediction_sparsity = 0.0; // (d_ff - |A|) / d_ff
};

// `truth` holds the truly active neuron indices.
PredictorMetrics predictor_metrics(const SelectionResult& prediction,
                                   std::span<const std::size_t> truth, std::size_t d_ff);

// Running flat average over (token, layer) pairs; tokens with empty truth are
// skipped for recall only.
struct MetricAverager {
  double recall_sum = 0.0;
  std::size_t recall_count = 0;
  double sparsity_sum = 0.0;
  std::size_t sparsity_count = 0;

  void add(const PredictorMetrics& m);
  double mean_recall() const;
  double mean_prediction_sparsity() const;
};

// `count` distinct neurons drawn uniformly, ascending.
SelectionResult random_selection(std::size_t d_ff, std::size_t count, Rng& rng);

std::vector<std::size_t> active_indices(std::span<const std::uint8_t> labels);

}  // namespace sparsekit
