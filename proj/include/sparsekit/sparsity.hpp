// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sparsekit/ffn.hpp"

namespace sparsekit {

// CETT default upper bound.
inline constexpr double kDefaultCettBound = 0.2;
// Default number of quantile candidates for threshold search.
inline constexpr std::size_t kDefaultCandidateCount = 1000;

// Cumulative error of tail truncation at threshold epsilon:
//
//   |sum_{i in D} n_i(x)| / |FFN(x)|,  D = { i : |n_i(x)| < epsilon }
//
// Neurons are accumulated in ascending magnitude order (ties by index); the
// denominator continues the same running sum over every neuron and adds
// b_out, so cett(0) == 0 and, without b_out, cett(inf) == 1 exactly.
// Returns 0 when |FFN(x)| == 0.
template <std::floating_point T>
T cett(const FfnWeights<T>& w, std::span<const T> x, T epsilon);

// sum_{i not in D} n_i(x) + b_out, in index order. Equals ffn_forward
// bit for bit at epsilon == 0.
template <std::floating_point T>
Vector<T> sparse_forward(const FfnWeights<T>& w, std::span<const T> x, T epsilon);

// |{i : magnitude_i < epsilon}| / d_ff
double sparsity_ratio(std::span<const double> magnitudes, double epsilon);

// Fraction of neurons whose activation value is exactly zero.
double zero_activation_ratio(const FfnWeights<double>& w, std::span<const double> x);

// Per-token, per-layer neuron magnitudes plus (optionally) the FFN inputs
// that produced them. Storage is token-major, then layer, then neuron.
struct MagnitudeTrace {
  std::size_t layers = 0;
  std::size_t d_ff = 0;
  std::size_t tokens = 0;
  std::size_t d_model = 0;          // 0 when inputs are not recorded
  std::vector<double> magnitudes;   // tokens * layers * d_ff
  std::vector<double> inputs;       // tokens * layers * d_model, or empty

  bool has_inputs() const { return !inputs.empty(); }
  std::span<const double> magnitudes_of(std::size_t token, std::size_t layer) const;
  std::span<const double> input_of(std::size_t token, std::size_t layer) const;
  std::vector<double> layer_magnitudes(std::size_t layer) const;
  void validate() const;
};

// Evaluates every layer on its recorded inputs (token-major, then layer).
MagnitudeTrace record_trace(std::span<const FfnWeights<double>> layers,
                            std::span<const double> inputs, std::size_t tokens);

// Arithmetic mean of per-token CETT over a layer's inputs; tokens with
// |FFN(x)| == 0 are skipped. Returns 0 if every token is skipped.
double mean_cett(const FfnWeights<double>& w, const MagnitudeTrace& trace, std::size_t layer,
                 double epsilon);

// mean_cett at each of a non-decreasing list of thresholds, in one sweep per
// token. Values are bit-identical to calling mean_cett per threshold.
std::vector<double> mean_cett_curve(const FfnWeights<double>& w, const MagnitudeTrace& trace,
                                    std::size_t layer, std::span<const double> thresholds);

// Quantiles of a layer's magnitudes used as candidate thresholds.
std::vector<double> threshold_candidates(const MagnitudeTrace& trace, std::size_t layer,
                                         std::size_t count = kDefaultCandidateCount);

// Binary search over the candidates: accept a probe when mean CETT <= bound
// and move up, else move down. Returns the last accepted candidate, or 0.
double find_threshold_alg1(const MagnitudeTrace& trace, const FfnWeights<double>& w,
                           std::size_t layer, double bound,
                           std::size_t candidate_count = kDefaultCandidateCount);

// Largest candidate whose mean CETT <= bound, by scanning all candidates.
// Returns 0 if none qualifies.
double find_threshold_exact(const MagnitudeTrace& trace, const FfnWeights<double>& w,
                            std::size_t layer, double bound,
                            std::size_t candidate_count = kDefaultCandidateCount);

enum class ThresholdProvenance { kAlgorithm1, kExactScan, kManual };

std::string_view to_string(ThresholdProvenance provenance);
std::optional<ThresholdProvenance> parse_threshold_provenance(std::string_view name);

struct ThresholdTable {
  std::vector<double> epsilon;  // one per layer
  double bound = kDefaultCettBound;
  ThresholdProvenance provenance = ThresholdProvenance::kManual;

  void validate() const;
};

// Calibrates each layer independently.
ThresholdTable calibrate_thresholds(const MagnitudeTrace& trace,
                                    std::span<const FfnWeights<double>> layers, double bound,
                                    ThresholdProvenance algorithm,
                                    std::size_t candidate_count = kDefaultCandidateCount);

struct LayerSparsity {
  double sparsity = 0.0;          // mean over tokens of |D| / d_ff
  double cett = 0.0;              // mean over tokens with |FFN(x)| > 0
  double zero_activation = 0.0;   // mean over tokens of exact-zero activation fraction
};

struct SparsityReport {
  std::vector<LayerSparsity> layers;
  double sparsity = 0.0;          // mean over layers
  double cett = 0.0;
  double zero_activation = 0.0;
  ThresholdTable thresholds;
};

// Averages per token, then across tokens, then across layers. CETT and the
// zero-activation ratio need weights and recorded inputs; when `layers` is
// empty they are reported as 0.
SparsityReport summarize(const MagnitudeTrace& trace, std::span<const FfnWeights<double>> layers,
                         const ThresholdTable& thresholds);

}  // namespace sparsekit
