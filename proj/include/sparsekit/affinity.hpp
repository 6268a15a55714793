// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sparsekit/sparsity.hpp"

namespace sparsekit {

// Activated-neuron sets of one layer, one per token in corpus order.
// Each set is sorted ascending and holds indices < d_ff.
struct LayerActivations {
  std::size_t d_ff = 0;
  std::vector<std::vector<std::uint32_t>> tokens;

  std::size_t size() const { return tokens.size(); }
  void validate() const;
  // Mean over tokens of |A_t| / d_ff.
  double activation_ratio() const;
};

struct ActivationSetTrace {
  std::vector<LayerActivations> layers;
  // Token indices where a new document starts. The sliding window never
  // looks back across a start. Empty means one continuous stream.
  std::vector<std::size_t> document_starts;

  void validate() const;
};

// Activation sets at per-layer thresholds: magnitude >= epsilon.
ActivationSetTrace activation_trace(const MagnitudeTrace& trace, const ThresholdTable& thresholds);

// Mean over eligible tokens of |A_i & (A_{i-1} | ... | A_{i-k})| / |A_i|.
// Every non-empty token after the first of its document is eligible; near
// the start the window holds the predecessors that exist, like the I/O
// cache does. That keeps the eligible set fixed as k grows, so the ratio is
// non-decreasing in k. Throws if the layer has fewer than k + 1 tokens or
// k == 0.
double reuse_ratio(const LayerActivations& layer, std::size_t window,
                   std::span<const std::size_t> document_starts = {});

struct ReuseSummary {
  std::vector<double> per_layer;
  double overall = 0.0;  // mean over layers
};

ReuseSummary reuse_ratio(const ActivationSetTrace& trace, std::size_t window);

// M(i, j) = #tokens with i and j active / #tokens with i active, M(i, i) = 0.
struct CoactivationMatrix {
  std::size_t d_ff = 0;
  std::vector<double> values;            // d_ff * d_ff, row-major
  std::vector<std::uint64_t> counts;     // activations per neuron

  double operator()(std::size_t i, std::size_t j) const { return values[i * d_ff + j]; }
};

// Largest d_ff for which the dense matrix is built.
inline constexpr std::size_t kMaxDenseCoactivation = 16384;

CoactivationMatrix coactivation_matrix(const LayerActivations& layer);

// mean_i max_j M(i, j) - mean_ij M(i, j)
double top_avg_gap(const CoactivationMatrix& m);

// Same quantity without materializing the matrix: row sums come from
// per-token set sizes, row maxima from hashed pair counts. Usable above
// kMaxDenseCoactivation.
double top_avg_gap_streaming(const LayerActivations& layer);

struct NeuronPair {
  std::uint32_t first = 0;
  std::uint32_t second = 0;
  double frequency = 0.0;  // M(first, second)
};

// For each neuron its most co-activated partner, ranked by frequency
// (ties by lower first index), truncated to `limit`.
std::vector<NeuronPair> top_coactivated_pairs(const CoactivationMatrix& m, std::size_t limit);

// Fraction of all activations covered by the ceil(p * d_ff) most frequently
// activated neurons (ties by index), for each p in `grid`.
std::vector<double> hot_cdf(const LayerActivations& layer, std::span<const double> grid);

struct IoSimConfig {
  std::size_t window = 1;
  std::uint64_t bytes_per_neuron = 4;
};

struct IoSimResult {
  std::uint64_t total_bytes = 0;
  std::uint64_t baseline_bytes = 0;  // bytes_per_neuron * d_ff * tokens
  double reduction = 0.0;            // 1 - total / baseline
  std::uint64_t active_neurons = 0;  // sum of |A_i|
  std::uint64_t fetched_neurons = 0;
};

// Before token i the cache holds the union of the previous `window` sets of
// the same document; token i fetches A_i minus the cache.
IoSimResult io_simulate(const LayerActivations& layer, const IoSimConfig& config,
                        std::span<const std::size_t> document_starts = {});

// Sums bytes over every layer.
IoSimResult io_simulate(const ActivationSetTrace& trace, const IoSimConfig& config);

// Bytes of one neuron's parameters: row of W_in, row of V_in (gated),
// column of W_out, stored as f32.
std::uint64_t neuron_parameter_bytes(std::size_t d_model, bool gated);

// Per-layer summary of every affinity statistic.
struct LayerAffinity {
  double activation_ratio = 0.0;
  std::vector<double> reuse;  // one per window in AffinityReport::windows
  double gap = 0.0;
  std::vector<double> cdf;    // one per point in AffinityReport::cdf_grid
};

struct AffinityReport {
  std::vector<std::size_t> windows;
  std::vector<double> cdf_grid;
  std::vector<LayerAffinity> layers;
  std::vector<double> reuse;  // mean over layers, per window
  double gap = 0.0;           // mean over layers
};

// Windows the trace is too short for are skipped. The gap uses the dense
// matrix up to kMaxDenseCoactivation and the streaming path above it.
AffinityReport analyze_affinity(const ActivationSetTrace& trace,
                                std::span<const std::size_t> windows,
                                std::span<const double> cdf_grid);

}  // namespace sparsekit
