// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/affinity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace sparsekit {

namespace {

// First token of the document containing each token.
std::vector<std::size_t> document_origin(std::size_t tokens,
                                         std::span<const std::size_t> document_starts) {
  std::vector<std::size_t> origin(tokens, 0);
  std::vector<std::size_t> starts(document_starts.begin(), document_starts.end());
  std::sort(starts.begin(), starts.end());
  std::size_t current = 0;
  auto next = starts.begin();
  for (std::size_t t = 0; t < tokens; ++t) {
    while (next != starts.end() && *next <= t) current = *next++;
    origin[t] = current;
  }
  return origin;
}

// Marks the union of the previous `window` sets (within the document) in
// `mask`, returning the marked indices so they can be cleared.
std::vector<std::uint32_t> mark_window(const LayerActivations& layer, std::size_t token,
                                       std::size_t window, std::size_t origin,
                                       std::vector<std::uint8_t>& mask) {
  std::vector<std::uint32_t> marked;
  const std::size_t lo = token >= window ? std::max(origin, token - window) : origin;
  for (std::size_t j = lo; j < token; ++j) {
    for (const std::uint32_t n : layer.tokens[j]) {
      if (!mask[n]) {
        mask[n] = 1;
        marked.push_back(n);
      }
    }
  }
  return marked;
}

}  // namespace

void LayerActivations::validate() const {
  if (d_ff == 0) throw std::invalid_argument("activation trace needs d_ff > 0");
  for (const auto& set : tokens) {
    for (std::size_t k = 0; k < set.size(); ++k) {
      if (set[k] >= d_ff) throw std::out_of_range("activated neuron index exceeds d_ff");
      if (k > 0 && set[k] <= set[k - 1]) {
        throw std::invalid_argument("activation sets must be strictly ascending");
      }
    }
  }
}

double LayerActivations::activation_ratio() const {
  if (tokens.empty()) return 0.0;
  double total = 0.0;
  for (const auto& set : tokens) {
    total += static_cast<double>(set.size()) / static_cast<double>(d_ff);
  }
  return total / static_cast<double>(tokens.size());
}

void ActivationSetTrace::validate() const {
  if (layers.empty()) throw std::invalid_argument("activation trace has no layers");
  for (const auto& layer : layers) {
    layer.validate();
    if (layer.size() != layers.front().size()) {
      throw std::invalid_argument("all layers must cover the same tokens");
    }
  }
}

double reuse_ratio(const LayerActivations& layer, std::size_t window,
                   std::span<const std::size_t> document_starts) {
  if (window == 0) throw std::invalid_argument("reuse_ratio: window must be at least 1");
  if (layer.size() < window + 1) {
    throw std::invalid_argument("reuse_ratio: trace has " + std::to_string(layer.size()) +
                                " tokens, window " + std::to_string(window) + " needs at least " +
                                std::to_string(window + 1));
  }
  const auto origin = document_origin(layer.size(), document_starts);
  std::vector<std::uint8_t> mask(layer.d_ff, 0);
  double total = 0.0;
  std::size_t eligible = 0;
  for (std::size_t i = 0; i < layer.size(); ++i) {
    const auto& current = layer.tokens[i];
    if (current.empty() || i == origin[i]) continue;
    const auto marked = mark_window(layer, i, window, origin[i], mask);
    std::size_t overlap = 0;
    for (const std::uint32_t n : current) overlap += mask[n];
    for (const std::uint32_t n : marked) mask[n] = 0;
    total += static_cast<double>(overlap) / static_cast<double>(current.size());
    ++eligible;
  }
  return eligible == 0 ? 0.0 : total / static_cast<double>(eligible);
}

ReuseSummary reuse_ratio(const ActivationSetTrace& trace, std::size_t window) {
  ReuseSummary out;
  for (const auto& layer : trace.layers) {
    out.per_layer.push_back(reuse_ratio(layer, window, trace.document_starts));
  }
  if (!out.per_layer.empty()) {
    out.overall = std::accumulate(out.per_layer.begin(), out.per_layer.end(), 0.0) /
                  static_cast<double>(out.per_layer.size());
  }
  return out;
}

CoactivationMatrix coactivation_matrix(const LayerActivations& layer) {
  const std::size_t n = layer.d_ff;
  if (n > kMaxDenseCoactivation) {
    throw std::length_error("d_ff " + std::to_string(n) +
                            " exceeds the dense co-activation cap; use top_avg_gap_streaming");
  }
  std::vector<std::uint64_t> pair_counts(n * n, 0);
  CoactivationMatrix m;
  m.d_ff = n;
  m.counts.assign(n, 0);
  for (const auto& set : layer.tokens) {
    for (const std::uint32_t i : set) {
      ++m.counts[i];
      for (const std::uint32_t j : set) {
        if (i != j) ++pair_counts[i * n + j];
      }
    }
  }
  m.values.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (m.counts[i] == 0) continue;
    const auto denom = static_cast<double>(m.counts[i]);
    for (std::size_t j = 0; j < n; ++j) {
      m.values[i * n + j] = static_cast<double>(pair_counts[i * n + j]) / denom;
    }
  }
  return m;
}

double top_avg_gap(const CoactivationMatrix& m) {
  const std::size_t n = m.d_ff;
  if (n == 0) throw std::invalid_argument("top_avg_gap: empty matrix");
  double max_sum = 0.0;
  double all_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row_max = m(i, 0);
    for (std::size_t j = 0; j < n; ++j) {
      row_max = std::max(row_max, m(i, j));
      all_sum += m(i, j);
    }
    max_sum += row_max;
  }
  const auto dn = static_cast<double>(n);
  return max_sum / dn - all_sum / (dn * dn);
}

double top_avg_gap_streaming(const LayerActivations& layer) {
  const std::size_t n = layer.d_ff;
  if (n == 0) throw std::invalid_argument("top_avg_gap_streaming: d_ff must be positive");
  std::vector<std::uint64_t> counts(n, 0);
  std::vector<std::uint64_t> partner_total(n, 0);
  std::unordered_map<std::uint64_t, std::uint64_t> pairs;
  for (const auto& set : layer.tokens) {
    for (const std::uint32_t i : set) {
      ++counts[i];
      partner_total[i] += set.size() - 1;
      for (const std::uint32_t j : set) {
        if (i != j) ++pairs[(static_cast<std::uint64_t>(i) << 32) | j];
      }
    }
  }
  std::vector<std::uint64_t> row_max(n, 0);
  for (const auto& [key, count] : pairs) {
    const auto i = static_cast<std::size_t>(key >> 32);
    row_max[i] = std::max(row_max[i], count);
  }
  double max_sum = 0.0;
  double all_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[i] == 0) continue;
    const auto denom = static_cast<double>(counts[i]);
    max_sum += static_cast<double>(row_max[i]) / denom;
    all_sum += static_cast<double>(partner_total[i]) / denom;
  }
  const auto dn = static_cast<double>(n);
  return max_sum / dn - all_sum / (dn * dn);
}

std::vector<NeuronPair> top_coactivated_pairs(const CoactivationMatrix& m, std::size_t limit) {
  std::vector<NeuronPair> pairs;
  for (std::size_t i = 0; i < m.d_ff; ++i) {
    if (m.counts[i] == 0) continue;
    NeuronPair best{static_cast<std::uint32_t>(i), 0, -1.0};
    for (std::size_t j = 0; j < m.d_ff; ++j) {
      if (j != i && m(i, j) > best.frequency) {
        best.second = static_cast<std::uint32_t>(j);
        best.frequency = m(i, j);
      }
    }
    if (best.frequency > 0.0) pairs.push_back(best);
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const NeuronPair& a, const NeuronPair& b) {
    return a.frequency > b.frequency;
  });
  if (pairs.size() > limit) pairs.resize(limit);
  return pairs;
}

std::vector<double> hot_cdf(const LayerActivations& layer, std::span<const double> grid) {
  const std::size_t n = layer.d_ff;
  std::vector<std::uint64_t> freq(n, 0);
  std::uint64_t total = 0;
  for (const auto& set : layer.tokens) {
    for (const std::uint32_t i : set) ++freq[i];
    total += set.size();
  }
  if (total == 0) throw std::invalid_argument("hot_cdf: trace has no activations");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return freq[a] > freq[b]; });
  std::vector<std::uint64_t> prefix(n + 1, 0);
  for (std::size_t k = 0; k < n; ++k) prefix[k + 1] = prefix[k] + freq[order[k]];

  std::vector<double> out;
  out.reserve(grid.size());
  for (const double p : grid) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("hot_cdf: grid point outside [0, 1]");
    // Tolerate p * d_ff landing a rounding step above an integer.
    const auto top = std::min<std::size_t>(
        n, static_cast<std::size_t>(std::max(0.0, std::ceil(p * static_cast<double>(n) - 1e-9))));
    out.push_back(static_cast<double>(prefix[top]) / static_cast<double>(total));
  }
  return out;
}

IoSimResult io_simulate(const LayerActivations& layer, const IoSimConfig& config,
                        std::span<const std::size_t> document_starts) {
  if (config.bytes_per_neuron == 0) throw std::invalid_argument("bytes per neuron must be positive");
  const auto origin = document_origin(layer.size(), document_starts);
  std::vector<std::uint8_t> mask(layer.d_ff, 0);
  IoSimResult r;
  for (std::size_t i = 0; i < layer.size(); ++i) {
    const auto& current = layer.tokens[i];
    r.active_neurons += current.size();
    const auto marked =
        config.window == 0 ? std::vector<std::uint32_t>{}
                           : mark_window(layer, i, config.window, origin[i], mask);
    std::uint64_t fetched = 0;
    for (const std::uint32_t n : current) fetched += mask[n] ? 0 : 1;
    for (const std::uint32_t n : marked) mask[n] = 0;
    r.fetched_neurons += fetched;
  }
  r.total_bytes = r.fetched_neurons * config.bytes_per_neuron;
  r.baseline_bytes = config.bytes_per_neuron * layer.d_ff * layer.size();
  r.reduction = r.baseline_bytes == 0 ? 0.0
                                      : 1.0 - static_cast<double>(r.total_bytes) /
                                                  static_cast<double>(r.baseline_bytes);
  return r;
}

IoSimResult io_simulate(const ActivationSetTrace& trace, const IoSimConfig& config) {
  IoSimResult sum;
  for (const auto& layer : trace.layers) {
    const IoSimResult r = io_simulate(layer, config, trace.document_starts);
    sum.total_bytes += r.total_bytes;
    sum.baseline_bytes += r.baseline_bytes;
    sum.active_neurons += r.active_neurons;
    sum.fetched_neurons += r.fetched_neurons;
  }
  sum.reduction = sum.baseline_bytes == 0
                      ? 0.0
                      : 1.0 - static_cast<double>(sum.total_bytes) /
                                  static_cast<double>(sum.baseline_bytes);
  return sum;
}

std::uint64_t neuron_parameter_bytes(std::size_t d_model, bool gated) {
  return static_cast<std::uint64_t>(gated ? 3 : 2) * d_model * sizeof(float);
}

AffinityReport analyze_affinity(const ActivationSetTrace& trace,
                                std::span<const std::size_t> windows,
                                std::span<const double> cdf_grid) {
  trace.validate();
  AffinityReport report;
  report.cdf_grid.assign(cdf_grid.begin(), cdf_grid.end());
  const std::size_t tokens = trace.layers.front().size();
  for (const std::size_t k : windows) {
    if (k >= 1 && tokens >= k + 1) report.windows.push_back(k);
  }
  report.reuse.assign(report.windows.size(), 0.0);
  for (const auto& layer : trace.layers) {
    LayerAffinity la;
    la.activation_ratio = layer.activation_ratio();
    for (const std::size_t k : report.windows) {
      la.reuse.push_back(reuse_ratio(layer, k, trace.document_starts));
    }
    la.gap = layer.d_ff <= kMaxDenseCoactivation ? top_avg_gap(coactivation_matrix(layer))
                                                 : top_avg_gap_streaming(layer);
    bool any = false;
    for (const auto& set : layer.tokens) any = any || !set.empty();
    if (any) la.cdf = hot_cdf(layer, cdf_grid);
    report.layers.push_back(std::move(la));
  }
  const double n = static_cast<double>(report.layers.size());
  for (const auto& la : report.layers) {
    for (std::size_t w = 0; w < la.reuse.size(); ++w) report.reuse[w] += la.reuse[w] / n;
    report.gap += la.gap / n;
  }
  return report;
}

ActivationSetTrace activation_trace(const MagnitudeTrace& trace, const ThresholdTable& thresholds) {
  ActivationSetTrace out;
  out.layers.resize(trace.layers);
  for (std::size_t l = 0; l < trace.layers; ++l) {
    out.layers[l].d_ff = trace.d_ff;
    out.layers[l].tokens.resize(trace.tokens);
  }
  for (std::size_t tok = 0; tok < trace.tokens; ++tok) {
    for (std::size_t l = 0; l < trace.layers; ++l) {
      const auto m = trace.magnitudes_of(tok, l);
      auto& set = out.layers[l].tokens[tok];
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] >= thresholds.epsilon[l]) set.push_back(static_cast<std::uint32_t>(i));
      }
    }
  }
  return out;
}


}  // namespace sparsekit
