// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "sparsekit/detail/truncation.hpp"

namespace sparsekit {

namespace detail {

template <std::floating_point T>
TokenTruncation<T>::TokenTruncation(const FfnWeights<T>& w, std::span<const T> x)
    : w_(&w), hidden_(ffn_hidden(w, x).hidden), running_(w.d_model(), T{0}),
      scratch_(w.d_model()) {
  const std::size_t df = w.d_ff();
  magnitudes_.resize(df);
  for (std::size_t i = 0; i < df; ++i) {
    neuron_output(w, i, hidden_[i], std::span<T>(scratch_));
    magnitudes_[i] = l2_norm(std::span<const T>(scratch_));
  }
  order_.resize(df);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::stable_sort(order_.begin(), order_.end(), [this](std::size_t a, std::size_t b) {
    return magnitudes_[a] < magnitudes_[b];
  });
}

template <std::floating_point T>
T TokenTruncation<T>::advance_below(T epsilon) {
  while (next_ < order_.size() && magnitudes_[order_[next_]] < epsilon) {
    add(order_[next_]);
    ++next_;
  }
  return l2_norm(std::span<const T>(running_));
}

template <std::floating_point T>
T TokenTruncation<T>::full_norm() {
  while (next_ < order_.size()) {
    add(order_[next_]);
    ++next_;
  }
  if (w_->b_out) {
    Vector<T> with_bias = running_;
    for (std::size_t j = 0; j < with_bias.size(); ++j) with_bias[j] += (*w_->b_out)[j];
    return l2_norm(std::span<const T>(with_bias));
  }
  return l2_norm(std::span<const T>(running_));
}

template <std::floating_point T>
void TokenTruncation<T>::add(std::size_t neuron) {
  neuron_output(*w_, neuron, hidden_[neuron], std::span<T>(scratch_));
  for (std::size_t j = 0; j < running_.size(); ++j) running_[j] += scratch_[j];
}

template class TokenTruncation<float>;
template class TokenTruncation<double>;

}  // namespace detail

namespace {

void check_layer(const MagnitudeTrace& trace, std::size_t layer) {
  if (layer >= trace.layers) {
    throw std::out_of_range("layer " + std::to_string(layer) + " out of range (" +
                            std::to_string(trace.layers) + " layers)");
  }
}

void check_search_inputs(const MagnitudeTrace& trace, const FfnWeights<double>& w,
                         std::size_t layer, double bound) {
  if (trace.tokens == 0) throw std::invalid_argument("threshold search on an empty trace");
  if (!(bound >= 0.0 && bound <= 1.0)) {
    throw std::invalid_argument("CETT bound must lie in [0, 1]");
  }
  check_layer(trace, layer);
  if (!trace.has_inputs()) {
    throw std::invalid_argument("threshold search needs recorded FFN inputs");
  }
  if (w.d_ff() != trace.d_ff || w.d_model() != trace.d_model) {
    throw ShapeError("weights do not match the trace dimensions");
  }
}

}  // namespace

template <std::floating_point T>
T cett(const FfnWeights<T>& w, std::span<const T> x, T epsilon) {
  if (epsilon < T{0}) throw std::invalid_argument("cett: epsilon must be non-negative");
  detail::TokenTruncation<T> trunc(w, x);
  const T numerator = trunc.advance_below(epsilon);
  const T denominator = trunc.full_norm();
  if (denominator == T{0}) return T{0};
  return numerator / denominator;
}

template <std::floating_point T>
Vector<T> sparse_forward(const FfnWeights<T>& w, std::span<const T> x, T epsilon) {
  if (epsilon < T{0}) throw std::invalid_argument("sparse_forward: epsilon must be non-negative");
  const HiddenState<T> h = ffn_hidden(w, x);
  Vector<T> out(w.d_model(), T{0});
  Vector<T> n(w.d_model());
  for (std::size_t i = 0; i < w.d_ff(); ++i) {
    neuron_output(w, i, h.hidden[i], std::span<T>(n));
    if (l2_norm(std::span<const T>(n)) < epsilon) continue;
    for (std::size_t j = 0; j < n.size(); ++j) out[j] += n[j];
  }
  if (w.b_out) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += (*w.b_out)[j];
  }
  return out;
}

double sparsity_ratio(std::span<const double> magnitudes, double epsilon) {
  if (magnitudes.empty()) throw std::invalid_argument("sparsity_ratio: no magnitudes");
  const auto below = std::count_if(magnitudes.begin(), magnitudes.end(),
                                   [epsilon](double m) { return m < epsilon; });
  return static_cast<double>(below) / static_cast<double>(magnitudes.size());
}

double zero_activation_ratio(const FfnWeights<double>& w, std::span<const double> x) {
  const HiddenState<double> h = ffn_hidden(w, x);
  const auto zeros = std::count(h.activation.begin(), h.activation.end(), 0.0);
  return static_cast<double>(zeros) / static_cast<double>(w.d_ff());
}

std::span<const double> MagnitudeTrace::magnitudes_of(std::size_t token,
                                                      std::size_t layer) const {
  return std::span<const double>(magnitudes).subspan((token * layers + layer) * d_ff, d_ff);
}

std::span<const double> MagnitudeTrace::input_of(std::size_t token, std::size_t layer) const {
  return std::span<const double>(inputs).subspan((token * layers + layer) * d_model, d_model);
}

std::vector<double> MagnitudeTrace::layer_magnitudes(std::size_t layer) const {
  std::vector<double> out;
  out.reserve(tokens * d_ff);
  for (std::size_t t = 0; t < tokens; ++t) {
    const auto m = magnitudes_of(t, layer);
    out.insert(out.end(), m.begin(), m.end());
  }
  return out;
}

void MagnitudeTrace::validate() const {
  if (magnitudes.size() != tokens * layers * d_ff) {
    throw ShapeError("magnitude trace length does not match tokens*layers*d_ff");
  }
  if (!inputs.empty() && inputs.size() != tokens * layers * d_model) {
    throw ShapeError("input trace length does not match tokens*layers*d_model");
  }
  for (const double m : magnitudes) {
    if (!(m >= 0.0) || !std::isfinite(m)) {
      throw std::invalid_argument("magnitudes must be finite and non-negative");
    }
  }
}

MagnitudeTrace record_trace(std::span<const FfnWeights<double>> layers,
                            std::span<const double> inputs, std::size_t tokens) {
  if (layers.empty()) throw std::invalid_argument("record_trace: no layers");
  MagnitudeTrace trace;
  trace.layers = layers.size();
  trace.d_ff = layers.front().d_ff();
  trace.d_model = layers.front().d_model();
  trace.tokens = tokens;
  for (const auto& w : layers) {
    if (w.d_ff() != trace.d_ff || w.d_model() != trace.d_model) {
      throw ShapeError("record_trace: all layers must share d_model and d_ff");
    }
  }
  if (inputs.size() != tokens * trace.layers * trace.d_model) {
    throw ShapeError("record_trace: input length does not match tokens*layers*d_model");
  }
  trace.inputs.assign(inputs.begin(), inputs.end());
  trace.magnitudes.reserve(tokens * trace.layers * trace.d_ff);
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t l = 0; l < trace.layers; ++l) {
      const Vector<double> m = neuron_magnitudes(layers[l], trace.input_of(t, l));
      trace.magnitudes.insert(trace.magnitudes.end(), m.begin(), m.end());
    }
  }
  return trace;
}

double mean_cett(const FfnWeights<double>& w, const MagnitudeTrace& trace, std::size_t layer,
                 double epsilon) {
  check_layer(trace, layer);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t t = 0; t < trace.tokens; ++t) {
    detail::TokenTruncation<double> trunc(w, trace.input_of(t, layer));
    const double numerator = trunc.advance_below(epsilon);
    const double denominator = trunc.full_norm();
    if (denominator == 0.0) continue;
    total += numerator / denominator;
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

std::vector<double> mean_cett_curve(const FfnWeights<double>& w, const MagnitudeTrace& trace,
                                    std::size_t layer, std::span<const double> thresholds) {
  check_layer(trace, layer);
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw std::invalid_argument("mean_cett_curve: thresholds must be non-decreasing");
  }
  std::vector<double> totals(thresholds.size(), 0.0);
  std::vector<double> numerators(thresholds.size());
  std::size_t counted = 0;
  for (std::size_t t = 0; t < trace.tokens; ++t) {
    detail::TokenTruncation<double> trunc(w, trace.input_of(t, layer));
    for (std::size_t c = 0; c < thresholds.size(); ++c) {
      numerators[c] = trunc.advance_below(thresholds[c]);
    }
    const double denominator = trunc.full_norm();
    if (denominator == 0.0) continue;
    for (std::size_t c = 0; c < thresholds.size(); ++c) totals[c] += numerators[c] / denominator;
    ++counted;
  }
  if (counted > 0) {
    for (double& v : totals) v /= static_cast<double>(counted);
  }
  return totals;
}

std::vector<double> threshold_candidates(const MagnitudeTrace& trace, std::size_t layer,
                                         std::size_t count) {
  check_layer(trace, layer);
  return quantiles(trace.layer_magnitudes(layer), count);
}

double find_threshold_alg1(const MagnitudeTrace& trace, const FfnWeights<double>& w,
                           std::size_t layer, double bound, std::size_t candidate_count) {
  check_search_inputs(trace, w, layer, bound);
  const std::vector<double> candidates = threshold_candidates(trace, layer, candidate_count);
  // Signed indices so high can drop below zero.
  std::ptrdiff_t low = 0;
  std::ptrdiff_t high = static_cast<std::ptrdiff_t>(candidates.size()) - 1;
  double best = 0.0;
  while (low <= high) {
    const std::ptrdiff_t mid = (low + high) / 2;
    const double threshold = candidates[static_cast<std::size_t>(mid)];
    if (mean_cett(w, trace, layer, threshold) <= bound) {
      best = threshold;
      low = mid + 1;
    } else {
      high = mid - 1;
    }
  }
  return best;
}

double find_threshold_exact(const MagnitudeTrace& trace, const FfnWeights<double>& w,
                            std::size_t layer, double bound, std::size_t candidate_count) {
  check_search_inputs(trace, w, layer, bound);
  const std::vector<double> candidates = threshold_candidates(trace, layer, candidate_count);
  const std::vector<double> curve = mean_cett_curve(w, trace, layer, candidates);
  double best = 0.0;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (curve[c] <= bound) best = std::max(best, candidates[c]);
  }
  return best;
}

std::string_view to_string(ThresholdProvenance provenance) {
  switch (provenance) {
    case ThresholdProvenance::kAlgorithm1: return "alg1";
    case ThresholdProvenance::kExactScan: return "exact";
    case ThresholdProvenance::kManual: return "manual";
  }
  return "manual";
}

std::optional<ThresholdProvenance> parse_threshold_provenance(std::string_view name) {
  if (name == "alg1") return ThresholdProvenance::kAlgorithm1;
  if (name == "exact") return ThresholdProvenance::kExactScan;
  if (name == "manual") return ThresholdProvenance::kManual;
  return std::nullopt;
}

void ThresholdTable::validate() const {
  if (!(bound >= 0.0 && bound <= 1.0)) throw std::invalid_argument("bound must lie in [0, 1]");
  for (const double e : epsilon) {
    if (!(e >= 0.0) || !std::isfinite(e)) {
      throw std::invalid_argument("thresholds must be finite and non-negative");
    }
  }
}

ThresholdTable calibrate_thresholds(const MagnitudeTrace& trace,
                                    std::span<const FfnWeights<double>> layers, double bound,
                                    ThresholdProvenance algorithm, std::size_t candidate_count) {
  if (layers.size() != trace.layers) throw ShapeError("one weight set per trace layer required");
  if (algorithm == ThresholdProvenance::kManual) {
    throw std::invalid_argument("manual thresholds are not calibrated");
  }
  ThresholdTable table;
  table.bound = bound;
  table.provenance = algorithm;
  for (std::size_t l = 0; l < trace.layers; ++l) {
    table.epsilon.push_back(algorithm == ThresholdProvenance::kAlgorithm1
                                ? find_threshold_alg1(trace, layers[l], l, bound, candidate_count)
                                : find_threshold_exact(trace, layers[l], l, bound, candidate_count));
  }
  return table;
}

SparsityReport summarize(const MagnitudeTrace& trace, std::span<const FfnWeights<double>> layers,
                         const ThresholdTable& thresholds) {
  if (thresholds.epsilon.size() != trace.layers) {
    throw ShapeError("threshold table has " + std::to_string(thresholds.epsilon.size()) +
                     " layers, trace has " + std::to_string(trace.layers));
  }
  const bool with_weights = !layers.empty();
  if (with_weights && (layers.size() != trace.layers || !trace.has_inputs())) {
    throw ShapeError("summarize needs one weight set per layer and recorded inputs");
  }
  if (trace.tokens == 0) throw std::invalid_argument("summarize: empty trace");

  SparsityReport report;
  report.thresholds = thresholds;
  for (std::size_t l = 0; l < trace.layers; ++l) {
    const double eps = thresholds.epsilon[l];
    LayerSparsity ls;
    double cett_total = 0.0;
    std::size_t cett_count = 0;
    for (std::size_t t = 0; t < trace.tokens; ++t) {
      ls.sparsity += sparsity_ratio(trace.magnitudes_of(t, l), eps);
      if (with_weights) {
        const auto x = trace.input_of(t, l);
        detail::TokenTruncation<double> trunc(layers[l], x);
        const double numerator = trunc.advance_below(eps);
        const double denominator = trunc.full_norm();
        if (denominator != 0.0) {
          cett_total += numerator / denominator;
          ++cett_count;
        }
        ls.zero_activation += zero_activation_ratio(layers[l], x);
      }
    }
    const auto n = static_cast<double>(trace.tokens);
    ls.sparsity /= n;
    ls.zero_activation /= n;
    ls.cett = cett_count == 0 ? 0.0 : cett_total / static_cast<double>(cett_count);
    report.layers.push_back(ls);
  }
  for (const auto& ls : report.layers) {
    report.sparsity += ls.sparsity;
    report.cett += ls.cett;
    report.zero_activation += ls.zero_activation;
  }
  const auto nl = static_cast<double>(report.layers.size());
  report.sparsity /= nl;
  report.cett /= nl;
  report.zero_activation /= nl;
  return report;
}

#define SPARSEKIT_INSTANTIATE(T)                                                 \
  template T cett<T>(const FfnWeights<T>&, std::span<const T>, T);              \
  template Vector<T> sparse_forward<T>(const FfnWeights<T>&, std::span<const T>, T);

SPARSEKIT_INSTANTIATE(float)
SPARSEKIT_INSTANTIATE(double)
#undef SPARSEKIT_INSTANTIATE

}  // namespace sparsekit
