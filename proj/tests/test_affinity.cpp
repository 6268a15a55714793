// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/affinity.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "sparsekit/rng.hpp"

namespace sparsekit {
namespace {

using Sets = std::vector<std::vector<std::uint32_t>>;

LayerActivations layer_of(std::size_t d_ff, Sets sets) {
  LayerActivations l;
  l.d_ff = d_ff;
  l.tokens = std::move(sets);
  return l;
}

LayerActivations random_layer(std::size_t d_ff, std::size_t tokens, double p, Rng& rng) {
  LayerActivations l;
  l.d_ff = d_ff;
  for (std::size_t t = 0; t < tokens; ++t) {
    std::vector<std::uint32_t> s;
    for (std::uint32_t i = 0; i < d_ff; ++i) {
      if (rng.uniform() < p) s.push_back(i);
    }
    l.tokens.push_back(std::move(s));
  }
  return l;
}

// |A_i & union of previous k| / |A_i| by set arithmetic.
double brute_reuse(const LayerActivations& l, std::size_t k) {
  double total = 0;
  int n = 0;
  for (std::size_t i = 1; i < l.size(); ++i) {
    if (l.tokens[i].empty()) continue;
    std::set<std::uint32_t> cache;
    for (std::size_t j = 1; j <= std::min(k, i); ++j) cache.insert(l.tokens[i - j].begin(), l.tokens[i - j].end());
    std::size_t hit = 0;
    for (const auto a : l.tokens[i]) hit += cache.count(a);
    total += double(hit) / double(l.tokens[i].size());
    ++n;
  }
  return n == 0 ? 0.0 : total / n;
}

TEST(ReuseRatio, IdenticalSetsGiveOne) {
  const auto l = layer_of(6, Sets(5, {1, 4}));
  EXPECT_EQ(reuse_ratio(l, 1), 1.0);
}

TEST(ReuseRatio, DisjointSetsGiveZero) {
  const auto l = layer_of(8, {{0}, {1, 2}, {3}, {4, 5}, {6, 7}});
  EXPECT_EQ(reuse_ratio(l, 1), 0.0);
  EXPECT_EQ(reuse_ratio(l, 3), 0.0);
}

TEST(ReuseRatio, HandExample) {
  // A_1 = {4}, A_2 = {2, 5}, A_3 = {1, 2, 3, 4}, k = 2: token 3 scores
  // |{2, 4}| / 4 = 0.5 and token 2, seeing only A_1, scores 0.
  const auto l = layer_of(6, {{4}, {2, 5}, {1, 2, 3, 4}});
  EXPECT_EQ(reuse_ratio(l, 2), 0.25);
  const std::size_t starts[] = {0, 1};  // token 2 opens a document; token 3 sees only A_2
  EXPECT_EQ(reuse_ratio(l, 2, starts), 0.25);
  const auto m = layer_of(6, {{4}, {4}, {1, 2, 3, 4}});
  EXPECT_EQ(reuse_ratio(m, 2), (1.0 + 0.25) / 2);
}

TEST(ReuseRatio, RejectsShortTraceAndZeroWindow) {
  const auto l = layer_of(4, {{0}, {1}});
  EXPECT_THROW(reuse_ratio(l, 2), std::invalid_argument);
  EXPECT_THROW(reuse_ratio(l, 0), std::invalid_argument);
}

TEST(ReuseRatio, EmptySetsAreNotAveraged) {
  const auto l = layer_of(4, {{0, 1}, {}, {0}, {}});
  // Only token 2 is averaged, and its predecessor is empty.
  EXPECT_EQ(reuse_ratio(l, 1), 0.0);
  const auto m = layer_of(4, {{0, 1}, {0}, {}, {}});
  EXPECT_EQ(reuse_ratio(m, 1), 1.0);
}

TEST(ReuseRatio, DocumentStartResetsWindow) {
  const auto l = layer_of(4, {{0}, {0}, {0}, {0}});
  const std::size_t starts[] = {0, 2};
  EXPECT_EQ(reuse_ratio(l, 1), 1.0);
  // Token 2 opens a document and is not eligible; tokens 1 and 3 still reuse.
  EXPECT_EQ(reuse_ratio(l, 1, starts), 1.0);
  // The window stops at the document start.
  EXPECT_EQ(reuse_ratio(l, 2, starts), 1.0);
  const auto alt = layer_of(4, {{0}, {1}, {0}, {1}});
  EXPECT_DOUBLE_EQ(reuse_ratio(alt, 2), 2.0 / 3.0);  // tokens 2 and 3 hit, token 1 misses
  EXPECT_EQ(reuse_ratio(alt, 2, starts), 0.0);
  const auto m = layer_of(4, {{0}, {1}, {1}, {1}});
  EXPECT_DOUBLE_EQ(reuse_ratio(m, 1), 2.0 / 3.0);
  const std::size_t cut[] = {2};
  EXPECT_EQ(reuse_ratio(m, 1, cut), 0.5);
}

TEST(ReuseRatio, MatchesBruteForceAndGrowsWithWindow) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto l = random_layer(8, 10, 0.2 + 0.5 * rng.uniform(), rng);
    double prev = 0.0;
    for (std::size_t k = 1; k <= 9; ++k) {
      const double r = reuse_ratio(l, k);
      EXPECT_EQ(r, brute_reuse(l, k));
      EXPECT_GE(r, prev);
      prev = r;
    }
  }
}

TEST(ReuseRatio, TraceOverallIsMeanOfLayers) {
  ActivationSetTrace trace;
  trace.layers = {layer_of(4, {{0}, {0}, {1}}), layer_of(4, {{0}, {0}, {0}})};
  const auto r = reuse_ratio(trace, 1);
  EXPECT_EQ(r.per_layer, (std::vector<double>{0.5, 1.0}));
  EXPECT_EQ(r.overall, 0.75);
}

TEST(Coactivation, EveryNeuronAlwaysActive) {
  const auto m = coactivation_matrix(layer_of(4, Sets(3, {0, 1, 2, 3})));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(m(i, j), i == j ? 0.0 : 1.0);
  }
  EXPECT_EQ(top_avg_gap(m), 0.25);
}

TEST(Coactivation, NeverCoactiveIsZero) {
  const auto m = coactivation_matrix(layer_of(3, {{0}, {1}, {0, 2}}));
  EXPECT_EQ(m(0, 1), 0.0);
  EXPECT_EQ(m(1, 0), 0.0);
  EXPECT_EQ(m(0, 2), 0.5);
}

TEST(Coactivation, HandExample) {
  const auto m = coactivation_matrix(layer_of(3, {{0, 1}, {0}, {1, 2}}));
  EXPECT_EQ(m(0, 1), 0.5);
  EXPECT_EQ(m(1, 0), 0.5);
  EXPECT_EQ(m(1, 2), 0.5);
  EXPECT_EQ(m(2, 1), 1.0);
  EXPECT_EQ(m.counts, (std::vector<std::uint64_t>{2, 2, 1}));
}

TEST(Coactivation, SilentRowsAreZero) {
  const auto m = coactivation_matrix(layer_of(4, {{0, 1}, {1}}));
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(m(2, j), 0.0);
    EXPECT_EQ(m(3, j), 0.0);
  }
}

TEST(TopAvgGap, ZeroMatrix) {
  const auto m = coactivation_matrix(layer_of(5, {{}, {}}));
  EXPECT_EQ(top_avg_gap(m), 0.0);
}

TEST(TopAvgGap, MatchesBruteForceFormula) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto l = random_layer(8, 10, 0.4, rng);
    // Brute force straight from the set definition.
    double row_max_sum = 0, all_sum = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      double count_i = 0;
      std::vector<double> both(8, 0);
      for (const auto& s : l.tokens) {
        const bool has_i = std::count(s.begin(), s.end(), i) > 0;
        count_i += has_i;
        for (std::size_t j = 0; j < 8; ++j) {
          if (j != i && has_i && std::count(s.begin(), s.end(), j) > 0) both[j] += 1;
        }
      }
      double row_max = 0;
      for (std::size_t j = 0; j < 8; ++j) {
        const double v = count_i == 0 ? 0 : both[j] / count_i;
        row_max = std::max(row_max, v);
        all_sum += v;
      }
      row_max_sum += row_max;
    }
    const double brute = row_max_sum / 8 - all_sum / 64;
    EXPECT_NEAR(top_avg_gap(coactivation_matrix(l)), brute, 1e-15);
    EXPECT_NEAR(top_avg_gap_streaming(l), brute, 1e-12);
  }
}

TEST(TopAvgGap, StreamingMatchesDenseOnLargerLayers) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto l = random_layer(300, 200, 0.05, rng);
    EXPECT_NEAR(top_avg_gap_streaming(l), top_avg_gap(coactivation_matrix(l)), 1e-12);
  }
}

TEST(Coactivation, DenseMatrixIsCapped) {
  LayerActivations l;
  l.d_ff = kMaxDenseCoactivation + 1;
  l.tokens = {{0}};
  EXPECT_THROW(coactivation_matrix(l), std::length_error);
  EXPECT_EQ(top_avg_gap_streaming(l), 0.0);
}

TEST(TopPairs, RankedByFrequency) {
  const auto m = coactivation_matrix(layer_of(3, {{0, 1}, {0}, {1, 2}}));
  const auto pairs = top_coactivated_pairs(m, 2);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].first, 2u);
  EXPECT_EQ(pairs[0].second, 1u);
  EXPECT_EQ(pairs[0].frequency, 1.0);
  EXPECT_EQ(pairs[1].frequency, 0.5);
}

TEST(HotCdf, UniformFrequencies) {
  const auto l = layer_of(8, Sets(3, {0, 1, 2, 3, 4, 5, 6, 7}));
  const double grid[] = {0.25, 1.0};
  EXPECT_EQ(hot_cdf(l, grid), (std::vector<double>{0.25, 1.0}));
}

TEST(HotCdf, SingleHotNeuron) {
  const auto l = layer_of(5, {{3}, {3}, {}, {3}});
  const double grid[] = {1.0 / 5};
  EXPECT_EQ(hot_cdf(l, grid), std::vector<double>{1.0});
}

TEST(HotCdf, HandExample) {
  // Frequencies (4, 2, 1, 1).
  const auto l = layer_of(4, {{0, 1, 2}, {0, 1, 3}, {0}, {0}});
  const double grid[] = {0.25, 0.5};
  EXPECT_EQ(hot_cdf(l, grid), (std::vector<double>{0.5, 0.75}));
}

TEST(HotCdf, RejectsSilentTrace) {
  const auto l = layer_of(4, {{}, {}});
  const double grid[] = {0.5};
  EXPECT_THROW(hot_cdf(l, grid), std::invalid_argument);
}

TEST(HotCdfProperty, ConcaveAndEndsAtOne) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d_ff = 4 + rng.index(30);
    LayerActivations l = random_layer(d_ff, 20, 0.3, rng);
    l.tokens.push_back({0});
    std::vector<double> grid;
    for (std::size_t k = 0; k <= d_ff; ++k) grid.push_back(double(k) / double(d_ff));
    const auto cdf = hot_cdf(l, grid);
    EXPECT_EQ(cdf.back(), 1.0);
    for (std::size_t k = 2; k < cdf.size(); ++k) {
      EXPECT_LE(cdf[k] - cdf[k - 1], cdf[k - 1] - cdf[k - 2] + 1e-12);
    }
  }
}

TEST(IoSimulate, NoCacheFetchesEveryActivation) {
  const auto l = layer_of(4, {{0, 1}, {1}, {0, 2, 3}, {}});
  IoSimConfig cfg;
  cfg.window = 0;
  cfg.bytes_per_neuron = 10;
  const auto r = io_simulate(l, cfg);
  EXPECT_EQ(r.total_bytes, 60u);
  EXPECT_EQ(r.baseline_bytes, 160u);
  EXPECT_DOUBLE_EQ(r.reduction, 1.0 - l.activation_ratio());
}

TEST(IoSimulate, PerfectReuse) {
  const auto l = layer_of(10, Sets(8, {2, 5, 7}));
  IoSimConfig cfg;
  cfg.window = 1;
  cfg.bytes_per_neuron = 1;
  const auto r = io_simulate(l, cfg);
  EXPECT_EQ(r.total_bytes, 3u);
  EXPECT_DOUBLE_EQ(r.reduction, 1.0 - 3.0 / 80.0);
}

TEST(IoSimulate, HandSimulation) {
  // k = 2, bytes = 1:
  //   t0 {0,1}   cache {}        fetch 2
  //   t1 {1,2}   cache {0,1}     fetch 1
  //   t2 {3}     cache {0,1,2}   fetch 1
  //   t3 {0,3}   cache {1,2,3}   fetch 1
  //   t4 {0,1,2} cache {0,3}     fetch 2
  const auto l = layer_of(4, {{0, 1}, {1, 2}, {3}, {0, 3}, {0, 1, 2}});
  IoSimConfig cfg;
  cfg.window = 2;
  cfg.bytes_per_neuron = 1;
  const auto r = io_simulate(l, cfg);
  EXPECT_EQ(r.fetched_neurons, 7u);
  EXPECT_EQ(r.total_bytes, 7u);
  EXPECT_EQ(r.baseline_bytes, 20u);
  EXPECT_EQ(r.active_neurons, 10u);
  EXPECT_DOUBLE_EQ(r.reduction, 1.0 - 7.0 / 20.0);
}

TEST(IoSimulate, DocumentStartsClearTheCache) {
  const auto l = layer_of(4, Sets(4, {1}));
  IoSimConfig cfg;
  cfg.window = 1;
  cfg.bytes_per_neuron = 1;
  const std::size_t starts[] = {0, 2};
  EXPECT_EQ(io_simulate(l, cfg).total_bytes, 1u);
  EXPECT_EQ(io_simulate(l, cfg, starts).total_bytes, 2u);
}

TEST(IoSimulateProperty, LargerWindowsNeverFetchMore) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto l = random_layer(16, 30, 0.3, rng);
    IoSimConfig cfg;
    cfg.bytes_per_neuron = 3;
    std::uint64_t prev = UINT64_MAX;
    for (std::size_t k = 0; k < 8; ++k) {
      cfg.window = k;
      const auto r = io_simulate(l, cfg);
      EXPECT_LE(r.total_bytes, prev);
      EXPECT_GE(r.reduction, 1.0 - l.activation_ratio() - 1e-12);
      prev = r.total_bytes;
    }
  }
}

TEST(IoSimulateProperty, FetchesFollowReuseRatio) {
  // With |A_i| = c for every token, fetched neurons over eligible tokens
  // equal c * eligible * (1 - reuse_ratio).
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d_ff = 16, c = 5, tokens = 40;
    LayerActivations l;
    l.d_ff = d_ff;
    for (std::size_t t = 0; t < tokens; ++t) {
      std::vector<std::uint32_t> all(d_ff);
      for (std::uint32_t i = 0; i < d_ff; ++i) all[i] = i;
      std::shuffle(all.begin(), all.end(), rng.engine());
      all.resize(c);
      std::sort(all.begin(), all.end());
      l.tokens.push_back(all);
    }
    for (std::size_t k = 1; k <= 4; ++k) {
      IoSimConfig cfg;
      cfg.window = k;
      cfg.bytes_per_neuron = 1;
      const auto whole = io_simulate(l, cfg);
      // token 0 fetches its whole set; every later token is averaged
      const double predicted = double(c) * double(tokens - 1) * (1.0 - reuse_ratio(l, k));
      EXPECT_NEAR(double(whole.fetched_neurons - c), predicted, 1e-9);
    }
  }
}

TEST(NeuronParameterBytes, CountsMatricesAsF32) {
  EXPECT_EQ(neuron_parameter_bytes(32, false), 2u * 32 * 4);
  EXPECT_EQ(neuron_parameter_bytes(32, true), 3u * 32 * 4);
}

TEST(AnalyzeAffinity, SummarisesEveryLayer) {
  Rng rng(7);
  ActivationSetTrace trace;
  trace.layers = {random_layer(8, 12, 0.4, rng), random_layer(8, 12, 0.3, rng)};
  const std::size_t windows[] = {1, 2, 20};
  const double grid[] = {0.5, 1.0};
  const auto r = analyze_affinity(trace, windows, grid);
  EXPECT_EQ(r.windows, (std::vector<std::size_t>{1, 2}));
  ASSERT_EQ(r.layers.size(), 2u);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(r.layers[l].reuse[1], reuse_ratio(trace.layers[l], 2));
    EXPECT_EQ(r.layers[l].gap, top_avg_gap(coactivation_matrix(trace.layers[l])));
    EXPECT_EQ(r.layers[l].cdf.back(), 1.0);
  }
  EXPECT_NEAR(r.reuse[0], (r.layers[0].reuse[0] + r.layers[1].reuse[0]) / 2, 1e-15);
}

TEST(ActivationSets, ValidateRejectsBadIndices) {
  EXPECT_THROW(layer_of(4, {{4}}).validate(), std::out_of_range);
  EXPECT_THROW(layer_of(4, {{2, 1}}).validate(), std::invalid_argument);
  ActivationSetTrace trace;
  trace.layers = {layer_of(4, {{0}}), layer_of(4, {{0}, {1}})};
  EXPECT_THROW(trace.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace sparsekit
