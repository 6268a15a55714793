// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/ffn.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "sparsekit/errors.hpp"
#include "test_util.hpp"

namespace sparsekit {
namespace {

using testing::random_vector;

TEST(Activation, Relu2Examples) {
  EXPECT_EQ(activate(ActivationKind::kRelu2, -3.0), 0.0);
  EXPECT_EQ(activate(ActivationKind::kRelu2, 2.0), 4.0);
}

TEST(Activation, SiluClosedForm) {
  EXPECT_NEAR(activate(ActivationKind::kSilu, 1.0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(activate(ActivationKind::kSilu, 1.0), 0.731058, 1e-6);
}

TEST(Activation, GeluUsesErf) {
  // Phi(1) = 0.841344746068543; the tanh form gives 0.841191990.
  EXPECT_NEAR(activate(ActivationKind::kGelu, 1.0), 0.841344746068543, 1e-12);
}

TEST(Activation, GatedKindsReuseScalarForms) {
  EXPECT_EQ(activate(ActivationKind::kReglu, -1.5), 0.0);
  EXPECT_EQ(activate(ActivationKind::kSwiglu, 0.7), activate(ActivationKind::kSilu, 0.7));
}

TEST(Activation, ReluSubgradientAtZeroIsZero) {
  EXPECT_EQ(activate_derivative(ActivationKind::kRelu, 0.0), 0.0);
  EXPECT_EQ(activate_derivative(ActivationKind::kRelu2, 3.0), 6.0);
}

TEST(ActivationKindNames, RoundTrip) {
  for (const auto kind : kAllActivationKinds) {
    EXPECT_EQ(parse_activation_kind(to_string(kind)), kind);
  }
  EXPECT_FALSE(parse_activation_kind("tanh"));
}

FfnWeights<double> swiglu_identity() {
  FfnWeights<double> w;
  w.kind = ActivationKind::kSwiglu;
  w.w_in = Matrix<double>::identity(2);
  w.v_in = Matrix<double>::identity(2);
  w.w_out = Matrix<double>::identity(2);
  return w;
}

TEST(FfnForward, ZeroOutputMatrixGivesZero) {
  Rng rng(1);
  for (const auto kind : kAllActivationKinds) {
    auto w = random_ffn(kind, 4, 6, false, rng);
    w.w_out = Matrix<double>(4, 6);
    const auto x = random_vector(4, rng);
    EXPECT_EQ(ffn_forward<double>(w, x), std::vector<double>(4, 0.0));
  }
}

TEST(FfnForward, SwigluIdentityExample) {
  const std::vector<double> x = {1, -1};
  const auto y = ffn_forward<double>(swiglu_identity(), x);
  EXPECT_NEAR(y[0], 0.731058, 1e-6);
  EXPECT_NEAR(y[1], 0.268941, 1e-6);
}

TEST(FfnForward, ReluTwoLayerExample) {
  FfnWeights<double> w;
  w.kind = ActivationKind::kRelu;
  w.w_in = Matrix<double>::from_rows({{1}, {-1}});
  w.w_out = Matrix<double>::from_rows({{1, 1}});
  const std::vector<double> x = {2};
  EXPECT_EQ(ffn_forward<double>(w, x), std::vector<double>{2});
}

TEST(FfnForward, RejectsWrongInputLength) {
  const std::vector<double> x = {1, 2, 3};
  EXPECT_THROW(ffn_forward<double>(swiglu_identity(), x), ShapeError);
}

TEST(FfnWeights, ValidateEnforcesGateAndBiasRules) {
  auto gated = swiglu_identity();
  gated.v_in.reset();
  EXPECT_THROW(gated.validate(), ShapeError);

  auto biased = swiglu_identity();
  biased.b_in = std::vector<double>{0, 0};
  EXPECT_THROW(biased.validate(), ShapeError);

  Rng rng(2);
  auto relu = random_ffn(ActivationKind::kRelu, 3, 5, true, rng);
  EXPECT_NO_THROW(relu.validate());
  relu.v_in = Matrix<double>(5, 3);
  EXPECT_THROW(relu.validate(), ShapeError);
}

TEST(NeuronEval, NegativePreactivationIsSilent) {
  FfnWeights<double> w;
  w.kind = ActivationKind::kRelu;
  w.w_in = Matrix<double>::from_rows({{1}, {-1}});
  w.w_out = Matrix<double>::from_rows({{1, 1}});
  const std::vector<double> x = {2};
  const auto n = neuron_eval<double>(w, 1, x);
  EXPECT_EQ(n.activation, 0.0);
  EXPECT_EQ(n.output, std::vector<double>{0.0});
  EXPECT_EQ(n.magnitude, 0.0);
}

TEST(NeuronEval, ZeroGateKillsOutput) {
  auto w = swiglu_identity();
  (*w.v_in)(0, 0) = 0.0;
  const std::vector<double> x = {3, 1};
  const auto n = neuron_eval<double>(w, 0, x);
  EXPECT_GT(n.activation, 0.0);
  EXPECT_EQ(n.magnitude, 0.0);
}

TEST(NeuronEval, RejectsOutOfRangeIndex) {
  const std::vector<double> x = {1, 1};
  EXPECT_THROW(neuron_eval<double>(swiglu_identity(), 2, x), std::out_of_range);
}

TEST(NeuronEval, MagnitudeIsNormOfOutput) {
  Rng rng(3);
  for (const auto kind : kAllActivationKinds) {
    const auto w = random_ffn(kind, 8, 16, true, rng);
    const auto x = random_vector(8, rng);
    for (const auto& n : all_neurons<double>(w, x)) {
      EXPECT_EQ(n.magnitude, l2_norm<double>(n.output));
    }
    const auto mags = neuron_magnitudes<double>(w, x);
    const auto all = all_neurons<double>(w, x);
    for (std::size_t i = 0; i < mags.size(); ++i) EXPECT_EQ(mags[i], all[i].magnitude);
  }
}

template <typename T>
double decomposition_error(const FfnWeights<double>& w64, std::span<const double> x64) {
  const FfnWeights<T> w = w64.cast<T>();
  const std::vector<T> x(x64.begin(), x64.end());
  const auto neurons = all_neurons<T>(w, x);
  std::vector<double> sum(w.d_model(), 0.0);
  for (const auto& n : neurons) {
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += double(n.output[j]);
  }
  if (w.b_out) {
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += double((*w.b_out)[j]);
  }
  const auto y = ffn_forward<T>(w, x);
  const std::vector<double> y64(y.begin(), y.end());
  return testing::distance(sum, y64) / std::max(testing::norm2(y64), 1e-30);
}

TEST(AllNeurons, SumReproducesForwardEveryKind) {
  Rng rng(4);
  for (const auto kind : kAllActivationKinds) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto w = random_ffn(kind, 8, 16, trial % 2 == 1, rng);
      const auto x = random_vector(8, rng);
      EXPECT_LE(decomposition_error<float>(w, x), 1e-6) << to_string(kind);
      EXPECT_LE(decomposition_error<double>(w, x), 1e-12) << to_string(kind);
    }
  }
}

TEST(AllNeurons, RegluOverManyInputs) {
  Rng rng(5);
  const auto w = random_ffn(ActivationKind::kReglu, 8, 16, false, rng);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto x = random_vector(8, rng);
    ASSERT_LE(decomposition_error<double>(w, x), 1e-12);
  }
}

TEST(AllNeurons, SingleNeuronEqualsForwardMinusBias) {
  Rng rng(6);
  const auto w = random_ffn(ActivationKind::kGelu, 5, 1, true, rng);
  const auto x = random_vector(5, rng);
  const auto y = ffn_forward<double>(w, x);
  const auto n = all_neurons<double>(w, x);
  ASSERT_EQ(n.size(), 1u);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(n[0].output[j], y[j] - (*w.b_out)[j], 1e-15);
}

TEST(AllNeurons, AllNegativePreactivationsLeaveBias) {
  FfnWeights<double> w;
  w.kind = ActivationKind::kRelu;
  w.w_in = Matrix<double>::from_rows({{1, 0}, {0, 1}, {1, 1}});
  w.w_out = Matrix<double>::from_rows({{1, 2, 3}, {4, 5, 6}});
  w.b_out = std::vector<double>{0.5, -0.5};
  const std::vector<double> x = {-1, -2};
  for (const auto& n : all_neurons<double>(w, x)) EXPECT_EQ(n.magnitude, 0.0);
  EXPECT_EQ(ffn_forward<double>(w, x), *w.b_out);
}

TEST(FfnProperty, ReluMagnitudeZeroIffSilentOrDeadColumn) {
  Rng rng(7);
  for (const auto kind : {ActivationKind::kRelu, ActivationKind::kRelu2}) {
    auto w = random_ffn(kind, 6, 24, false, rng);
    for (std::size_t r = 0; r < 6; ++r) w.w_out(r, 3) = 0.0;  // one dead column
    for (int trial = 0; trial < 200; ++trial) {
      const auto x = random_vector(6, rng);
      const auto all = all_neurons<double>(w, x);
      for (std::size_t i = 0; i < all.size(); ++i) {
        EXPECT_EQ(all[i].magnitude == 0.0, all[i].activation == 0.0 || i == 3);
      }
    }
  }
}

TEST(FfnProperty, SignSymmetryHalvesReluActivations) {
  Rng rng(8);
  for (const auto kind : {ActivationKind::kRelu, ActivationKind::kRelu2}) {
    std::size_t zeros = 0, total = 0;
    while (total < 100000) {
      const auto w = random_ffn(kind, 16, 64, false, rng);
      for (int t = 0; t < 20; ++t) {
        const auto x = random_vector(16, rng);
        for (const double a : ffn_hidden<double>(w, x).activation) zeros += a == 0.0;
        total += 64;
      }
    }
    EXPECT_NEAR(double(zeros) / double(total), 0.5, 0.02) << to_string(kind);
  }
}

TEST(FfnBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(9);
  for (const auto kind : kAllActivationKinds) {
    const auto w = random_ffn(kind, 4, 6, true, rng);
    const auto x = random_vector(4, rng);
    const std::vector<double> up(4, 0.0);
    const auto g = ffn_backward<double>(w, x, up);
    for (const double v : g.w_in.data()) EXPECT_EQ(v, 0.0);
    for (const double v : g.w_out.data()) EXPECT_EQ(v, 0.0);
    for (const double v : g.x) EXPECT_EQ(v, 0.0);
    if (g.v_in) {
      for (const double v : g.v_in->data()) EXPECT_EQ(v, 0.0);
    }
    if (g.b_in) {
      for (const double v : *g.b_in) EXPECT_EQ(v, 0.0);
    }
    if (g.b_out) {
      for (const double v : *g.b_out) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(FfnBackward, Relu2ScalarChainRule) {
  // y = w_out * relu(w_in x)^2 with w_in = w_out = 1, x = 2:
  // dy/dw_in = w_out * 2 relu(w_in x) * x = 8, dy/dw_out = 4, dy/dx = 4.
  FfnWeights<double> w;
  w.kind = ActivationKind::kRelu2;
  w.w_in = Matrix<double>::from_rows({{1}});
  w.w_out = Matrix<double>::from_rows({{1}});
  const std::vector<double> x = {2}, up = {1};
  const auto g = ffn_backward<double>(w, x, up);
  EXPECT_EQ(g.w_in(0, 0), 8.0);
  EXPECT_EQ(g.w_out(0, 0), 4.0);
  EXPECT_EQ(g.x[0], 4.0);
}

TEST(FfnBackward, MatchesFiniteDifferencesEveryKind) {
  Rng rng(10);
  for (const auto kind : kAllActivationKinds) {
    int checked = 0;
    while (checked < 10) {
      const auto w = random_ffn(kind, 8, 16, checked % 2 == 0, rng);
      const auto x = random_vector(8, rng);
      const auto up = random_vector(8, rng);
      const double err = testing::ffn_gradient_check(w, x, up);
      if (std::isnan(err)) continue;
      EXPECT_LE(err, 1e-4) << to_string(kind);
      ++checked;
    }
  }
}

TEST(ToyTraining, ZeroStepsReturnsInitialization) {
  ToyTrainConfig cfg;
  cfg.steps = 0;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.seed = 3;
  const auto a = train_toy_ffn(cfg);
  cfg.steps = 1;
  const auto b = train_toy_ffn(cfg);
  EXPECT_EQ(a.initial_loss, a.final_loss);
  EXPECT_NE(a.student, b.student);
  // Same initialization regardless of the step count.
  cfg.steps = 0;
  EXPECT_EQ(train_toy_ffn(cfg).student, a.student);
}

TEST(ToyTraining, DeterministicForSeed) {
  ToyTrainConfig cfg;
  cfg.kind = ActivationKind::kSwiglu;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.steps = 200;
  cfg.seed = 42;
  EXPECT_EQ(train_toy_ffn(cfg).student, train_toy_ffn(cfg).student);
}

TEST(ToyTraining, ReluReferenceRunHalvesLoss) {
  ToyTrainConfig cfg;  // relu vs relu teacher, 32 x 128, 5000 steps
  cfg.seed = 1;
  const auto r = train_toy_ffn(cfg);
  EXPECT_LT(r.final_loss, 0.5 * r.initial_loss);
}

TEST(ToyTraining, EveryKindLowersLoss) {
  for (const auto kind : kAllActivationKinds) {
    ToyTrainConfig cfg;
    cfg.kind = kind;
    cfg.d_model = 8;
    cfg.d_ff = 32;
    cfg.steps = 300;
    cfg.seed = 9;
    const auto r = train_toy_ffn(cfg);
    EXPECT_LT(r.final_loss, r.initial_loss) << to_string(kind);
  }
}

}  // namespace
}  // namespace sparsekit
