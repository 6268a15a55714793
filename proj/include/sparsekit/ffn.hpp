// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sparsekit/rng.hpp"
#include "sparsekit/tensor.hpp"

namespace sparsekit {

// FFN variant. Values match the FFW1 kind byte.
enum class ActivationKind : std::uint8_t {
  kRelu = 0,
  kRelu2 = 1,
  kSilu = 2,
  kGelu = 3,
  kReglu = 4,
  kSwiglu = 5,
};

inline constexpr ActivationKind kAllActivationKinds[] = {
    ActivationKind::kRelu,  ActivationKind::kRelu2, ActivationKind::kSilu,
    ActivationKind::kGelu,  ActivationKind::kReglu, ActivationKind::kSwiglu};

constexpr bool is_gated(ActivationKind kind) {
  return kind == ActivationKind::kReglu || kind == ActivationKind::kSwiglu;
}

// Number of weight matrices (2 for two-layer kinds, 3 for gated kinds).
constexpr std::size_t matrix_count(ActivationKind kind) { return is_gated(kind) ? 3 : 2; }

std::string_view to_string(ActivationKind kind);
std::optional<ActivationKind> parse_activation_kind(std::string_view name);

// Scalar nonlinearity of `kind`: relu, relu^2, z*sigmoid(z), z*Phi(z) (erf
// form). Gated kinds use relu (reglu) and silu (swiglu).
template <std::floating_point T>
T activate(ActivationKind kind, T z);

// d activate / dz; relu's subgradient at 0 is 0.
template <std::floating_point T>
T activate_derivative(ActivationKind kind, T z);

// Parameters of one FFN layer.
//
//   gated:     FFN(x) = W_out [act(W_in x) * (V_in x)]
//   two-layer: FFN(x) = W_out act(W_in x + b_in) + b_out
//
// Gated kinds never carry b_in. b_out is allowed for every kind.
template <std::floating_point T>
struct FfnWeights {
  ActivationKind kind = ActivationKind::kRelu;
  Matrix<T> w_in;                  // d_ff x d_model
  std::optional<Matrix<T>> v_in;   // d_ff x d_model, gated kinds only
  Matrix<T> w_out;                 // d_model x d_ff
  std::optional<Vector<T>> b_in;   // d_ff, two-layer kinds only
  std::optional<Vector<T>> b_out;  // d_model

  std::size_t d_model() const { return w_in.cols(); }
  std::size_t d_ff() const { return w_in.rows(); }

  // Throws ShapeError on inconsistent shapes or a gate/bias that the kind
  // forbids, std::invalid_argument on non-finite entries.
  void validate() const;

  template <std::floating_point U>
  FfnWeights<U> cast() const {
    FfnWeights<U> out;
    out.kind = kind;
    out.w_in = w_in.template cast<U>();
    if (v_in) out.v_in = v_in->template cast<U>();
    out.w_out = w_out.template cast<U>();
    if (b_in) out.b_in = Vector<U>(b_in->begin(), b_in->end());
    if (b_out) out.b_out = Vector<U>(b_out->begin(), b_out->end());
    return out;
  }

  bool operator==(const FfnWeights&) const = default;
};

// Intermediate values of a forward pass.
template <std::floating_point T>
struct HiddenState {
  Vector<T> pre;         // W_in x (+ b_in)
  Vector<T> gate;        // V_in x; empty for two-layer kinds
  Vector<T> activation;  // a_i = act(pre_i)
  Vector<T> hidden;      // a_i * gate_i (gated) or a_i; n_i = hidden_i * W_out[:, i]
};

template <std::floating_point T>
struct NeuronEval {
  T activation{};
  Vector<T> output;  // n_i(x), length d_model
  T magnitude{};     // l2_norm(output)
};

template <std::floating_point T>
HiddenState<T> ffn_hidden(const FfnWeights<T>& w, std::span<const T> x);

template <std::floating_point T>
Vector<T> ffn_forward(const FfnWeights<T>& w, std::span<const T> x);

// Output vector of neuron i given its hidden coefficient; shared by every
// route that needs n_i so they agree bit for bit.
template <std::floating_point T>
void neuron_output(const FfnWeights<T>& w, std::size_t i, T hidden, std::span<T> out);

template <std::floating_point T>
NeuronEval<T> neuron_eval(const FfnWeights<T>& w, std::size_t i, std::span<const T> x);

// One NeuronEval per neuron, in index order. Summing the outputs in index
// order from zero reproduces ffn_forward minus b_out exactly.
template <std::floating_point T>
std::vector<NeuronEval<T>> all_neurons(const FfnWeights<T>& w, std::span<const T> x);

// Magnitudes only, same arithmetic as neuron_eval.
template <std::floating_point T>
Vector<T> neuron_magnitudes(const FfnWeights<T>& w, std::span<const T> x);

// Gradients of upstream . FFN(x) with respect to every parameter and x.
// Optional fields mirror the weights.
template <std::floating_point T>
struct FfnGrads {
  Matrix<T> w_in;
  std::optional<Matrix<T>> v_in;
  Matrix<T> w_out;
  std::optional<Vector<T>> b_in;
  std::optional<Vector<T>> b_out;
  Vector<T> x;
};

template <std::floating_point T>
FfnGrads<T> ffn_backward(const FfnWeights<T>& w, std::span<const T> x,
                         std::span<const T> upstream);

// Gaussian initialization: W_in, V_in ~ N(0, 1/d_model), W_out ~ N(0, 1/d_ff),
// biases ~ N(0, 0.1^2) when requested (two-layer kinds only for b_in).
FfnWeights<double> random_ffn(ActivationKind kind, std::size_t d_model, std::size_t d_ff,
                              bool with_bias, Rng& rng);

// Teacher-student distillation used as the desk-scale source of trained
// weights. The student minimizes 0.5 * |student(x) - teacher(x)|^2 averaged
// over mini-batches of x ~ N(0, I) with Adam.
struct ToyTrainConfig {
  ActivationKind kind = ActivationKind::kRelu;
  std::size_t d_model = 32;
  std::size_t d_ff = 128;
  std::optional<ActivationKind> teacher_kind;  // defaults to kind
  std::optional<std::size_t> teacher_d_ff;     // defaults to d_ff
  bool with_bias = false;
  std::size_t steps = 5000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::size_t eval_samples = 512;
  std::uint64_t seed = 0;
};

struct ToyTrainResult {
  FfnWeights<double> student;
  FfnWeights<double> teacher;
  double initial_loss = 0.0;  // on a fixed held-out batch
  double final_loss = 0.0;
};

// Throws DivergenceError if a step produces a non-finite loss.
ToyTrainResult train_toy_ffn(const ToyTrainConfig& config);

}  // namespace sparsekit
