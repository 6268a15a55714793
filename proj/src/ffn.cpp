// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/ffn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace sparsekit {

namespace {

enum class Scalar { kRelu, kRelu2, kSilu, kGelu };

constexpr Scalar scalar_part(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kRelu:
    case ActivationKind::kReglu:
      return Scalar::kRelu;
    case ActivationKind::kRelu2:
      return Scalar::kRelu2;
    case ActivationKind::kSilu:
    case ActivationKind::kSwiglu:
      return Scalar::kSilu;
    case ActivationKind::kGelu:
      return Scalar::kGelu;
  }
  return Scalar::kRelu;
}

template <std::floating_point T>
T sigmoid(T z) {
  return T{1} / (T{1} + std::exp(-z));
}

template <std::floating_point T>
T normal_cdf(T z) {
  return T{0.5} * (T{1} + std::erf(z / std::numbers::sqrt2_v<T>));
}

void check_matrix(const char* name, std::size_t rows, std::size_t cols,
                  std::size_t want_rows, std::size_t want_cols) {
  if (rows != want_rows || cols != want_cols) {
    throw ShapeError(std::string(name) + " is " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", expected " + std::to_string(want_rows) +
                     "x" + std::to_string(want_cols));
  }
}

}  // namespace

std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kRelu2: return "relu2";
    case ActivationKind::kSilu: return "silu";
    case ActivationKind::kGelu: return "gelu";
    case ActivationKind::kReglu: return "reglu";
    case ActivationKind::kSwiglu: return "swiglu";
  }
  return "unknown";
}

std::optional<ActivationKind> parse_activation_kind(std::string_view name) {
  for (const ActivationKind kind : kAllActivationKinds) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

template <std::floating_point T>
T activate(ActivationKind kind, T z) {
  switch (scalar_part(kind)) {
    case Scalar::kRelu:
      return z > T{0} ? z : T{0};
    case Scalar::kRelu2: {
      const T r = z > T{0} ? z : T{0};
      return r * r;
    }
    case Scalar::kSilu:
      return z * sigmoid(z);
    case Scalar::kGelu:
      return z * normal_cdf(z);
  }
  return T{0};
}

template <std::floating_point T>
T activate_derivative(ActivationKind kind, T z) {
  switch (scalar_part(kind)) {
    case Scalar::kRelu:
      return z > T{0} ? T{1} : T{0};
    case Scalar::kRelu2:
      return z > T{0} ? T{2} * z : T{0};
    case Scalar::kSilu: {
      const T s = sigmoid(z);
      return s + z * s * (T{1} - s);
    }
    case Scalar::kGelu: {
      const T pdf = std::exp(T{-0.5} * z * z) /
                    std::sqrt(T{2} * std::numbers::pi_v<T>);
      return normal_cdf(z) + z * pdf;
    }
  }
  return T{0};
}

template <std::floating_point T>
void FfnWeights<T>::validate() const {
  const std::size_t dm = d_model();
  const std::size_t df = d_ff();
  if (dm == 0 || df == 0) throw ShapeError("FFN dimensions must be positive");
  check_matrix("w_out", w_out.rows(), w_out.cols(), dm, df);
  if (is_gated(kind)) {
    if (!v_in) throw ShapeError(std::string(to_string(kind)) + " requires a gate matrix");
    check_matrix("v_in", v_in->rows(), v_in->cols(), df, dm);
    if (b_in) throw ShapeError("gated FFN kinds carry no input bias");
  } else if (v_in) {
    throw ShapeError(std::string(to_string(kind)) + " does not take a gate matrix");
  }
  if (b_in && b_in->size() != df) throw ShapeError("b_in length must equal d_ff");
  if (b_out && b_out->size() != dm) throw ShapeError("b_out length must equal d_model");

  const bool finite = all_finite(w_in.data()) && all_finite(w_out.data()) &&
                      (!v_in || all_finite(v_in->data())) &&
                      (!b_in || all_finite<T>(*b_in)) && (!b_out || all_finite<T>(*b_out));
  if (!finite) throw std::invalid_argument("FFN weights contain non-finite values");
}

template <std::floating_point T>
HiddenState<T> ffn_hidden(const FfnWeights<T>& w, std::span<const T> x) {
  if (x.size() != w.d_model()) {
    throw ShapeError("FFN input has length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(w.d_model()));
  }
  HiddenState<T> h;
  h.pre = matvec(w.w_in, x);
  if (w.b_in) {
    for (std::size_t i = 0; i < h.pre.size(); ++i) h.pre[i] += (*w.b_in)[i];
  }
  h.activation.resize(h.pre.size());
  for (std::size_t i = 0; i < h.pre.size(); ++i) h.activation[i] = activate(w.kind, h.pre[i]);
  if (w.v_in) {
    h.gate = matvec(*w.v_in, x);
    h.hidden.resize(h.pre.size());
    for (std::size_t i = 0; i < h.pre.size(); ++i) h.hidden[i] = h.activation[i] * h.gate[i];
  } else {
    h.hidden = h.activation;
  }
  return h;
}

template <std::floating_point T>
Vector<T> ffn_forward(const FfnWeights<T>& w, std::span<const T> x) {
  const HiddenState<T> h = ffn_hidden(w, x);
  Vector<T> out = matvec(w.w_out, std::span<const T>(h.hidden));
  if (w.b_out) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += (*w.b_out)[j];
  }
  return out;
}

template <std::floating_point T>
void neuron_output(const FfnWeights<T>& w, std::size_t i, T hidden, std::span<T> out) {
  const std::size_t dm = w.d_model();
  for (std::size_t j = 0; j < dm; ++j) out[j] = w.w_out(j, i) * hidden;
}

template <std::floating_point T>
NeuronEval<T> neuron_eval(const FfnWeights<T>& w, std::size_t i, std::span<const T> x) {
  if (i >= w.d_ff()) {
    throw std::out_of_range("neuron index " + std::to_string(i) + " out of range for d_ff " +
                            std::to_string(w.d_ff()));
  }
  if (x.size() != w.d_model()) throw ShapeError("neuron_eval: input length mismatch");
  T pre = dot(w.w_in.row(i), x);
  if (w.b_in) pre += (*w.b_in)[i];
  NeuronEval<T> ev;
  ev.activation = activate(w.kind, pre);
  T hidden = ev.activation;
  if (w.v_in) hidden = ev.activation * dot(w.v_in->row(i), x);
  ev.output.resize(w.d_model());
  neuron_output(w, i, hidden, std::span<T>(ev.output));
  ev.magnitude = l2_norm(std::span<const T>(ev.output));
  return ev;
}

template <std::floating_point T>
std::vector<NeuronEval<T>> all_neurons(const FfnWeights<T>& w, std::span<const T> x) {
  const HiddenState<T> h = ffn_hidden(w, x);
  std::vector<NeuronEval<T>> out(w.d_ff());
  for (std::size_t i = 0; i < w.d_ff(); ++i) {
    out[i].activation = h.activation[i];
    out[i].output.resize(w.d_model());
    neuron_output(w, i, h.hidden[i], std::span<T>(out[i].output));
    out[i].magnitude = l2_norm(std::span<const T>(out[i].output));
  }
  return out;
}

template <std::floating_point T>
Vector<T> neuron_magnitudes(const FfnWeights<T>& w, std::span<const T> x) {
  const HiddenState<T> h = ffn_hidden(w, x);
  Vector<T> mags(w.d_ff());
  Vector<T> scratch(w.d_model());
  for (std::size_t i = 0; i < w.d_ff(); ++i) {
    neuron_output(w, i, h.hidden[i], std::span<T>(scratch));
    mags[i] = l2_norm(std::span<const T>(scratch));
  }
  return mags;
}

template <std::floating_point T>
FfnGrads<T> ffn_backward(const FfnWeights<T>& w, std::span<const T> x,
                         std::span<const T> upstream) {
  if (upstream.size() != w.d_model()) {
    throw ShapeError("ffn_backward: upstream length must equal d_model");
  }
  const HiddenState<T> h = ffn_hidden(w, x);
  const std::size_t dm = w.d_model();
  const std::size_t df = w.d_ff();

  FfnGrads<T> g;
  g.w_out = Matrix<T>(dm, df);
  for (std::size_t j = 0; j < dm; ++j) {
    for (std::size_t i = 0; i < df; ++i) g.w_out(j, i) = upstream[j] * h.hidden[i];
  }
  if (w.b_out) g.b_out = Vector<T>(upstream.begin(), upstream.end());

  const Vector<T> d_hidden = matvec_transposed(w.w_out, upstream);
  Vector<T> d_pre(df);
  Vector<T> d_gate;
  if (w.v_in) {
    d_gate.resize(df);
    for (std::size_t i = 0; i < df; ++i) {
      d_pre[i] = d_hidden[i] * h.gate[i] * activate_derivative(w.kind, h.pre[i]);
      d_gate[i] = d_hidden[i] * h.activation[i];
    }
  } else {
    for (std::size_t i = 0; i < df; ++i) {
      d_pre[i] = d_hidden[i] * activate_derivative(w.kind, h.pre[i]);
    }
  }

  g.w_in = Matrix<T>(df, dm);
  for (std::size_t i = 0; i < df; ++i) {
    for (std::size_t k = 0; k < dm; ++k) g.w_in(i, k) = d_pre[i] * x[k];
  }
  if (w.b_in) g.b_in = d_pre;
  g.x = matvec_transposed(w.w_in, std::span<const T>(d_pre));
  if (w.v_in) {
    g.v_in = Matrix<T>(df, dm);
    for (std::size_t i = 0; i < df; ++i) {
      for (std::size_t k = 0; k < dm; ++k) (*g.v_in)(i, k) = d_gate[i] * x[k];
    }
    const Vector<T> dx_gate = matvec_transposed(*w.v_in, std::span<const T>(d_gate));
    for (std::size_t k = 0; k < dm; ++k) g.x[k] += dx_gate[k];
  }
  return g;
}

FfnWeights<double> random_ffn(ActivationKind kind, std::size_t d_model, std::size_t d_ff,
                              bool with_bias, Rng& rng) {
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d_model));
  const double out_std = 1.0 / std::sqrt(static_cast<double>(d_ff));
  FfnWeights<double> w;
  w.kind = kind;
  w.w_in = Matrix<double>(d_ff, d_model);
  for (double& v : w.w_in.data()) v = rng.normal(in_std);
  if (is_gated(kind)) {
    w.v_in = Matrix<double>(d_ff, d_model);
    for (double& v : w.v_in->data()) v = rng.normal(in_std);
  }
  w.w_out = Matrix<double>(d_model, d_ff);
  for (double& v : w.w_out.data()) v = rng.normal(out_std);
  if (with_bias) {
    if (!is_gated(kind)) {
      w.b_in = Vector<double>(d_ff);
      for (double& v : *w.b_in) v = rng.normal(0.1);
    }
    w.b_out = Vector<double>(d_model);
    for (double& v : *w.b_out) v = rng.normal(0.1);
  }
  return w;
}

#define SPARSEKIT_INSTANTIATE(T)                                                        \
  template T activate<T>(ActivationKind, T);                                            \
  template T activate_derivative<T>(ActivationKind, T);                                 \
  template struct FfnWeights<T>;                                                        \
  template HiddenState<T> ffn_hidden<T>(const FfnWeights<T>&, std::span<const T>);      \
  template Vector<T> ffn_forward<T>(const FfnWeights<T>&, std::span<const T>);          \
  template void neuron_output<T>(const FfnWeights<T>&, std::size_t, T, std::span<T>);   \
  template NeuronEval<T> neuron_eval<T>(const FfnWeights<T>&, std::size_t,              \
                                        std::span<const T>);                            \
  template std::vector<NeuronEval<T>> all_neurons<T>(const FfnWeights<T>&,              \
                                                     std::span<const T>);               \
  template Vector<T> neuron_magnitudes<T>(const FfnWeights<T>&, std::span<const T>);    \
  template FfnGrads<T> ffn_backward<T>(const FfnWeights<T>&, std::span<const T>,        \
                                       std::span<const T>);

SPARSEKIT_INSTANTIATE(float)
SPARSEKIT_INSTANTIATE(double)
#undef SPARSEKIT_INSTANTIATE

}  // namespace sparsekit
