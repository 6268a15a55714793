// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sparsekit/ffn.hpp"
#include "sparsekit/sparsity.hpp"

namespace sparsekit {

enum class WeightGenerator { kRandom, kToy };

std::string_view to_string(WeightGenerator g);
std::optional<WeightGenerator> parse_weight_generator(std::string_view name);

struct SyntheticSpec {
  ActivationKind kind = ActivationKind::kSwiglu;
  std::size_t layers = 2;
  std::size_t d_model = 32;
  std::size_t d_ff = 128;
  std::size_t tokens = 4096;
  // x_t = rho x_{t-1} + sqrt(1 - rho^2) noise; 0 gives independent tokens.
  double rho = 0.0;
  WeightGenerator generator = WeightGenerator::kRandom;
  std::size_t toy_steps = 5000;
  bool with_bias = false;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument.
  void validate() const;
};

// Stacked layers with the FFN inputs that drive them. Weights are stored
// rounded to f32; inputs of layer l+1 are x + FFN_l(x) evaluated in f32.
struct SyntheticModel {
  SyntheticSpec spec;
  std::vector<FfnWeights<float>> layers;
  std::size_t tokens = 0;
  std::vector<float> inputs;  // tokens * layers * d_model, token-major

  std::size_t d_model() const { return layers.front().d_model(); }
  std::size_t d_ff() const { return layers.front().d_ff(); }
  std::span<const float> input_of(std::size_t token, std::size_t layer) const;

  // f64 copies for analysis.
  std::vector<FfnWeights<double>> layers_f64() const;
  std::vector<double> inputs_f64() const;
};

SyntheticModel gen_synthetic(const SyntheticSpec& spec);

// The token stream fed to the first layer: tokens * d_model values.
std::vector<float> input_stream(const SyntheticSpec& spec);

// Propagates the first-layer stream through the stack.
std::vector<float> stack_inputs(std::span<const FfnWeights<float>> layers,
                                std::span<const float> stream, std::size_t tokens);

// Model directory: manifest.json, layer_NNN.ffw1, inputs.nat1.
inline constexpr std::string_view kManifestName = "manifest.json";
inline constexpr std::string_view kInputsName = "inputs.nat1";
std::string layer_file_name(std::size_t layer);

// Returns the written file names, relative to `dir`.
std::vector<std::string> write_model(const SyntheticModel& model,
                                     const std::filesystem::path& dir);
// Throws FormatError.
SyntheticModel read_model(const std::filesystem::path& dir);

// f32 magnitudes of every neuron on the recorded inputs.
std::vector<float> trace_magnitudes(const SyntheticModel& model);

// f64 magnitudes recomputed from the stored weights and inputs.
MagnitudeTrace magnitude_trace(const SyntheticModel& model);

}  // namespace sparsekit
