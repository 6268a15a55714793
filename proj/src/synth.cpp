// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/synth.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"
#include "sparsekit/formats.hpp"
#include "sparsekit/rng.hpp"

namespace sparsekit {

namespace {

constexpr std::uint64_t kStreamInputs = 1;
constexpr std::uint64_t kStreamLayerBase = 16;

FormatError manifest_error(const std::string& what) {
  return FormatError(FormatErrorKind::kSchema, "manifest: " + what);
}

}  // namespace

std::string_view to_string(WeightGenerator g) {
  return g == WeightGenerator::kToy ? "toy" : "random";
}

std::optional<WeightGenerator> parse_weight_generator(std::string_view name) {
  if (name == "random") return WeightGenerator::kRandom;
  if (name == "toy") return WeightGenerator::kToy;
  return std::nullopt;
}

void SyntheticSpec::validate() const {
  if (layers == 0 || d_model == 0 || d_ff == 0 || tokens == 0) {
    throw std::invalid_argument("synthetic spec needs positive layers, dims and tokens");
  }
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in [0, 1]");
}

std::span<const float> SyntheticModel::input_of(std::size_t token, std::size_t layer) const {
  const std::size_t d = d_model();
  return std::span<const float>(inputs).subspan((token * layers.size() + layer) * d, d);
}

std::vector<FfnWeights<double>> SyntheticModel::layers_f64() const {
  std::vector<FfnWeights<double>> out;
  out.reserve(layers.size());
  for (const auto& w : layers) out.push_back(w.cast<double>());
  return out;
}

std::vector<double> SyntheticModel::inputs_f64() const {
  return std::vector<double>(inputs.begin(), inputs.end());
}

std::vector<float> input_stream(const SyntheticSpec& spec) {
  Rng rng(Rng::derive(spec.seed, kStreamInputs));
  const std::size_t d = spec.d_model;
  const double carry = std::sqrt(1.0 - spec.rho * spec.rho);
  std::vector<double> x(d);
  std::vector<float> out(spec.tokens * d);
  for (std::size_t t = 0; t < spec.tokens; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      const double noise = rng.normal();
      x[j] = t == 0 ? noise : spec.rho * x[j] + carry * noise;
      out[t * d + j] = static_cast<float>(x[j]);
    }
  }
  return out;
}

std::vector<float> stack_inputs(std::span<const FfnWeights<float>> layers,
                                std::span<const float> stream, std::size_t tokens) {
  const std::size_t n_layers = layers.size();
  const std::size_t d = layers.front().d_model();
  if (stream.size() != tokens * d) throw ShapeError("input stream length mismatch");
  std::vector<float> out(tokens * n_layers * d);
  std::vector<float> x(d);
  for (std::size_t t = 0; t < tokens; ++t) {
    std::copy_n(stream.begin() + static_cast<std::ptrdiff_t>(t * d), d, x.begin());
    for (std::size_t l = 0; l < n_layers; ++l) {
      std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>((t * n_layers + l) * d));
      if (l + 1 == n_layers) break;
      const Vector<float> y = ffn_forward<float>(layers[l], x);
      for (std::size_t j = 0; j < d; ++j) x[j] += y[j];
    }
  }
  return out;
}

SyntheticModel gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticModel model;
  model.spec = spec;
  model.tokens = spec.tokens;
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const std::uint64_t seed = Rng::derive(spec.seed, kStreamLayerBase + l);
    if (spec.generator == WeightGenerator::kToy) {
      ToyTrainConfig cfg;
      cfg.kind = spec.kind;
      cfg.d_model = spec.d_model;
      cfg.d_ff = spec.d_ff;
      cfg.with_bias = spec.with_bias;
      cfg.steps = spec.toy_steps;
      cfg.seed = seed;
      model.layers.push_back(train_toy_ffn(cfg).student.cast<float>());
    } else {
      Rng rng(seed);
      model.layers.push_back(
          random_ffn(spec.kind, spec.d_model, spec.d_ff, spec.with_bias, rng).cast<float>());
    }
  }
  model.inputs = stack_inputs(model.layers, input_stream(spec), spec.tokens);
  return model;
}

std::string layer_file_name(std::size_t layer) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "layer_%03zu.ffw1", layer);
  return buf;
}

std::vector<std::string> write_model(const SyntheticModel& model,
                                     const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError(FormatErrorKind::kIo, "cannot create " + dir.string());

  std::vector<std::string> names;
  nlohmann::json layer_names = nlohmann::json::array();
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const std::string name = layer_file_name(l);
    write_bytes(dir / name, encode_ffw1(to_ffw1(model.layers[l])));
    layer_names.push_back(name);
    names.push_back(name);
  }

  Nat1File inputs;
  inputs.kind = Nat1Kind::kInputs;
  inputs.layers = static_cast<std::uint32_t>(model.layers.size());
  inputs.d = static_cast<std::uint32_t>(model.d_model());
  inputs.tokens = model.tokens;
  inputs.values = model.inputs;
  write_bytes(dir / kInputsName, encode_nat1(inputs));
  names.emplace_back(kInputsName);

  const SyntheticSpec& s = model.spec;
  nlohmann::json manifest = {
      {"schema_version", 1},
      {"kind", std::string(to_string(s.kind))},
      {"layers", model.layers.size()},
      {"d_model", model.d_model()},
      {"d_ff", model.d_ff()},
      {"tokens", model.tokens},
      {"rho", s.rho},
      {"generator", std::string(to_string(s.generator))},
      {"toy_steps", s.toy_steps},
      {"with_bias", s.with_bias},
      {"seed", s.seed},
      {"layer_files", layer_names},
      {"inputs_file", kInputsName},
  };
  const std::string text = manifest.dump(2) + "\n";
  write_bytes(dir / kManifestName,
              std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  names.emplace(names.begin(), kManifestName);
  return names;
}

SyntheticModel read_model(const std::filesystem::path& dir) {
  const auto bytes = read_bytes(dir / kManifestName);
  nlohmann::json m = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (m.is_discarded() || !m.is_object()) throw manifest_error("not a JSON object");

  SyntheticModel model;
  try {
    if (m.at("schema_version").get<int>() != 1) throw manifest_error("unsupported schema_version");
    SyntheticSpec& s = model.spec;
    const auto kind = parse_activation_kind(m.at("kind").get<std::string>());
    if (!kind) throw manifest_error("unknown kind");
    s.kind = *kind;
    s.layers = m.at("layers").get<std::size_t>();
    s.d_model = m.at("d_model").get<std::size_t>();
    s.d_ff = m.at("d_ff").get<std::size_t>();
    s.tokens = m.at("tokens").get<std::size_t>();
    s.rho = m.at("rho").get<double>();
    const auto gen = parse_weight_generator(m.at("generator").get<std::string>());
    if (!gen) throw manifest_error("unknown generator");
    s.generator = *gen;
    s.toy_steps = m.at("toy_steps").get<std::size_t>();
    s.with_bias = m.at("with_bias").get<bool>();
    s.seed = m.at("seed").get<std::uint64_t>();

    const auto& files = m.at("layer_files");
    if (!files.is_array() || files.size() != s.layers) throw manifest_error("layer_files count");
    for (const auto& f : files) {
      const std::string name = f.get<std::string>();
      if (name.find('/') != std::string::npos) throw manifest_error("layer path leaves the model");
      model.layers.push_back(ffn_from_ffw1(decode_ffw1(read_bytes(dir / name))));
    }
    const std::string inputs_name = m.at("inputs_file").get<std::string>();
    if (inputs_name.find('/') != std::string::npos) throw manifest_error("inputs path leaves the model");
    Nat1File inputs = decode_nat1(read_bytes(dir / inputs_name));
    if (inputs.kind != Nat1Kind::kInputs) {
      throw FormatError(FormatErrorKind::kBadKind, "inputs file does not hold FFN inputs");
    }
    model.tokens = inputs.tokens;
    model.inputs = std::move(inputs.values);
    for (const auto& w : model.layers) {
      if (w.kind != s.kind || w.d_model() != s.d_model || w.d_ff() != s.d_ff) {
        throw FormatError(FormatErrorKind::kBadDimensions, "layer does not match the manifest");
      }
    }
    if (inputs.layers != s.layers || inputs.d != s.d_model || inputs.tokens != s.tokens) {
      throw FormatError(FormatErrorKind::kBadDimensions, "inputs do not match the manifest");
    }
    s.validate();
  } catch (const nlohmann::json::exception& e) {
    throw manifest_error(e.what());
  } catch (const std::invalid_argument& e) {
    throw manifest_error(e.what());
  }
  return model;
}

std::vector<float> trace_magnitudes(const SyntheticModel& model) {
  const std::size_t n_layers = model.layers.size();
  const std::size_t d_ff = model.d_ff();
  std::vector<float> out(model.tokens * n_layers * d_ff);
  for (std::size_t t = 0; t < model.tokens; ++t) {
    for (std::size_t l = 0; l < n_layers; ++l) {
      const Vector<float> m = neuron_magnitudes<float>(model.layers[l], model.input_of(t, l));
      std::copy(m.begin(), m.end(), out.begin() + static_cast<std::ptrdiff_t>((t * n_layers + l) * d_ff));
    }
  }
  return out;
}

MagnitudeTrace magnitude_trace(const SyntheticModel& model) {
  const auto layers = model.layers_f64();
  const auto inputs = model.inputs_f64();
  return record_trace(layers, inputs, model.tokens);
}

}  // namespace sparsekit
