// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "sparsekit/affinity.hpp"
#include "sparsekit/errors.hpp"
#include "sparsekit/formats.hpp"
#include "sparsekit/predictor.hpp"
#include "sparsekit/report.hpp"
#include "sparsekit/rng.hpp"
#include "sparsekit/sparsity.hpp"
#include "sparsekit/synth.hpp"

namespace sparsekit::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Bad option values found after parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string display_name(const fs::path& p) {
  fs::path n = p.lexically_normal();
  if (n.filename().empty()) n = n.parent_path();
  return n.filename().string();
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

void emit(const json& report, const std::string& out_path, std::ostream& out) {
  const std::string text = dump_report(report);
  if (out_path.empty()) {
    out << text;
  } else {
    write_bytes(out_path, as_bytes(text));
  }
}

std::vector<InputDigest> model_digests(const fs::path& dir) {
  const SyntheticModel m = read_model(dir);
  const std::string base = display_name(dir);
  std::vector<InputDigest> out;
  out.push_back(digest_file(dir / kManifestName, base + "/" + std::string(kManifestName)));
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    out.push_back(digest_file(dir / layer_file_name(l), base + "/" + layer_file_name(l)));
  }
  out.push_back(digest_file(dir / kInputsName, base + "/" + std::string(kInputsName)));
  return out;
}

json read_json_file(const fs::path& path) {
  const auto bytes = read_bytes(path);
  json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded()) {
    throw FormatError(FormatErrorKind::kSchema, path.string() + " is not valid JSON");
  }
  return j;
}

ThresholdTable load_thresholds(const fs::path& path, std::size_t layers) {
  ThresholdTable t = threshold_table_from_json(read_json_file(path));
  if (t.epsilon.size() != layers) {
    throw FormatError(FormatErrorKind::kSchema,
                      "threshold table has " + std::to_string(t.epsilon.size()) +
                          " layers, model has " + std::to_string(layers));
  }
  return t;
}

// Either --thresholds FILE or --epsilon E (applied to every layer).
struct ThresholdSource {
  std::string path;
  std::optional<double> epsilon;

  void add(CLI::App* cmd) {
    cmd->add_option("--thresholds", path, "threshold table or threshold report JSON")
        ;
    cmd->add_option("--epsilon", epsilon, "one magnitude threshold for every layer")
        ->check(CLI::NonNegativeNumber);
  }

  void check() const {
    if (!path.empty() && epsilon) throw UsageError("give --thresholds or --epsilon, not both");
    if (path.empty() && !epsilon) throw UsageError("--thresholds or --epsilon is required");
  }

  ThresholdTable load(std::size_t layers) const {
    check();
    if (epsilon) {
      ThresholdTable t;
      t.epsilon.assign(layers, *epsilon);
      t.provenance = ThresholdProvenance::kManual;
      return t;
    }
    return load_thresholds(path, layers);
  }

  void digest(std::vector<InputDigest>& inputs) const {
    check();
    if (!path.empty()) inputs.push_back(digest_file(path, display_name(path)));
  }
};

std::vector<std::size_t> document_starts(std::size_t tokens, std::size_t document_length) {
  std::vector<std::size_t> starts;
  if (document_length == 0) return starts;
  for (std::size_t t = 0; t < tokens; t += document_length) starts.push_back(t);
  return starts;
}

ActivationSetTrace load_mask(const fs::path& path, std::size_t document_length) {
  ActivationSetTrace trace = activation_sets(decode_nat1(read_bytes(path)));
  trace.document_starts = document_starts(trace.layers.front().size(), document_length);
  return trace;
}

std::vector<double> default_cdf_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 20; ++k) grid.push_back(k / 20.0);
  return grid;
}

std::size_t split_token(std::size_t tokens, double train_fraction) {
  const auto split = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(tokens)));
  if (split == 0 || split >= tokens) {
    throw UsageError("--train-fraction leaves an empty train or evaluation split");
  }
  return split;
}

std::string predictor_file_name(std::size_t layer) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "predictor_%03zu.ffw1", layer);
  return buf;
}

struct Common {
  std::string out;
  std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  if (with_out) cmd->add_option("--out", c.out, "write the JSON report here instead of stdout");
  cmd->add_option("--seed", c.seed, "random seed echoed in the report");
}

// ---- gen -------------------------------------------------------------------

struct GenOptions {
  Common common;
  std::string dir;
  std::string report;
  std::string kind = "swiglu";
  std::string generator = "random";
  SyntheticSpec spec;
};

void run_gen(const GenOptions& o, std::ostream& out) {
  SyntheticSpec spec = o.spec;
  spec.kind = *parse_activation_kind(o.kind);
  spec.generator = *parse_weight_generator(o.generator);
  spec.seed = o.common.seed;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const SyntheticModel model = gen_synthetic(spec);
  const auto names = write_model(model, o.dir);

  json files = json::array();
  const std::string base = display_name(o.dir);
  for (const auto& n : names) {
    const InputDigest d = digest_file(fs::path(o.dir) / n, base + "/" + n);
    files.push_back({{"name", d.name}, {"sha256", d.sha256}});
  }
  json report = report_header("gen", spec.seed, {});
  report["model"] = {
      {"kind", to_string(spec.kind)}, {"layers", spec.layers},
      {"d_model", spec.d_model},      {"d_ff", spec.d_ff},
      {"tokens", spec.tokens},        {"rho", spec.rho},
      {"generator", to_string(spec.generator)},
      {"toy_steps", spec.toy_steps},  {"with_bias", spec.with_bias},
  };
  report["outputs"] = files;
  emit(report, o.report, out);
}

// ---- trace -----------------------------------------------------------------

struct TraceOptions {
  Common common;
  std::string model;
  std::string magnitudes;
  std::string bitmask;
  ThresholdSource thresholds;
};

void run_trace(const TraceOptions& o, std::ostream& out) {
  const SyntheticModel model = read_model(o.model);
  const std::size_t layers = model.layers.size();
  auto inputs = model_digests(o.model);

  Nat1File mags;
  mags.kind = Nat1Kind::kMagnitudes;
  mags.layers = static_cast<std::uint32_t>(layers);
  mags.d = static_cast<std::uint32_t>(model.d_ff());
  mags.tokens = model.tokens;
  mags.values = trace_magnitudes(model);
  write_bytes(o.magnitudes, encode_nat1(mags));

  json layer_stats = json::array();
  for (std::size_t l = 0; l < layers; ++l) {
    double sum = 0.0;
    for (std::size_t t = 0; t < model.tokens; ++t) {
      for (std::size_t i = 0; i < model.d_ff(); ++i) {
        sum += mags.values[(t * layers + l) * model.d_ff() + i];
      }
    }
    layer_stats.push_back(
        {{"layer", l},
         {"mean_magnitude", sum / static_cast<double>(model.tokens * model.d_ff())}});
  }

  json report = report_header("trace", o.common.seed, inputs);
  report["trace"] = {{"layers", layers},
                     {"d_ff", model.d_ff()},
                     {"tokens", model.tokens},
                     {"magnitudes_file", display_name(o.magnitudes)},
                     {"per_layer", layer_stats}};

  if (!o.bitmask.empty()) {
    o.thresholds.digest(inputs);
    report["inputs"] = report_header("trace", o.common.seed, inputs)["inputs"];
    const ThresholdTable table = o.thresholds.load(layers);
    const ActivationSetTrace sets = activation_trace(magnitude_trace(model), table);
    write_bytes(o.bitmask, encode_nat1(bitmask_file(sets)));
    const std::string sidecar = dump_report(to_json(table));
    write_bytes(o.bitmask + ".json", as_bytes(sidecar));
    json ratios = json::array();
    for (const auto& layer : sets.layers) ratios.push_back(layer.activation_ratio());
    report["trace"]["bitmask_file"] = display_name(o.bitmask);
    report["trace"]["activation_ratio"] = ratios;
    report["trace"]["thresholds"] = to_json(table);
  } else if (!o.thresholds.path.empty() || o.thresholds.epsilon) {
    throw UsageError("--thresholds/--epsilon only apply with --bitmask");
  }
  emit(report, o.common.out, out);
}

// ---- cett / sparse-eval ----------------------------------------------------

struct EvalOptions {
  Common common;
  std::string model;
  ThresholdSource thresholds;
};

void run_cett(const EvalOptions& o, bool full, std::ostream& out) {
  const SyntheticModel model = read_model(o.model);
  auto inputs = model_digests(o.model);
  o.thresholds.digest(inputs);
  const ThresholdTable table = o.thresholds.load(model.layers.size());
  const auto layers = model.layers_f64();
  const MagnitudeTrace trace = magnitude_trace(model);

  json report = report_header(full ? "sparse-eval" : "cett", o.common.seed, inputs);
  if (!full) {
    json per_layer = json::array();
    double mean = 0.0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const double c = mean_cett(layers[l], trace, l, table.epsilon[l]);
      mean += c;
      per_layer.push_back({{"layer", l}, {"epsilon", table.epsilon[l]}, {"cett", c}});
    }
    report["cett"] = {{"layers", per_layer},
                      {"mean", mean / static_cast<double>(layers.size())}};
    emit(report, o.common.out, out);
    return;
  }

  const SparsityReport summary = summarize(trace, layers, table);
  report["sparsity"] = to_json(summary);
  // The residual of the sparse pass, measured directly.
  json errors = json::array();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t t = 0; t < trace.tokens; ++t) {
      const auto x = trace.input_of(t, l);
      const Vector<double> full_out = ffn_forward<double>(layers[l], x);
      const Vector<double> sparse_out = sparse_forward<double>(layers[l], x, table.epsilon[l]);
      const double denom = l2_norm<double>(full_out);
      if (denom == 0.0) continue;
      Vector<double> diff(full_out.size());
      for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = full_out[j] - sparse_out[j];
      total += l2_norm<double>(diff) / denom;
      ++counted;
    }
    errors.push_back(counted == 0 ? 0.0 : total / static_cast<double>(counted));
  }
  report["sparsity"]["output_error"] = errors;
  emit(report, o.common.out, out);
}

// ---- threshold -------------------------------------------------------------

struct ThresholdOptions {
  Common common;
  std::string model;
  double bound = kDefaultCettBound;
  std::size_t candidates = kDefaultCandidateCount;
  std::string algorithm = "alg1";
};

void run_threshold(const ThresholdOptions& o, std::ostream& out) {
  const SyntheticModel model = read_model(o.model);
  const auto inputs = model_digests(o.model);
  const auto layers = model.layers_f64();
  const MagnitudeTrace trace = magnitude_trace(model);
  const auto algorithm = *parse_threshold_provenance(o.algorithm);
  const ThresholdTable table = calibrate_thresholds(trace, layers, o.bound, algorithm, o.candidates);

  json per_layer = json::array();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto cands = threshold_candidates(trace, l, o.candidates);
    per_layer.push_back({{"layer", l},
                         {"epsilon", table.epsilon[l]},
                         {"mean_cett", mean_cett(layers[l], trace, l, table.epsilon[l])},
                         {"largest_candidate", cands.back()}});
  }
  json report = report_header("threshold", o.common.seed, inputs);
  report["thresholds"] = to_json(table);
  report["calibration"] = {{"candidates", o.candidates}, {"layers", per_layer}};
  emit(report, o.common.out, out);
}

// ---- predictor-train -------------------------------------------------------

struct PredictorTrainOptions {
  Common common;
  std::string model;
  std::string out_dir;
  ThresholdSource thresholds;
  std::size_t rank = 0;
  double train_fraction = 0.8;
  PredictorTrainConfig config;
};

void run_predictor_train(const PredictorTrainOptions& o, std::ostream& out) {
  const SyntheticModel model = read_model(o.model);
  auto inputs = model_digests(o.model);
  o.thresholds.digest(inputs);
  const ThresholdTable table = o.thresholds.load(model.layers.size());
  const MagnitudeTrace trace = magnitude_trace(model);
  const std::size_t split = split_token(trace.tokens, o.train_fraction);
  const std::size_t rank =
      o.rank != 0 ? o.rank
                  : default_predictor_rank(model.d_model(), model.d_ff(),
                                           matrix_count(model.spec.kind));

  std::error_code ec;
  fs::create_directories(o.out_dir, ec);
  if (ec) throw FormatError(FormatErrorKind::kIo, "cannot create " + o.out_dir);

  json per_layer = json::array();
  const std::string base = display_name(o.out_dir);
  for (std::size_t l = 0; l < trace.layers; ++l) {
    const ActivationDataset data = build_dataset(trace, l, table.epsilon[l], 0, split);
    PredictorTrainConfig cfg = o.config;
    cfg.rank = rank;
    cfg.seed = Rng::derive(o.common.seed, l);
    const PredictorTrainResult r = train_predictor(data, cfg);
    const std::string name = predictor_file_name(l);
    write_bytes(fs::path(o.out_dir) / name, encode_ffw1(to_ffw1(r.params)));
    const InputDigest d = digest_file(fs::path(o.out_dir) / name, base + "/" + name);
    per_layer.push_back({{"layer", l},
                         {"rank", rank},
                         {"samples", data.size()},
                         {"initial_loss", r.initial_loss},
                         {"final_loss", r.final_loss},
                         {"file", {{"name", d.name}, {"sha256", d.sha256}}}});
  }
  json report = report_header("predictor-train", o.common.seed, inputs);
  report["predictor"] = {{"rank", rank},
                         {"train_tokens", split},
                         {"epochs", o.config.epochs},
                         {"learning_rate", o.config.learning_rate},
                         {"momentum", o.config.momentum},
                         {"batch_size", o.config.batch_size},
                         {"layers", per_layer}};
  emit(report, o.common.out, out);
}

// ---- predictor-eval --------------------------------------------------------

struct PredictorEvalOptions {
  Common common;
  std::string model;
  std::string predictors;
  ThresholdSource thresholds;
  std::string strategy = "topk";
  double fraction = 0.2;
  bool oracle = false;
  double train_fraction = 0.8;
};

void run_predictor_eval(const PredictorEvalOptions& o, std::ostream& out) {
  if (o.oracle == !o.predictors.empty()) {
    throw UsageError("give exactly one of --predictors or --oracle");
  }
  if (!(o.fraction > 0.0 && o.fraction <= 1.0)) throw UsageError("--fraction must lie in (0, 1]");
  const SyntheticModel model = read_model(o.model);
  auto inputs = model_digests(o.model);
  o.thresholds.digest(inputs);
  const ThresholdTable table = o.thresholds.load(model.layers.size());
  const MagnitudeTrace trace = magnitude_trace(model);
  const std::size_t split = split_token(trace.tokens, o.train_fraction);

  std::vector<PredictorParams> predictors;
  if (!o.oracle) {
    const std::string base = display_name(o.predictors);
    for (std::size_t l = 0; l < trace.layers; ++l) {
      const fs::path p = fs::path(o.predictors) / predictor_file_name(l);
      inputs.push_back(digest_file(p, base + "/" + predictor_file_name(l)));
      PredictorParams params = predictor_from_ffw1(decode_ffw1(read_bytes(p)));
      if (params.d_model() != trace.d_model || params.d_ff() != trace.d_ff) {
        throw FormatError(FormatErrorKind::kBadDimensions, p.string() + " does not fit the model");
      }
      predictors.push_back(std::move(params));
    }
  }

  const bool topk = o.strategy == "topk";
  Rng rng(Rng::derive(o.common.seed, 7));
  MetricAverager overall;
  MetricAverager overall_random;
  json per_layer = json::array();
  for (std::size_t l = 0; l < trace.layers; ++l) {
    const ActivationDataset data = build_dataset(trace, l, table.epsilon[l], split, trace.tokens);
    MetricAverager layer_avg;
    MetricAverager layer_random;
    for (std::size_t s = 0; s < data.size(); ++s) {
      const auto truth = active_indices(data.label(s));
      Vector<double> scores;
      if (o.oracle) {
        scores.assign(data.label(s).begin(), data.label(s).end());
      } else {
        scores = predict_scores(predictors[l], data.input(s));
      }
      const SelectionResult sel = topk ? select_topk(scores, o.fraction) : select_threshold(scores);
      const PredictorMetrics m = predictor_metrics(sel, truth, data.d_ff);
      const PredictorMetrics rm =
          predictor_metrics(random_selection(data.d_ff, sel.active.size(), rng), truth, data.d_ff);
      layer_avg.add(m);
      overall.add(m);
      layer_random.add(rm);
      overall_random.add(rm);
    }
    per_layer.push_back({{"layer", l},
                         {"recall", layer_avg.mean_recall()},
                         {"prediction_sparsity", layer_avg.mean_prediction_sparsity()},
                         {"random_recall", layer_random.mean_recall()},
                         {"recall_tokens", layer_avg.recall_count}});
  }
  json report = report_header("predictor-eval", o.common.seed, inputs);
  report["predictor_eval"] = {
      {"strategy", o.strategy},
      {"fraction", topk ? json(o.fraction) : json(nullptr)},
      {"oracle", o.oracle},
      {"eval_tokens", trace.tokens - split},
      {"recall", overall.mean_recall()},
      {"prediction_sparsity", overall.mean_prediction_sparsity()},
      {"random_recall", overall_random.mean_recall()},
      {"layers", per_layer},
  };
  emit(report, o.common.out, out);
}

// ---- affinity / iosim ------------------------------------------------------

struct AffinityOptions {
  Common common;
  std::string mask;
  std::string metric = "reuse";
  std::size_t window = 1;
  std::vector<double> grid;
  std::size_t pairs = 10;
  std::size_t document_length = 0;
  std::string csv;
};

void run_affinity(const AffinityOptions& o, std::ostream& out) {
  const ActivationSetTrace trace = load_mask(o.mask, o.document_length);
  const std::vector<InputDigest> inputs = {digest_file(o.mask, display_name(o.mask))};
  const std::vector<double> grid = o.grid.empty() ? default_cdf_grid() : o.grid;
  for (const double p : grid) {
    if (!(p >= 0.0 && p <= 1.0)) throw UsageError("--grid points must lie in [0, 1]");
  }

  json block = {{"metric", o.metric}, {"layers", trace.layers.size()},
                {"d_ff", trace.layers.front().d_ff}, {"tokens", trace.layers.front().size()},
                {"document_length", o.document_length}};
  json per_layer = json::array();
  if (o.metric == "reuse") {
    if (o.window == 0) throw UsageError("--window must be at least 1 for reuse");
    const ReuseSummary r = reuse_ratio(trace, o.window);
    block["window"] = o.window;
    block["reuse_ratio"] = r.overall;
    for (std::size_t l = 0; l < r.per_layer.size(); ++l) {
      per_layer.push_back({{"layer", l}, {"reuse_ratio", r.per_layer[l]}});
    }
  } else if (o.metric == "coact") {
    double mean_gap = 0.0;
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
      const auto& layer = trace.layers[l];
      json entry = {{"layer", l}};
      if (layer.d_ff <= kMaxDenseCoactivation) {
        const CoactivationMatrix m = coactivation_matrix(layer);
        entry["gap"] = top_avg_gap(m);
        json pairs = json::array();
        for (const auto& p : top_coactivated_pairs(m, o.pairs)) {
          pairs.push_back({{"first", p.first}, {"second", p.second}, {"frequency", p.frequency}});
        }
        entry["top_pairs"] = pairs;
      } else {
        entry["gap"] = top_avg_gap_streaming(layer);
      }
      mean_gap += entry["gap"].get<double>();
      per_layer.push_back(entry);
    }
    block["gap"] = mean_gap / static_cast<double>(trace.layers.size());
  } else {
    block["grid"] = grid;
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
      per_layer.push_back({{"layer", l}, {"cdf", hot_cdf(trace.layers[l], grid)}});
    }
  }
  block["per_layer"] = per_layer;

  if (!o.csv.empty()) {
    const std::size_t windows[] = {std::max<std::size_t>(o.window, 1)};
    const AffinityReport full = analyze_affinity(trace, windows, grid);
    std::ostringstream csv;
    write_affinity_csv(full, csv);
    write_bytes(o.csv, as_bytes(csv.str()));
  }
  json report = report_header("affinity", o.common.seed, inputs);
  report["affinity"] = block;
  emit(report, o.common.out, out);
}

struct IoSimOptions {
  Common common;
  std::string mask;
  std::size_t window = 1;
  std::uint64_t bytes_per_neuron = 0;
  std::string model;
  std::size_t document_length = 0;
};

void run_iosim(const IoSimOptions& o, std::ostream& out) {
  const ActivationSetTrace trace = load_mask(o.mask, o.document_length);
  std::vector<InputDigest> inputs = {digest_file(o.mask, display_name(o.mask))};
  IoSimConfig cfg;
  cfg.window = o.window;
  cfg.bytes_per_neuron = o.bytes_per_neuron;
  if (cfg.bytes_per_neuron == 0) {
    if (o.model.empty()) {
      cfg.bytes_per_neuron = IoSimConfig{}.bytes_per_neuron;
    } else {
      const SyntheticModel model = read_model(o.model);
      const auto md = model_digests(o.model);
      inputs.insert(inputs.end(), md.begin(), md.end());
      cfg.bytes_per_neuron = neuron_parameter_bytes(model.d_model(), is_gated(model.spec.kind));
    }
  }
  json per_layer = json::array();
  for (std::size_t l = 0; l < trace.layers.size(); ++l) {
    json entry = to_json(io_simulate(trace.layers[l], cfg, trace.document_starts));
    entry["layer"] = l;
    per_layer.push_back(entry);
  }
  json report = report_header("iosim", o.common.seed, inputs);
  report["iosim"] = {{"window", cfg.window},
                     {"bytes_per_neuron", cfg.bytes_per_neuron},
                     {"document_length", o.document_length},
                     {"total", to_json(io_simulate(trace, cfg))},
                     {"per_layer", per_layer}};
  emit(report, o.common.out, out);
}

// ---- report ----------------------------------------------------------------

struct ReportOptions {
  Common common;
  std::string model;
  ThresholdSource thresholds;
  std::vector<std::size_t> windows = {1, 2, 4, 8};
  std::string csv;
};

void run_report(const ReportOptions& o, std::ostream& out) {
  const SyntheticModel model = read_model(o.model);
  auto inputs = model_digests(o.model);
  o.thresholds.digest(inputs);
  const ThresholdTable table = o.thresholds.load(model.layers.size());
  const auto layers = model.layers_f64();
  const MagnitudeTrace trace = magnitude_trace(model);
  const ActivationSetTrace sets = activation_trace(trace, table);
  const auto grid = default_cdf_grid();

  json report = report_header("report", o.common.seed, inputs);
  report["sparsity"] = to_json(summarize(trace, layers, table));
  bool any_active = false;
  for (const auto& layer : sets.layers) {
    for (const auto& s : layer.tokens) any_active = any_active || !s.empty();
  }
  if (any_active) {
    const AffinityReport aff = analyze_affinity(sets, o.windows, grid);
    report["affinity"] = to_json(aff);
    if (!o.csv.empty()) {
      std::ostringstream csv;
      write_affinity_csv(aff, csv);
      write_bytes(o.csv, as_bytes(csv.str()));
    }
  } else {
    report["affinity"] = nullptr;
  }
  IoSimConfig cfg;
  cfg.window = 1;
  cfg.bytes_per_neuron = neuron_parameter_bytes(model.d_model(), is_gated(model.spec.kind));
  json io = to_json(io_simulate(sets, cfg));
  io["window"] = cfg.window;
  io["bytes_per_neuron"] = cfg.bytes_per_neuron;
  report["iosim"] = io;
  emit(report, o.common.out, out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Activation sparsity analysis for feed-forward layers", "sparsekit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  const auto kinds = CLI::IsMember({"relu", "relu2", "silu", "gelu", "reglu", "swiglu"});
  std::function<void()> action;

  GenOptions gen;
  auto* c_gen = app.add_subcommand("gen", "generate a synthetic model directory");
  c_gen->add_option("--out", gen.dir, "model directory to create")->required();
  c_gen->add_option("--report", gen.report, "write the JSON report here instead of stdout");
  add_common(c_gen, gen.common, false);
  c_gen->add_option("--kind", gen.kind, "activation kind")->check(kinds);
  c_gen->add_option("--layers", gen.spec.layers)->check(CLI::PositiveNumber);
  c_gen->add_option("--d-model", gen.spec.d_model)->check(CLI::PositiveNumber);
  c_gen->add_option("--d-ff", gen.spec.d_ff)->check(CLI::PositiveNumber);
  c_gen->add_option("--tokens", gen.spec.tokens)->check(CLI::PositiveNumber);
  c_gen->add_option("--rho", gen.spec.rho, "input autocorrelation")->check(CLI::Range(0.0, 1.0));
  c_gen->add_option("--generator", gen.generator)->check(CLI::IsMember({"random", "toy"}));
  c_gen->add_option("--toy-steps", gen.spec.toy_steps, "distillation steps per layer");
  c_gen->add_flag("--bias", gen.spec.with_bias, "include biases");
  c_gen->callback([&] { action = [&] { run_gen(gen, out); }; });

  TraceOptions tr;
  auto* c_trace = app.add_subcommand("trace", "record neuron magnitudes (and optionally a bitmask)");
  add_common(c_trace, tr.common);
  c_trace->add_option("--model", tr.model)->required();
  c_trace->add_option("--magnitudes", tr.magnitudes, "NAT1 magnitude file to write")->required();
  c_trace->add_option("--bitmask", tr.bitmask, "NAT1 activation bitmask to write");
  tr.thresholds.add(c_trace);
  c_trace->callback([&] { action = [&] { run_trace(tr, out); }; });

  EvalOptions ce;
  auto* c_cett = app.add_subcommand("cett", "mean CETT per layer at given thresholds");
  add_common(c_cett, ce.common);
  c_cett->add_option("--model", ce.model)->required();
  ce.thresholds.add(c_cett);
  c_cett->callback([&] { action = [&] { run_cett(ce, false, out); }; });

  EvalOptions se;
  auto* c_se = app.add_subcommand("sparse-eval", "sparsity, CETT and sparse-pass error per layer");
  add_common(c_se, se.common);
  c_se->add_option("--model", se.model)->required();
  se.thresholds.add(c_se);
  c_se->callback([&] { action = [&] { run_cett(se, true, out); }; });

  ThresholdOptions th;
  auto* c_th = app.add_subcommand("threshold", "calibrate per-layer thresholds to a CETT bound");
  add_common(c_th, th.common);
  c_th->add_option("--model", th.model)->required();
  c_th->add_option("--bound", th.bound, "CETT upper bound")->check(CLI::Range(0.0, 1.0));
  c_th->add_option("--candidates", th.candidates, "quantile candidates")
      ->check(CLI::PositiveNumber);
  c_th->add_option("--algorithm", th.algorithm)->check(CLI::IsMember({"alg1", "exact"}));
  c_th->callback([&] { action = [&] { run_threshold(th, out); }; });

  PredictorTrainOptions pt;
  auto* c_pt = app.add_subcommand("predictor-train", "train one activation predictor per layer");
  add_common(c_pt, pt.common);
  c_pt->add_option("--model", pt.model)->required();
  c_pt->add_option("--out-dir", pt.out_dir, "directory for predictor_NNN.ffw1")->required();
  pt.thresholds.add(c_pt);
  c_pt->add_option("--rank", pt.rank, "0 picks the default rank");
  c_pt->add_option("--epochs", pt.config.epochs);
  c_pt->add_option("--lr", pt.config.learning_rate)->check(CLI::PositiveNumber);
  c_pt->add_option("--momentum", pt.config.momentum)->check(CLI::Range(0.0, 1.0));
  c_pt->add_option("--batch", pt.config.batch_size)->check(CLI::PositiveNumber);
  c_pt->add_option("--train-fraction", pt.train_fraction)->check(CLI::Range(0.0, 1.0));
  c_pt->callback([&] { action = [&] { run_predictor_train(pt, out); }; });

  PredictorEvalOptions pe;
  auto* c_pe = app.add_subcommand("predictor-eval", "recall and prediction sparsity on held-out tokens");
  add_common(c_pe, pe.common);
  c_pe->add_option("--model", pe.model)->required();
  c_pe->add_option("--predictors", pe.predictors);
  pe.thresholds.add(c_pe);
  c_pe->add_option("--strategy", pe.strategy)->check(CLI::IsMember({"topk", "threshold"}));
  c_pe->add_option("--fraction", pe.fraction, "top-k fraction");
  c_pe->add_flag("--oracle", pe.oracle, "score with the true labels");
  c_pe->add_option("--train-fraction", pe.train_fraction)->check(CLI::Range(0.0, 1.0));
  c_pe->callback([&] { action = [&] { run_predictor_eval(pe, out); }; });

  AffinityOptions af;
  auto* c_af = app.add_subcommand("affinity", "reuse ratio, co-activation or hot-neuron CDF");
  add_common(c_af, af.common);
  c_af->add_option("--mask", af.mask, "NAT1 bitmask trace")->required();
  c_af->add_option("--metric", af.metric)->check(CLI::IsMember({"reuse", "coact", "cdf"}));
  c_af->add_option("--window", af.window, "sliding window k");
  c_af->add_option("--grid", af.grid, "CDF neuron proportions")->delimiter(',');
  c_af->add_option("--pairs", af.pairs, "co-activated pairs to list per layer");
  c_af->add_option("--document-length", af.document_length, "reset the window every N tokens");
  c_af->add_option("--csv", af.csv, "per-layer CSV curve");
  c_af->callback([&] { action = [&] { run_affinity(af, out); }; });

  IoSimOptions io;
  auto* c_io = app.add_subcommand("iosim", "sliding-window parameter I/O simulation");
  add_common(c_io, io.common);
  c_io->add_option("--mask", io.mask)->required();
  c_io->add_option("--window", io.window);
  c_io->add_option("--bytes-per-neuron", io.bytes_per_neuron, "0 derives it from --model");
  c_io->add_option("--model", io.model, "model the mask came from");
  c_io->add_option("--document-length", io.document_length);
  c_io->callback([&] { action = [&] { run_iosim(io, out); }; });

  ReportOptions rp;
  auto* c_rp = app.add_subcommand("report", "sparsity, affinity and I/O summary in one report");
  add_common(c_rp, rp.common);
  c_rp->add_option("--model", rp.model)->required();
  rp.thresholds.add(c_rp);
  c_rp->add_option("--windows", rp.windows)->delimiter(',');
  c_rp->add_option("--csv", rp.csv);
  c_rp->callback([&] { action = [&] { run_report(rp, out); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    action();
    return kExitOk;
  } catch (const UsageError& e) {
    err << "sparsekit: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "sparsekit: " << e.what() << "\n";
    return kExitFormat;
  } catch (const ShapeError& e) {
    err << "sparsekit: input mismatch: " << e.what() << "\n";
    return kExitFormat;
  } catch (const DivergenceError& e) {
    err << "sparsekit: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::invalid_argument& e) {
    err << "sparsekit: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "sparsekit: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace sparsekit::cli
