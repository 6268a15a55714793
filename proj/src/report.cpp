// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/report.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "sparsekit/formats.hpp"

namespace sparsekit {

namespace {

FormatError schema_error(const std::string& what) {
  return FormatError(FormatErrorKind::kSchema, "threshold table: " + what);
}

std::string format_number(double v, int digits = 17) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 15]);
  }
  return out;
}

InputDigest digest_file(const std::filesystem::path& path, std::string name) {
  return {std::move(name), sha256_hex(read_bytes(path))};
}

nlohmann::json report_header(std::string_view command, std::uint64_t seed,
                             std::span<const InputDigest> inputs) {
  nlohmann::json digests = nlohmann::json::array();
  for (const auto& d : inputs) digests.push_back({{"name", d.name}, {"sha256", d.sha256}});
  return {
      {"schema_version", kReportSchemaVersion},
      {"tool", {{"name", kToolName}, {"version", kToolVersion}}},
      {"command", command},
      {"seed", seed},
      {"inputs", digests},
  };
}

nlohmann::json to_json(const ThresholdTable& table) {
  return {
      {"epsilon", table.epsilon},
      {"bound", table.bound},
      {"provenance", to_string(table.provenance)},
  };
}

ThresholdTable threshold_table_from_json(const nlohmann::json& j) {
  const nlohmann::json& t = j.contains("thresholds") ? j.at("thresholds") : j;
  ThresholdTable table;
  try {
    table.epsilon = t.at("epsilon").get<std::vector<double>>();
    table.bound = t.at("bound").get<double>();
    const auto prov = parse_threshold_provenance(t.at("provenance").get<std::string>());
    if (!prov) throw schema_error("unknown provenance");
    table.provenance = *prov;
    table.validate();
  } catch (const nlohmann::json::exception& e) {
    throw schema_error(e.what());
  } catch (const std::invalid_argument& e) {
    throw schema_error(e.what());
  }
  return table;
}

nlohmann::json to_json(const SparsityReport& report) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    const auto& ls = report.layers[l];
    layers.push_back({{"layer", l},
                      {"epsilon", report.thresholds.epsilon.at(l)},
                      {"sparsity", ls.sparsity},
                      {"cett", ls.cett},
                      {"zero_activation", ls.zero_activation}});
  }
  return {
      {"layers", layers},
      {"sparsity", report.sparsity},
      {"cett", report.cett},
      {"zero_activation", report.zero_activation},
      {"thresholds", to_json(report.thresholds)},
  };
}

nlohmann::json to_json(const IoSimResult& r) {
  return {
      {"total_bytes", r.total_bytes},
      {"baseline_bytes", r.baseline_bytes},
      {"reduction", r.reduction},
      {"active_neurons", r.active_neurons},
      {"fetched_neurons", r.fetched_neurons},
  };
}

nlohmann::json to_json(const AffinityReport& report) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    const auto& la = report.layers[l];
    layers.push_back({{"layer", l},
                      {"activation_ratio", la.activation_ratio},
                      {"reuse", la.reuse},
                      {"gap", la.gap},
                      {"cdf", la.cdf}});
  }
  return {
      {"windows", report.windows},
      {"cdf_grid", report.cdf_grid},
      {"layers", layers},
      {"reuse", report.reuse},
      {"gap", report.gap},
  };
}

void check_finite(const nlohmann::json& j) {
  if (j.is_number_float() && !std::isfinite(j.get<double>())) {
    throw DivergenceError("report holds a non-finite number");
  }
  if (j.is_structured()) {
    for (const auto& item : j) check_finite(item);
  }
}

std::string dump_report(const nlohmann::json& j) {
  check_finite(j);
  return j.dump(2) + "\n";
}

void write_affinity_csv(const AffinityReport& report, std::ostream& out) {
  out << "layer,activation_ratio";
  for (const std::size_t k : report.windows) out << ",reuse_k" << k;
  out << ",gap";
  for (const double p : report.cdf_grid) out << ",cdf_" << format_number(p, 6);
  out << "\n";
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    const auto& la = report.layers[l];
    out << l << "," << format_number(la.activation_ratio);
    for (const double r : la.reuse) out << "," << format_number(r);
    out << "," << format_number(la.gap);
    for (std::size_t i = 0; i < report.cdf_grid.size(); ++i) {
      out << "," << (i < la.cdf.size() ? format_number(la.cdf[i]) : "");
    }
    out << "\n";
  }
}

}  // namespace sparsekit
