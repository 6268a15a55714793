// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sparsekit/affinity.hpp"
#include "sparsekit/predictor.hpp"
#include "sparsekit/sparsity.hpp"

namespace sparsekit {

inline constexpr std::string_view kToolName = "sparsekit";
inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr int kReportSchemaVersion = 1;

struct InputDigest {
  std::string name;
  std::string sha256;  // lowercase hex
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);
// Throws FormatError if the file cannot be read.
InputDigest digest_file(const std::filesystem::path& path, std::string name);

// schema_version, tool, command, seed and inputs; metric blocks are added by
// the caller.
nlohmann::json report_header(std::string_view command, std::uint64_t seed,
                             std::span<const InputDigest> inputs);

nlohmann::json to_json(const ThresholdTable& table);
// Accepts a bare table or a report holding one under "thresholds".
// Throws FormatError(kSchema).
ThresholdTable threshold_table_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SparsityReport& report);
nlohmann::json to_json(const IoSimResult& result);
nlohmann::json to_json(const AffinityReport& report);

// Throws DivergenceError if any number in `j` is NaN or infinite.
void check_finite(const nlohmann::json& j);

// Pretty-printed with a trailing newline; checks finiteness first.
std::string dump_report(const nlohmann::json& j);

// CSV: layer, activation_ratio, reuse_k<window>..., gap, cdf_<p>...
void write_affinity_csv(const AffinityReport& report, std::ostream& out);

}  // namespace sparsekit
