// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sparsekit/affinity.hpp"
#include "sparsekit/ffn.hpp"
#include "sparsekit/predictor.hpp"
#include "sparsekit/tensor.hpp"

namespace sparsekit {

enum class FormatErrorKind {
  kIo,
  kTruncated,
  kBadMagic,
  kBadVersion,
  kBadKind,
  kBadFlags,
  kBadDimensions,
  kDimensionOverflow,
  kTrailingBytes,
  kNonFinite,
  kPaddingBits,
  kSchema,  // JSON sidecar or manifest does not match what is expected
};

std::string_view to_string(FormatErrorKind kind);

class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  FormatErrorKind kind() const { return kind_; }

 private:
  FormatErrorKind kind_;
};

// FFW1 weight container. All integers and floats little-endian.
//
//   offset size
//   0      4    magic "FFW1"
//   4      4    version (u32) = 1
//   8      1    kind (u8): 0 relu, 1 relu2, 2 silu, 3 gelu, 4 reglu, 5 swiglu,
//               255 predictor
//   9      1    flags (u8): bit0 has_v_in, bit1 has_b_in, bit2 has_b_out
//   10     4    d_model (u32)
//   14     4    d_ff (u32); the rank for predictors
//   18          f32 payload: W_in, [V_in], W_out, [b_in], [b_out], row-major
//
// For predictors W_in/b_in hold W1/b1 and W_out/b_out hold W2/b2. Both
// biases are required; W2's row count is the only dimension not in the
// header and is recovered from the payload length.
inline constexpr std::uint8_t kFfw1PredictorKind = 255;
inline constexpr std::uint8_t kFlagHasVIn = 1u << 0;
inline constexpr std::uint8_t kFlagHasBIn = 1u << 1;
inline constexpr std::uint8_t kFlagHasBOut = 1u << 2;
inline constexpr std::size_t kFfw1HeaderSize = 18;

struct Ffw1File {
  std::uint8_t kind = 0;
  std::uint8_t flags = 0;
  Matrix<float> w_in;
  std::optional<Matrix<float>> v_in;
  Matrix<float> w_out;
  std::optional<Vector<float>> b_in;
  std::optional<Vector<float>> b_out;

  bool operator==(const Ffw1File&) const = default;
};

std::vector<std::uint8_t> encode_ffw1(const Ffw1File& file);
Ffw1File decode_ffw1(std::span<const std::uint8_t> bytes);

Ffw1File to_ffw1(const FfnWeights<float>& w);
FfnWeights<float> ffn_from_ffw1(const Ffw1File& file);
Ffw1File to_ffw1(const PredictorParams& p);
PredictorParams predictor_from_ffw1(const Ffw1File& file);

// NAT1 activation trace.
//
//   0      4    magic "NAT1"
//   4      4    version (u32) = 1
//   8      1    record kind (u8): 0 f32 magnitudes, 1 activation bitmask,
//               2 f32 FFN inputs
//   9      4    n_layers (u32)
//   13     4    d (u32): d_ff for kinds 0/1, d_model for kind 2
//   17     8    n_tokens (u64)
//   25          payload, token-major then layer-major; bitmask rows are
//               ceil(d/8) bytes, bit k of byte b is entry 8b+k, pad bits 0
enum class Nat1Kind : std::uint8_t { kMagnitudes = 0, kBitmask = 1, kInputs = 2 };
inline constexpr std::size_t kNat1HeaderSize = 25;

struct Nat1File {
  Nat1Kind kind = Nat1Kind::kMagnitudes;
  std::uint32_t layers = 0;
  std::uint32_t d = 0;
  std::uint64_t tokens = 0;
  std::vector<float> values;        // kinds 0 and 2: tokens * layers * d
  std::vector<std::uint8_t> mask;   // kind 1: tokens * layers * d entries of 0/1

  bool operator==(const Nat1File&) const = default;
};

std::vector<std::uint8_t> encode_nat1(const Nat1File& file);
Nat1File decode_nat1(std::span<const std::uint8_t> bytes);

Nat1File bitmask_file(const ActivationSetTrace& trace);
ActivationSetTrace activation_sets(const Nat1File& file);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
// Writes through a temporary sibling and renames it into place.
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace sparsekit
