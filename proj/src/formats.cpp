// Copyright (c) The sparsekit Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/formats.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <system_error>

namespace sparsekit {

namespace {

constexpr char kFfw1Magic[4] = {'F', 'F', 'W', '1'};
constexpr char kNat1Magic[4] = {'N', 'A', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

class ByteWriter {
 public:
  void magic(const char (&m)[4]) {
    for (const char c : m) out_.push_back(static_cast<std::uint8_t>(c));
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f32(std::span<const float> values) {
    for (const float f : values) u32(std::bit_cast<std::uint32_t>(f));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }
  void reserve(std::size_t n) { out_.reserve(n); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return bytes_[pos_++]; }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * k);
    return v;
  }
  std::vector<float> f32(std::size_t count) {
    std::vector<float> out(count);
    for (float& f : out) {
      f = std::bit_cast<float>(u32());
      if (!std::isfinite(f)) {
        throw FormatError(FormatErrorKind::kNonFinite, "payload holds a non-finite float");
      }
    }
    return out;
  }
  std::span<const std::uint8_t> raw(std::size_t count) {
    const auto s = bytes_.subspan(pos_, count);
    pos_ += count;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void check_magic(std::span<const std::uint8_t> bytes, const char (&magic)[4],
                 std::size_t header_size, const char* format) {
  if (bytes.size() < 4) {
    throw FormatError(FormatErrorKind::kTruncated,
                      std::string(format) + " file shorter than its magic");
  }
  if (std::memcmp(bytes.data(), magic, 4) != 0) {
    throw FormatError(FormatErrorKind::kBadMagic, std::string("not a ") + format + " file");
  }
  if (bytes.size() < header_size) {
    throw FormatError(FormatErrorKind::kTruncated, std::string(format) + " header truncated");
  }
}

// a * b, or a DimensionOverflow error.
std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t out = 0;
  if (__builtin_mul_overflow(a, b, &out)) {
    throw FormatError(FormatErrorKind::kDimensionOverflow, "dimension product overflows");
  }
  return out;
}

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t out = 0;
  if (__builtin_add_overflow(a, b, &out)) {
    throw FormatError(FormatErrorKind::kDimensionOverflow, "payload size overflows");
  }
  return out;
}

void check_payload(std::uint64_t expected, std::size_t actual) {
  if (actual < expected) {
    throw FormatError(FormatErrorKind::kTruncated, "payload has " + std::to_string(actual) +
                                                       " bytes, header implies " +
                                                       std::to_string(expected));
  }
  if (actual > expected) {
    throw FormatError(FormatErrorKind::kTrailingBytes,
                      std::to_string(actual - expected) + " bytes after the payload");
  }
}

std::uint32_t narrow_dim(std::size_t v, const char* name) {
  if (v == 0 || v > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError(FormatErrorKind::kBadDimensions, std::string(name) + " does not fit u32");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::string_view to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kIo: return "io error";
    case FormatErrorKind::kTruncated: return "truncated";
    case FormatErrorKind::kBadMagic: return "bad magic";
    case FormatErrorKind::kBadVersion: return "unsupported version";
    case FormatErrorKind::kBadKind: return "unknown kind";
    case FormatErrorKind::kBadFlags: return "invalid flags";
    case FormatErrorKind::kBadDimensions: return "invalid dimensions";
    case FormatErrorKind::kDimensionOverflow: return "dimension overflow";
    case FormatErrorKind::kTrailingBytes: return "trailing bytes";
    case FormatErrorKind::kNonFinite: return "non-finite value";
    case FormatErrorKind::kPaddingBits: return "non-zero padding bits";
    case FormatErrorKind::kSchema: return "schema mismatch";
  }
  return "format error";
}

std::vector<std::uint8_t> encode_ffw1(const Ffw1File& f) {
  const std::size_t d_model = f.w_in.cols();
  const std::size_t d_ff = f.w_in.rows();
  ByteWriter w;
  w.reserve(kFfw1HeaderSize + 4 * (f.w_in.data().size() + f.w_out.data().size()));
  w.magic(kFfw1Magic);
  w.u32(kVersion);
  w.u8(f.kind);
  w.u8(f.flags);
  w.u32(narrow_dim(d_model, "d_model"));
  w.u32(narrow_dim(d_ff, "d_ff"));
  w.f32(f.w_in.data());
  if (f.v_in) w.f32(f.v_in->data());
  w.f32(f.w_out.data());
  if (f.b_in) w.f32(*f.b_in);
  if (f.b_out) w.f32(*f.b_out);
  return w.take();
}

Ffw1File decode_ffw1(std::span<const std::uint8_t> bytes) {
  check_magic(bytes, kFfw1Magic, kFfw1HeaderSize, "FFW1");
  ByteReader r(bytes);
  r.raw(4);
  if (const std::uint32_t version = r.u32(); version != kVersion) {
    throw FormatError(FormatErrorKind::kBadVersion, "FFW1 version " + std::to_string(version));
  }
  Ffw1File f;
  f.kind = r.u8();
  f.flags = r.u8();
  const std::uint64_t d_model = r.u32();
  const std::uint64_t d_ff = r.u32();
  const bool predictor = f.kind == kFfw1PredictorKind;
  if (!predictor && f.kind > static_cast<std::uint8_t>(ActivationKind::kSwiglu)) {
    throw FormatError(FormatErrorKind::kBadKind, "FFW1 kind " + std::to_string(f.kind));
  }
  if ((f.flags & ~(kFlagHasVIn | kFlagHasBIn | kFlagHasBOut)) != 0) {
    throw FormatError(FormatErrorKind::kBadFlags, "reserved flag bits set");
  }
  const bool has_v = (f.flags & kFlagHasVIn) != 0;
  const bool has_b_in = (f.flags & kFlagHasBIn) != 0;
  const bool has_b_out = (f.flags & kFlagHasBOut) != 0;
  if (predictor) {
    if (has_v || !has_b_in || !has_b_out) {
      throw FormatError(FormatErrorKind::kBadFlags, "predictor needs both biases and no gate");
    }
  } else {
    const bool gated = is_gated(static_cast<ActivationKind>(f.kind));
    if (gated != has_v) {
      throw FormatError(FormatErrorKind::kBadFlags, "gate matrix flag does not match kind");
    }
    if (gated && has_b_in) {
      throw FormatError(FormatErrorKind::kBadFlags, "gated kinds carry no input bias");
    }
  }
  if (d_model == 0 || d_ff == 0) {
    throw FormatError(FormatErrorKind::kBadDimensions, "zero FFW1 dimension");
  }

  const std::uint64_t in_count = checked_mul(d_ff, d_model);
  std::uint64_t out_rows = d_model;
  if (predictor) {
    // payload floats = r*d + n*r + r + n  =>  n = (P - r*(d+1)) / (r+1)
    if (r.remaining() % 4 != 0) {
      throw FormatError(FormatErrorKind::kTruncated, "predictor payload not whole floats");
    }
    const std::uint64_t floats = r.remaining() / 4;
    const std::uint64_t fixed = checked_add(in_count, d_ff);
    if (floats <= fixed || (floats - fixed) % (d_ff + 1) != 0) {
      throw FormatError(FormatErrorKind::kTruncated,
                        "predictor payload does not match its rank and input size");
    }
    out_rows = (floats - fixed) / (d_ff + 1);
  }
  const std::uint64_t out_count = checked_mul(out_rows, d_ff);
  std::uint64_t floats = checked_add(in_count, out_count);
  if (has_v) floats = checked_add(floats, in_count);
  if (has_b_in) floats = checked_add(floats, d_ff);
  if (has_b_out) floats = checked_add(floats, out_rows);
  check_payload(checked_mul(floats, 4), r.remaining());

  f.w_in = Matrix<float>(d_ff, d_model, r.f32(in_count));
  if (has_v) f.v_in = Matrix<float>(d_ff, d_model, r.f32(in_count));
  f.w_out = Matrix<float>(out_rows, d_ff, r.f32(out_count));
  if (has_b_in) f.b_in = r.f32(d_ff);
  if (has_b_out) f.b_out = r.f32(out_rows);
  return f;
}

Ffw1File to_ffw1(const FfnWeights<float>& w) {
  w.validate();
  Ffw1File f;
  f.kind = static_cast<std::uint8_t>(w.kind);
  f.flags = static_cast<std::uint8_t>((w.v_in ? kFlagHasVIn : 0) | (w.b_in ? kFlagHasBIn : 0) |
                                      (w.b_out ? kFlagHasBOut : 0));
  f.w_in = w.w_in;
  f.v_in = w.v_in;
  f.w_out = w.w_out;
  f.b_in = w.b_in;
  f.b_out = w.b_out;
  return f;
}

FfnWeights<float> ffn_from_ffw1(const Ffw1File& f) {
  if (f.kind == kFfw1PredictorKind) {
    throw FormatError(FormatErrorKind::kBadKind, "file holds a predictor, not an FFN");
  }
  FfnWeights<float> w;
  w.kind = static_cast<ActivationKind>(f.kind);
  w.w_in = f.w_in;
  w.v_in = f.v_in;
  w.w_out = f.w_out;
  w.b_in = f.b_in;
  w.b_out = f.b_out;
  w.validate();
  return w;
}

Ffw1File to_ffw1(const PredictorParams& p) {
  p.validate();
  Ffw1File f;
  f.kind = kFfw1PredictorKind;
  f.flags = kFlagHasBIn | kFlagHasBOut;
  f.w_in = p.w1.cast<float>();
  f.w_out = p.w2.cast<float>();
  f.b_in = Vector<float>(p.b1.begin(), p.b1.end());
  f.b_out = Vector<float>(p.b2.begin(), p.b2.end());
  return f;
}

PredictorParams predictor_from_ffw1(const Ffw1File& f) {
  if (f.kind != kFfw1PredictorKind || !f.b_in || !f.b_out) {
    throw FormatError(FormatErrorKind::kBadKind, "file does not hold a predictor");
  }
  PredictorParams p;
  p.w1 = f.w_in.cast<double>();
  p.b1.assign(f.b_in->begin(), f.b_in->end());
  p.w2 = f.w_out.cast<double>();
  p.b2.assign(f.b_out->begin(), f.b_out->end());
  p.validate();
  return p;
}

std::vector<std::uint8_t> encode_nat1(const Nat1File& f) {
  const std::uint64_t entries =
      checked_mul(checked_mul(f.tokens, f.layers), static_cast<std::uint64_t>(f.d));
  ByteWriter w;
  w.magic(kNat1Magic);
  w.u32(kVersion);
  w.u8(static_cast<std::uint8_t>(f.kind));
  w.u32(f.layers);
  w.u32(f.d);
  w.u64(f.tokens);
  if (f.kind == Nat1Kind::kBitmask) {
    if (f.mask.size() != entries) throw ShapeError("NAT1 mask length does not match header");
    const std::size_t row_bytes = (f.d + 7) / 8;
    const std::size_t rows = f.tokens * f.layers;
    w.reserve(kNat1HeaderSize + rows * row_bytes);
    for (std::size_t row = 0; row < rows; ++row) {
      for (std::size_t b = 0; b < row_bytes; ++b) {
        std::uint8_t byte = 0;
        for (std::size_t k = 0; k < 8; ++k) {
          const std::size_t idx = b * 8 + k;
          if (idx < f.d && f.mask[row * f.d + idx] != 0) byte |= static_cast<std::uint8_t>(1u << k);
        }
        w.u8(byte);
      }
    }
  } else {
    if (f.values.size() != entries) throw ShapeError("NAT1 value count does not match header");
    w.reserve(kNat1HeaderSize + 4 * entries);
    w.f32(f.values);
  }
  return w.take();
}

Nat1File decode_nat1(std::span<const std::uint8_t> bytes) {
  check_magic(bytes, kNat1Magic, kNat1HeaderSize, "NAT1");
  ByteReader r(bytes);
  r.raw(4);
  if (const std::uint32_t version = r.u32(); version != kVersion) {
    throw FormatError(FormatErrorKind::kBadVersion, "NAT1 version " + std::to_string(version));
  }
  Nat1File f;
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(Nat1Kind::kInputs)) {
    throw FormatError(FormatErrorKind::kBadKind, "NAT1 record kind " + std::to_string(kind));
  }
  f.kind = static_cast<Nat1Kind>(kind);
  f.layers = r.u32();
  f.d = r.u32();
  f.tokens = r.u64();
  if (f.layers == 0 || f.d == 0) {
    throw FormatError(FormatErrorKind::kBadDimensions, "zero NAT1 dimension");
  }
  const std::uint64_t rows = checked_mul(f.tokens, f.layers);
  if (f.kind == Nat1Kind::kBitmask) {
    const std::uint64_t row_bytes = (static_cast<std::uint64_t>(f.d) + 7) / 8;
    check_payload(checked_mul(rows, row_bytes), r.remaining());
    f.mask.resize(rows * f.d);
    const unsigned used_bits = f.d % 8;
    for (std::uint64_t row = 0; row < rows; ++row) {
      const auto packed = r.raw(row_bytes);
      for (std::uint32_t idx = 0; idx < f.d; ++idx) {
        f.mask[row * f.d + idx] = (packed[idx / 8] >> (idx % 8)) & 1u;
      }
      if (used_bits != 0 && (packed[row_bytes - 1] >> used_bits) != 0) {
        throw FormatError(FormatErrorKind::kPaddingBits, "bitmask row has non-zero padding");
      }
    }
  } else {
    const std::uint64_t entries = checked_mul(rows, f.d);
    check_payload(checked_mul(entries, 4), r.remaining());
    f.values = r.f32(entries);
  }
  return f;
}

Nat1File bitmask_file(const ActivationSetTrace& trace) {
  trace.validate();
  Nat1File f;
  f.kind = Nat1Kind::kBitmask;
  f.layers = narrow_dim(trace.layers.size(), "n_layers");
  f.d = narrow_dim(trace.layers.front().d_ff, "d_ff");
  f.tokens = trace.layers.front().size();
  f.mask.assign(f.tokens * f.layers * f.d, 0);
  for (std::size_t l = 0; l < trace.layers.size(); ++l) {
    for (std::size_t t = 0; t < f.tokens; ++t) {
      for (const std::uint32_t n : trace.layers[l].tokens[t]) {
        f.mask[(t * f.layers + l) * f.d + n] = 1;
      }
    }
  }
  return f;
}

ActivationSetTrace activation_sets(const Nat1File& f) {
  if (f.kind != Nat1Kind::kBitmask) {
    throw FormatError(FormatErrorKind::kBadKind, "NAT1 file is not an activation bitmask");
  }
  ActivationSetTrace trace;
  trace.layers.resize(f.layers);
  for (auto& layer : trace.layers) {
    layer.d_ff = f.d;
    layer.tokens.resize(f.tokens);
  }
  for (std::uint64_t t = 0; t < f.tokens; ++t) {
    for (std::uint32_t l = 0; l < f.layers; ++l) {
      auto& set = trace.layers[l].tokens[t];
      const std::size_t base = (t * f.layers + l) * f.d;
      for (std::uint32_t n = 0; n < f.d; ++n) {
        if (f.mask[base + n] != 0) set.push_back(n);
      }
    }
  }
  return trace;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError(FormatErrorKind::kIo, "read failed for " + path.string());
  return bytes;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrorKind::kIo, "cannot create " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatError(FormatErrorKind::kIo, "cannot move into " + path.string());
}

}  // namespace sparsekit
