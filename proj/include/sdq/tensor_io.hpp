// Copyright 2026 The SDQ Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "sdq/errors.hpp"
#include "sdq/matrix.hpp"

namespace sdq {

enum class QuantizerKind : std::uint8_t { binary = 0, ternary = 1 };

inline const char* to_string(QuantizerKind kind) {
  return kind == QuantizerKind::binary ? "binary" : "ternary";
}

// 2-bit trit codes: 00 -> 0, 01 -> +1, 11 -> -1, 10 reserved.
// The first symbol of a byte occupies the two most significant bits.
namespace trit_code {
inline constexpr std::uint8_t zero = 0b00;
inline constexpr std::uint8_t plus = 0b01;
inline constexpr std::uint8_t reserved = 0b10;
inline constexpr std::uint8_t minus = 0b11;
}  // namespace trit_code

inline constexpr std::size_t packed_bytes(std::size_t symbols) { return (symbols + 3) / 4; }

inline std::uint8_t encode_trit(std::int8_t s) {
  switch (s) {
    case 0: return trit_code::zero;
    case 1: return trit_code::plus;
    case -1: return trit_code::minus;
    default: throw InvariantError("symbol " + std::to_string(s) + " is not in {-1, 0, +1}");
  }
}

inline std::int8_t decode_trit(std::uint8_t code) {
  switch (code & 0b11) {
    case trit_code::zero: return 0;
    case trit_code::plus: return 1;
    case trit_code::minus: return -1;
    default: throw FormatError("reserved trit code 0b10");
  }
}

inline void pack_trits_into(std::span<const std::int8_t> symbols, std::span<std::uint8_t> out) {
  std::fill(out.begin(), out.end(), std::uint8_t{0});
  for (std::size_t i = 0; i < symbols.size(); ++i)
    out[i / 4] |= static_cast<std::uint8_t>(encode_trit(symbols[i]) << (6 - 2 * (i % 4)));
}

inline std::vector<std::uint8_t> pack_trits(std::span<const std::int8_t> symbols) {
  std::vector<std::uint8_t> out(packed_bytes(symbols.size()));
  pack_trits_into(symbols, out);
  return out;
}

inline std::vector<std::int8_t> unpack_trits(std::span<const std::uint8_t> bytes, std::size_t count) {
  if (bytes.size() < packed_bytes(count))
    throw FormatError("packed buffer holds " + std::to_string(bytes.size()) + " bytes, need " +
                      std::to_string(packed_bytes(count)));
  std::vector<std::int8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto code = static_cast<std::uint8_t>((bytes[i / 4] >> (6 - 2 * (i % 4))) & 0b11);
    if (code == trit_code::reserved) throw FormatError("reserved trit code 0b10", i / 4);
    out[i] = decode_trit(code);
  }
  return out;
}

struct HadamardSetting {
  bool enabled = false;
  std::uint64_t seed = 0;
  bool operator==(const HadamardSetting&) const = default;
};

/// Packed Sigma-Delta codes of one weight matrix.
///
/// Codes are stored row-major over the upsampled width, each row padded to a byte
/// boundary. Every block of `block_size` input columns maps to `cols_up / num_blocks()`
/// upsampled columns. Symbols live in the (optionally) Hadamard-rotated domain.
struct QuantizedWeight {
  std::uint32_t rows = 0;
  std::uint32_t cols_orig = 0;
  std::uint32_t cols_up = 0;
  std::uint32_t block_size = 0;
  QuantizerKind kind = QuantizerKind::ternary;
  HadamardSetting hadamard;
  std::vector<float> row_scales;
  std::vector<std::uint8_t> codes;

  bool operator==(const QuantizedWeight&) const = default;

  std::size_t bytes_per_row() const { return packed_bytes(cols_up); }
  std::size_t num_blocks() const { return block_size == 0 ? 0 : cols_orig / block_size; }
  std::size_t block_width_up() const { return cols_up / num_blocks(); }
  double osr() const { return static_cast<double>(cols_up) / cols_orig; }

  std::span<const std::uint8_t> packed_row(std::size_t r) const {
    return std::span<const std::uint8_t>(codes).subspan(r * bytes_per_row(), bytes_per_row());
  }

  std::vector<std::int8_t> unpack_row(std::size_t r) const { return unpack_trits(packed_row(r), cols_up); }

  // Throws InvariantError describing the first violated invariant.
  void validate() const {
    require(rows >= 1 && cols_orig >= 1, "quantized weight must have at least one row and column");
    require(cols_up >= cols_orig, "cols_up must be >= cols_orig (OSR >= 1)");
    require(block_size >= 1 && cols_orig % block_size == 0, "block_size must divide cols_orig");
    require(!hadamard.enabled || std::has_single_bit(block_size),
            "block_size must be a power of two when hadamard is on");
    require(cols_up % num_blocks() == 0, "cols_up must be a multiple of the block count");
    require(row_scales.size() == rows, "row_scales must hold one value per row");
    for (float s : row_scales) require(std::isfinite(s) && s > 0.0f, "row scales must be finite and > 0");
    require(codes.size() == rows * bytes_per_row(), "packed code buffer has the wrong size");
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row = packed_row(r);
      for (std::size_t k = 0; k < cols_up; ++k) {
        const auto code = static_cast<std::uint8_t>((row[k / 4] >> (6 - 2 * (k % 4))) & 0b11);
        require(code != trit_code::reserved, "reserved code in row " + std::to_string(r));
        if (kind == QuantizerKind::binary)
          require(code != trit_code::zero,
                  "binary weight holds a 0 symbol at row " + std::to_string(r) + ", col " + std::to_string(k));
      }
    }
  }

  // Packs a rows x cols_up symbol matrix (row-major).
  static QuantizedWeight from_symbols(std::span<const std::int8_t> symbols, std::uint32_t rows,
                                      std::uint32_t cols_orig, std::uint32_t cols_up, std::uint32_t block_size,
                                      QuantizerKind kind, HadamardSetting hadamard, std::vector<float> row_scales) {
    require(symbols.size() == std::size_t{rows} * cols_up, "symbol count does not match rows x cols_up");
    QuantizedWeight q;
    q.rows = rows;
    q.cols_orig = cols_orig;
    q.cols_up = cols_up;
    q.block_size = block_size;
    q.kind = kind;
    q.hadamard = hadamard;
    q.row_scales = std::move(row_scales);
    q.codes.assign(rows * q.bytes_per_row(), 0);
    for (std::size_t r = 0; r < rows; ++r)
      pack_trits_into(symbols.subspan(r * cols_up, cols_up),
                      std::span<std::uint8_t>(q.codes).subspan(r * q.bytes_per_row(), q.bytes_per_row()));
    return q;
  }
};

namespace detail {

inline constexpr std::uint8_t kFormatVersion = 0x01;
inline constexpr std::uint8_t kFloatMagic[4] = {'S', 'D', 'Q', 'T'};
inline constexpr std::uint8_t kQuantMagic[4] = {'S', 'D', 'Q', 'W'};

class ByteWriter {
 public:
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> data) : data_(std::move(data)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    need(n, what);
    auto out = std::span<const std::uint8_t>(data_).subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8(const char* what) { return bytes(1, what)[0]; }
  std::uint32_t u32(const char* what) {
    auto b = bytes(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::uint64_t u64(const char* what) {
    auto b = bytes(8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated payload reading ") + what, pos_);
  }

  std::vector<std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write to '" + path.string() + "' failed");
}

inline void expect_magic(ByteReader& in, const std::uint8_t (&magic)[4], const char* name) {
  auto m = in.bytes(4, "magic");
  if (!std::equal(m.begin(), m.end(), std::begin(magic)))
    throw FormatError(std::string("bad magic, expected ") + name, 0);
  const std::size_t at = in.offset();
  if (in.u8("version") != kFormatVersion) throw FormatError("unsupported container version", at);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_float(const FloatMatrix& m) {
  require(m.rows() >= 1 && m.cols() >= 1, "matrix must have at least one row and column");
  detail::ByteWriter out;
  out.bytes(detail::kFloatMagic);
  out.u8(detail::kFormatVersion);
  out.u32(static_cast<std::uint32_t>(m.rows()));
  out.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float v = static_cast<float>(m.data()[i]);
    if (!std::isfinite(v)) throw InvariantError("non-finite value at flat index " + std::to_string(i));
    out.f32(v);
  }
  return out.buffer();
}

inline FloatMatrix decode_float(std::vector<std::uint8_t> bytes) {
  detail::ByteReader in(std::move(bytes));
  detail::expect_magic(in, detail::kFloatMagic, "SDQT");
  const std::size_t dims_at = in.offset();
  const std::uint32_t rows = in.u32("rows");
  const std::uint32_t cols = in.u32("cols");
  if (rows == 0 || cols == 0) throw FormatError("zero dimension", dims_at);
  if (in.remaining() / 4 < std::uint64_t{rows} * cols) throw FormatError("truncated payload", in.offset());
  FloatMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const std::size_t at = in.offset();
    const float v = in.f32("value");
    if (!std::isfinite(v)) throw FormatError("non-finite value", at);
    m.data()[i] = v;
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after payload", in.offset());
  return m;
}

/// Writes an SDQT container. Values are narrowed to 32-bit floats.
inline void save_float(const FloatMatrix& m, const std::filesystem::path& path) {
  detail::write_file(path, encode_float(m));
}

inline FloatMatrix load_float(const std::filesystem::path& path) { return decode_float(detail::read_file(path)); }

inline std::vector<std::uint8_t> encode_quantized(const QuantizedWeight& q) {
  q.validate();
  detail::ByteWriter out;
  out.bytes(detail::kQuantMagic);
  out.u8(detail::kFormatVersion);
  out.u8(static_cast<std::uint8_t>(q.kind));
  out.u8(q.hadamard.enabled ? 1 : 0);
  out.u64(q.hadamard.seed);
  out.u32(q.rows);
  out.u32(q.cols_orig);
  out.u32(q.cols_up);
  out.u32(q.block_size);
  for (float s : q.row_scales) out.f32(s);
  out.bytes(q.codes);
  return out.buffer();
}

inline QuantizedWeight decode_quantized(std::vector<std::uint8_t> bytes) {
  detail::ByteReader in(std::move(bytes));
  detail::expect_magic(in, detail::kQuantMagic, "SDQW");
  QuantizedWeight q;
  std::size_t at = in.offset();
  const std::uint8_t kind = in.u8("quantizer");
  if (kind > 1) throw FormatError("unknown quantizer byte " + std::to_string(kind), at);
  q.kind = static_cast<QuantizerKind>(kind);
  at = in.offset();
  const std::uint8_t had = in.u8("hadamard flag");
  if (had > 1) throw FormatError("unknown hadamard byte " + std::to_string(had), at);
  q.hadamard.enabled = had == 1;
  q.hadamard.seed = in.u64("hadamard seed");
  at = in.offset();
  q.rows = in.u32("rows");
  q.cols_orig = in.u32("cols_orig");
  q.cols_up = in.u32("cols_up");
  q.block_size = in.u32("block_size");
  if (q.rows == 0 || q.cols_orig == 0 || q.block_size == 0) throw FormatError("zero dimension", at);
  const std::uint64_t payload = std::uint64_t{q.rows} * 4 + std::uint64_t{q.rows} * packed_bytes(q.cols_up);
  if (in.remaining() < payload) throw FormatError("truncated payload", in.offset());
  q.row_scales.resize(q.rows);
  for (auto& s : q.row_scales) s = in.f32("row scale");
  const std::size_t codes_at = in.offset();
  auto code_bytes = in.bytes(q.rows * q.bytes_per_row(), "codes");
  q.codes.assign(code_bytes.begin(), code_bytes.end());
  if (in.remaining() != 0) throw FormatError("trailing bytes after payload", in.offset());

  const std::size_t bpr = q.bytes_per_row();
  for (std::size_t r = 0; r < q.rows; ++r) {
    for (std::size_t k = 0; k < bpr * 4; ++k) {
      const std::size_t byte = r * bpr + k / 4;
      const auto code = static_cast<std::uint8_t>((q.codes[byte] >> (6 - 2 * (k % 4))) & 0b11);
      if (code == trit_code::reserved) throw FormatError("reserved trit code 0b10", codes_at + byte);
      if (k >= q.cols_up && code != trit_code::zero) throw FormatError("non-zero row padding", codes_at + byte);
    }
  }
  try {
    q.validate();
  } catch (const InvariantError& e) {
    throw FormatError(std::string("invalid quantized weight: ") + e.what());
  }
  return q;
}

inline void save_quantized(const QuantizedWeight& q, const std::filesystem::path& path) {
  detail::write_file(path, encode_quantized(q));
}

inline QuantizedWeight load_quantized(const std::filesystem::path& path) {
  return decode_quantized(detail::read_file(path));
}

}  // namespace sdq
