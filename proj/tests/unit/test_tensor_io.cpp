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

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <thread>
#include <vector>

#include "sdq/tensor_io.hpp"
#include "test_util.hpp"

namespace sdq {
namespace {

using testing::TempDir;

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

TEST(TensorIo, FloatContainerLayout) {
  TempDir dir("io");
  FloatMatrix m(2, 2);
  m << 1, 2, 3, 4;
  save_float(m, dir / "m.sdqt");
  const auto b = file_bytes(dir / "m.sdqt");
  const std::vector<std::uint8_t> header = {0x53, 0x44, 0x51, 0x54, 0x01, 2, 0, 0, 0, 2, 0, 0, 0};
  ASSERT_EQ(b.size(), header.size() + 16);
  EXPECT_TRUE(std::equal(header.begin(), header.end(), b.begin()));
  // 1.0f = 0x3F800000, little-endian.
  EXPECT_EQ(b[13], 0x00);
  EXPECT_EQ(b[16], 0x3F);
  EXPECT_EQ(b[15], 0x80);

  const FloatMatrix back = load_float(dir / "m.sdqt");
  ASSERT_EQ(back.rows(), 2);
  ASSERT_EQ(back.cols(), 2);
  EXPECT_EQ(back(0, 0), 1.0);
  EXPECT_EQ(back(0, 1), 2.0);
  EXPECT_EQ(back(1, 0), 3.0);
  EXPECT_EQ(back(1, 1), 4.0);
}

TEST(TensorIo, RejectsNonFiniteWithOffset) {
  FloatMatrix m(2, 2);
  m << 1, 2, 3, 4;
  auto bytes = encode_float(m);
  const std::uint32_t nan_bits = std::bit_cast<std::uint32_t>(std::numeric_limits<float>::quiet_NaN());
  // Element (0,1) starts after the 13-byte header and one float.
  for (int i = 0; i < 4; ++i) bytes[17 + i] = static_cast<std::uint8_t>(nan_bits >> (8 * i));
  try {
    decode_float(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite value"), std::string::npos);
    EXPECT_EQ(e.offset(), 17u);
  }
}

TEST(TensorIo, RejectsBadMagicAndTruncation) {
  FloatMatrix m = FloatMatrix::Ones(3, 5);
  auto bytes = encode_float(m);
  auto bad = bytes;
  bad[3] = 'X';
  EXPECT_THROW(decode_float(bad), FormatError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 1);
  EXPECT_THROW(decode_float(truncated), FormatError);
  EXPECT_THROW(decode_float(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 7)), FormatError);
  auto version = bytes;
  version[4] = 2;
  EXPECT_THROW(decode_float(version), FormatError);
  EXPECT_THROW(load_float("/nonexistent/file.sdqt"), FormatError);
}

TEST(TensorIo, SaveRejectsNonFinite) {
  FloatMatrix m = FloatMatrix::Zero(1, 2);
  m(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(encode_float(m), InvariantError);
  m(0, 1) = 1e300;  // overflows float
  EXPECT_THROW(encode_float(m), InvariantError);
}

TEST(TensorIo, FloatRoundTripIsBitExact) {
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<int> dim(1, 12);
  std::uniform_int_distribution<std::uint32_t> bits;
  for (int trial = 0; trial < 1000; ++trial) {
    FloatMatrix m(dim(gen), dim(gen));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      float f;
      do {
        f = std::bit_cast<float>(bits(gen));
      } while (!std::isfinite(f));
      m.data()[i] = f;
    }
    const FloatMatrix back = decode_float(encode_float(m));
    ASSERT_EQ(back.rows(), m.rows());
    ASSERT_EQ(back.cols(), m.cols());
    for (Eigen::Index i = 0; i < m.size(); ++i)
      ASSERT_EQ(std::bit_cast<std::uint64_t>(back.data()[i]), std::bit_cast<std::uint64_t>(m.data()[i]));
  }
}

TEST(PackTrits, CodeMap) {
  EXPECT_TRUE(pack_trits({}).empty());
  const std::vector<std::int8_t> plus4 = {1, 1, 1, 1};
  EXPECT_EQ(pack_trits(plus4), std::vector<std::uint8_t>{0b01010101});
  const std::vector<std::int8_t> row = {1, 0, -1, 0};
  EXPECT_EQ(pack_trits(row), std::vector<std::uint8_t>{0b01001100});
  const std::vector<std::int8_t> five = {-1, -1, -1, -1, 1};
  EXPECT_EQ(pack_trits(five), (std::vector<std::uint8_t>{0b11111111, 0b01000000}));
  const std::vector<std::int8_t> bad = {2};
  EXPECT_THROW(pack_trits(bad), InvariantError);
}

TEST(PackTrits, ExhaustiveSmallRoundTrip) {
  for (std::size_t len = 1; len <= 12; ++len) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < len; ++i) total *= 3;
    std::vector<std::int8_t> s(len);
    for (std::size_t code = 0; code < total; ++code) {
      std::size_t c = code;
      for (std::size_t i = 0; i < len; ++i, c /= 3) s[i] = static_cast<std::int8_t>(static_cast<int>(c % 3) - 1);
      const auto packed = pack_trits(s);
      ASSERT_EQ(packed.size(), (len + 3) / 4);
      ASSERT_EQ(unpack_trits(packed, len), s) << "len " << len << " code " << code;
    }
  }
}

TEST(PackTrits, UnpackRejectsReserved) {
  const std::vector<std::uint8_t> bytes = {0b01100000};
  EXPECT_THROW(unpack_trits(bytes, 2), FormatError);
  EXPECT_NO_THROW(unpack_trits(bytes, 1));
  EXPECT_THROW(unpack_trits(bytes, 5), FormatError);  // buffer too short
}

QuantizedWeight random_quantized(std::mt19937_64& gen, std::uint32_t rows, std::uint32_t cols_orig,
                                 std::uint32_t cols_up, std::uint32_t block, QuantizerKind kind, bool hadamard) {
  std::uniform_int_distribution<int> sym(kind == QuantizerKind::binary ? 0 : -1, 1);
  std::vector<std::int8_t> s(std::size_t{rows} * cols_up);
  for (auto& v : s) {
    int x = sym(gen);
    if (kind == QuantizerKind::binary) x = x == 0 ? -1 : 1;
    v = static_cast<std::int8_t>(x);
  }
  std::uniform_real_distribution<float> sc(0.01f, 10.0f);
  std::vector<float> scales(rows);
  for (auto& v : scales) v = sc(gen);
  return QuantizedWeight::from_symbols(s, rows, cols_orig, cols_up, block, kind, {hadamard, gen()}, scales);
}

TEST(QuantizedContainer, TernaryFractionalRoundTrip) {
  TempDir dir("io");
  std::mt19937_64 gen(11);
  // 7 x 200 at OSR 1.5 with two blocks of 100 -> 300 upsampled columns.
  const QuantizedWeight q = random_quantized(gen, 7, 200, 300, 100, QuantizerKind::ternary, false);
  EXPECT_EQ(q.codes.size(), 7u * 75u);
  save_quantized(q, dir / "q.sdqw");
  const QuantizedWeight back = load_quantized(dir / "q.sdqw");
  EXPECT_EQ(back, q);
  for (std::uint32_t r = 0; r < q.rows; ++r) EXPECT_EQ(back.unpack_row(r), q.unpack_row(r));
}

TEST(QuantizedContainer, HeaderLayout) {
  std::vector<std::int8_t> s = {1, 0, -1, 0, 1};
  const auto q = QuantizedWeight::from_symbols(s, 1, 4, 5, 4, QuantizerKind::ternary, {true, 0x0102030405060708ULL},
                                               {2.0f});
  const auto b = encode_quantized(q);
  const std::vector<std::uint8_t> expect = {
      0x53, 0x44, 0x51, 0x57, 0x01, 0x01, 0x01, 0x08, 0x07, 0x06, 0x05, 0x04, 0x03, 0x02, 0x01,  // magic..seed
      1, 0, 0, 0, 4, 0, 0, 0, 5, 0, 0, 0, 4, 0, 0, 0,                                            // dims
      0x00, 0x00, 0x00, 0x40,                                                                    // 2.0f
      0b01001100, 0b01000000};                                                                   // codes
  EXPECT_EQ(b, expect);
}

TEST(QuantizedContainer, PackedSizeIsRowsTimesCeilQuarter) {
  std::mt19937_64 gen(3);
  for (std::uint32_t up : {8u, 9u, 10u, 11u, 13u}) {
    const auto q = random_quantized(gen, 3, 8, up, 8, QuantizerKind::ternary, false);
    EXPECT_EQ(q.codes.size(), 3u * ((up + 3) / 4));
    EXPECT_EQ(encode_quantized(q).size(), 31u + 3u * 4u + q.codes.size());
  }
}

TEST(QuantizedContainer, BinaryWithZeroIsRejectedOnSave) {
  std::vector<std::int8_t> s = {1, -1, 0, 1};
  const auto q = QuantizedWeight::from_symbols(s, 1, 4, 4, 4, QuantizerKind::binary, {}, {1.0f});
  EXPECT_THROW(encode_quantized(q), InvariantError);
}

TEST(QuantizedContainer, InvariantViolationsRejected) {
  std::mt19937_64 gen(5);
  auto q = random_quantized(gen, 2, 8, 16, 4, QuantizerKind::ternary, true);
  EXPECT_NO_THROW(q.validate());
  auto bad = q;
  bad.row_scales[1] = 0.0f;
  EXPECT_THROW(bad.validate(), InvariantError);
  bad = q;
  bad.row_scales[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(bad.validate(), InvariantError);
  bad = q;
  bad.block_size = 3;
  EXPECT_THROW(bad.validate(), InvariantError);
  auto np2 = random_quantized(gen, 2, 12, 12, 6, QuantizerKind::ternary, true);
  EXPECT_THROW(np2.validate(), InvariantError);  // hadamard needs a power-of-two block
  auto shrink = random_quantized(gen, 2, 8, 8, 4, QuantizerKind::ternary, false);
  shrink.cols_up = 4;
  EXPECT_THROW(shrink.validate(), InvariantError);
}

TEST(QuantizedContainer, ReservedCodeOnLoadIsFormatError) {
  std::vector<std::int8_t> s = {1, 0, -1, 0};
  const auto q = QuantizedWeight::from_symbols(s, 1, 4, 4, 4, QuantizerKind::ternary, {}, {1.0f});
  auto b = encode_quantized(q);
  b.back() = 0b10000000;
  try {
    decode_quantized(b);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), b.size() - 1);
  }
  b.back() = 0b01001101;  // non-zero padding is fine in-band but here all 4 slots are live -> valid
  EXPECT_NO_THROW(decode_quantized(b));
  auto t = encode_quantized(q);
  t.pop_back();
  EXPECT_THROW(decode_quantized(t), FormatError);
}

TEST(QuantizedContainer, ConcurrentSavesOnDistinctPaths) {
  TempDir dir("io");
  std::vector<QuantizedWeight> qs;
  std::mt19937_64 gen(9);
  for (int i = 0; i < 4; ++i) qs.push_back(random_quantized(gen, 5, 64, 128, 32, QuantizerKind::ternary, true));
  {
    std::vector<std::jthread> ts;
    for (int i = 0; i < 4; ++i)
      ts.emplace_back([&, i] { save_quantized(qs[i], dir / ("q" + std::to_string(i) + ".sdqw")); });
  }
  for (int i = 0; i < 4; ++i) EXPECT_EQ(load_quantized(dir / ("q" + std::to_string(i) + ".sdqw")), qs[i]);
}

}  // namespace
}  // namespace sdq
