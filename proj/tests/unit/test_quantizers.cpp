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

#include <cmath>
#include <random>
#include <vector>

#include "sdq/quantizers.hpp"
#include "test_util.hpp"

namespace sdq {
namespace {

using Symbols = std::vector<std::int8_t>;

TEST(Rtn, TwoBitExample) {
  const std::vector<double> row = {0.8, -0.44, 0.12};
  const auto q = rtn_quantize(row, 2);
  EXPECT_DOUBLE_EQ(q[0], 0.8);
  EXPECT_DOUBLE_EQ(q[1], -0.4);
  EXPECT_DOUBLE_EQ(q[2], 0.0);
}

TEST(Rtn, ZeroRowPassesThrough) {
  const std::vector<double> row(5, 0.0);
  EXPECT_EQ(rtn_quantize(row, 4), row);
}

TEST(Rtn, TiesRoundAwayFromZero) {
  // delta = 1 at bits=2 with peak 2; 0.5 and -0.5 sit exactly on a tie.
  const std::vector<double> row = {2.0, 0.5, -0.5, 1.5};
  const auto q = rtn_quantize(row, 2);
  EXPECT_EQ(q, (std::vector<double>{2.0, 1.0, -1.0, 2.0}));
}

TEST(Rtn, RejectsBadBits) {
  const std::vector<double> row = {1.0};
  EXPECT_THROW(rtn_quantize(row, 1), InvariantError);
  EXPECT_THROW(rtn_quantize(row, 9), InvariantError);
  EXPECT_THROW(QuantizerSpec::rtn(9).validate(), InvariantError);
  EXPECT_THROW(QuantizerSpec::ternary(1.0).validate(), InvariantError);
  EXPECT_NO_THROW(QuantizerSpec::rtn(8).validate());
}

TEST(Rtn, ErrorBoundAndIdempotence) {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 300; ++trial) {
    const int bits = 2 + trial % 7;
    const auto row = testing::random_vector(1 + trial % 40, gen, -3.0, 3.0);
    const auto q = rtn_quantize(row, bits);
    const double peak = max_abs(row);
    const double delta = peak / std::pow(2.0, bits - 1);
    for (std::size_t i = 0; i < row.size(); ++i) {
      EXPECT_LE(std::abs(row[i] - q[i]), delta / 2 + 1e-12);
      EXPECT_LE(std::abs(q[i]), peak * (1 + std::pow(2.0, 1 - bits)) + 1e-12);
      const double k = q[i] / delta;
      EXPECT_NEAR(k, std::round(k), 1e-9);
    }
    EXPECT_EQ(rtn_quantize(q, bits), q);
  }
}

TEST(Binarize, SignOfZeroIsPlusOne) {
  EXPECT_EQ(sign_symbol(0.0), 1);
  EXPECT_EQ(sign_symbol(-0.0), 1);
  const std::vector<double> row = {0.0, 0.0};
  EXPECT_EQ(binarize(row).symbols, (Symbols{1, 1}));
}

TEST(Binarize, SmallExample) {
  const std::vector<double> row = {-0.3, 0.3};
  const auto r = binarize(row);
  EXPECT_EQ(r.symbols, (Symbols{-1, 1}));
  EXPECT_DOUBLE_EQ(r.alpha, 0.3);
}

TEST(Binarize, MeanAbsIsTheOptimalScale) {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto row = testing::random_vector(32, gen, -2.0, 2.0);
    const auto r = binarize(row);
    auto err = [&](double s) {
      double e = 0.0;
      for (std::size_t i = 0; i < row.size(); ++i) e += std::pow(row[i] - s * r.symbols[i], 2);
      return e;
    };
    const double best = err(r.alpha);
    for (int k = 0; k <= 2000; ++k) EXPECT_LE(best, err(k * 0.001) + 1e-12);
  }
}

TEST(Ternarize, WorkedExample) {
  const std::vector<double> row = {1.0, 0.2, -1.0, -0.2};
  const auto r = ternarize(row, 0.5);
  EXPECT_DOUBLE_EQ(r.alpha, 0.6);
  EXPECT_DOUBLE_EQ(r.theta, 0.3);
  EXPECT_EQ(r.symbols, (Symbols{1, 0, -1, 0}));
}

TEST(Ternarize, ThresholdIsClosed) {
  EXPECT_EQ(ternary_symbol(0.3, 0.3), 0);
  EXPECT_EQ(ternary_symbol(-0.3, 0.3), 0);
  EXPECT_EQ(ternary_symbol(std::nextafter(0.3, 1.0), 0.3), 1);
  EXPECT_EQ(ternary_symbol(std::nextafter(-0.3, -1.0), 0.3), -1);
}

TEST(Ternarize, ZeroRow) {
  const std::vector<double> row(4, 0.0);
  const auto r = ternarize(row);
  EXPECT_EQ(r.alpha, 0.0);
  EXPECT_EQ(r.theta, 0.0);
  EXPECT_EQ(r.symbols, Symbols(4, 0));
}

TEST(Quantizers, SymbolsAreScaleEquivariant) {
  std::mt19937_64 gen(3);
  // Powers of two keep the scaled row and its mean exactly representable.
  for (int trial = 0; trial < 200; ++trial) {
    const auto row = testing::random_vector(1 + trial % 25, gen);
    const double c = std::ldexp(1.0, trial % 13 - 6);
    std::vector<double> scaled(row);
    for (auto& v : scaled) v *= c;
    const auto b = binarize(row);
    EXPECT_EQ(binarize(scaled).symbols, b.symbols);
    for (auto s : b.symbols) EXPECT_NE(s, 0);
    const auto t = ternarize(row, 0.5);
    const auto ts = ternarize(scaled, 0.5);
    EXPECT_EQ(ts.symbols, t.symbols);
    EXPECT_DOUBLE_EQ(ts.alpha, c * t.alpha);
    for (auto s : t.symbols) EXPECT_TRUE(s >= -1 && s <= 1);
  }
}

}  // namespace
}  // namespace sdq
