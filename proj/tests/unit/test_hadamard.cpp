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

#include "sdq/hadamard.hpp"
#include "test_util.hpp"

namespace sdq {
namespace {

// Dense oracle built entry by entry from the popcount formula, times diag(d).
FloatMatrix oracle_dense(const HadamardOp& op) {
  const auto n = static_cast<Eigen::Index>(op.size());
  const double g = op.normalized() ? 1.0 / std::sqrt(static_cast<double>(n)) : 1.0;
  FloatMatrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      m(i, j) = g * testing::sylvester_entry(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) *
                op.sign_diagonal()[static_cast<std::size_t>(j)];
  return m;
}

double column_flatness(const FloatMatrix& m) {
  const Eigen::RowVectorXd col_mean = m.cwiseAbs().colwise().mean();
  return col_mean.maxCoeff() / col_mean.mean();
}

TEST(Hadamard, BaseCases) {
  const auto one = HadamardOp::sylvester(1);
  EXPECT_EQ(one.dense(), FloatMatrix::Ones(1, 1));
  const auto two = HadamardOp::sylvester(2);
  const double r = 1.0 / std::sqrt(2.0);
  FloatMatrix expect(2, 2);
  expect << r, r, r, -r;
  EXPECT_LT((two.dense() - expect).cwiseAbs().maxCoeff(), 1e-15);
  FloatMatrix raw(2, 2);
  raw << 1, 1, 1, -1;
  EXPECT_EQ(HadamardOp::sylvester(2, false).dense(), raw);
}

TEST(Hadamard, NonPowerOfTwoRejected) {
  EXPECT_THROW(HadamardOp::build(0, 1), InvariantError);
  EXPECT_THROW(HadamardOp::build(12, 1), InvariantError);
  const auto op = HadamardOp::build(8, 1);
  std::vector<double> row(4);
  EXPECT_THROW(op.apply_right(row), InvariantError);
}

TEST(Hadamard, OrthogonalAt128) {
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    const auto op = HadamardOp::build(128, seed);
    const FloatMatrix m = op.dense();
    EXPECT_LT((m * m.transpose() - FloatMatrix::Identity(128, 128)).cwiseAbs().maxCoeff(), 1e-12);
    const auto raw = HadamardOp::build(16, seed, false).dense();
    EXPECT_LT((raw * raw.transpose() - 16.0 * FloatMatrix::Identity(16, 16)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Hadamard, DenseMatchesEntryFormula) {
  for (std::size_t n : {1u, 2u, 4u, 32u, 64u}) {
    const auto op = HadamardOp::build(n, n * 31);
    EXPECT_LT((op.dense() - oracle_dense(op)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Hadamard, FastMatchesDense) {
  std::mt19937_64 gen(10);
  const FloatMatrix w = testing::random_normal(4, 64, gen);
  for (bool normalized : {true, false}) {
    const auto op = HadamardOp::build(64, 5, normalized);
    const FloatMatrix dense = oracle_dense(op);
    EXPECT_LT((op.apply_right(w) - w * dense).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((op.apply_right_transpose(w) - w * dense.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Hadamard, InverseAndEnergy) {
  std::mt19937_64 gen(11);
  for (std::size_t n : {1u, 2u, 8u, 128u, 256u}) {
    const auto op = HadamardOp::build(n, gen());
    const FloatMatrix w = testing::random_normal(6, static_cast<Eigen::Index>(n), gen);
    const FloatMatrix rotated = op.apply_right(w);
    EXPECT_LT((op.apply_right_transpose(rotated) - w).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(rotated.norm(), w.norm(), 1e-10 * w.norm());
  }
}

TEST(Hadamard, SeedDeterminesSigns) {
  const auto a = HadamardOp::build(64, 1234), b = HadamardOp::build(64, 1234), c = HadamardOp::build(64, 1235);
  EXPECT_TRUE(std::equal(a.sign_diagonal().begin(), a.sign_diagonal().end(), b.sign_diagonal().begin()));
  EXPECT_FALSE(std::equal(a.sign_diagonal().begin(), a.sign_diagonal().end(), c.sign_diagonal().begin()));
  for (auto s : a.sign_diagonal()) EXPECT_TRUE(s == 1 || s == -1);
}

TEST(Hadamard, FlattensOutlierColumn) {
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 20; ++trial) {
    FloatMatrix w = testing::random_normal(32, 64, gen);
    w.col(trial % 64) *= 10.0;
    const auto op = HadamardOp::build(64, gen());
    EXPECT_LT(column_flatness(op.apply_right(w)), column_flatness(w));
  }
}

TEST(Hadamard, RotateBlocksActsPerBlock) {
  std::mt19937_64 gen(13);
  const FloatMatrix w = testing::random_normal(3, 32, gen);
  const auto op = HadamardOp::build(8, 77);
  FloatMatrix r = w;
  rotate_blocks(r, op);
  for (Eigen::Index c = 0; c < 32; c += 8) {
    const FloatMatrix blk = w.middleCols(c, 8);
    EXPECT_LT((r.middleCols(c, 8) - op.apply_right(blk)).cwiseAbs().maxCoeff(), 1e-14);
  }
  rotate_blocks(r, op, true);
  EXPECT_LT((r - w).cwiseAbs().maxCoeff(), 1e-12);
  FloatMatrix bad(2, 12);
  EXPECT_THROW(rotate_blocks(bad, op), InvariantError);
}

}  // namespace
}  // namespace sdq
