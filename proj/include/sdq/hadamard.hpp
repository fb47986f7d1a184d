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
#include <random>
#include <span>
#include <vector>

#include "sdq/errors.hpp"
#include "sdq/matrix.hpp"

namespace sdq {

/// Randomized Hadamard rotation M = H * D, where H is the Sylvester Hadamard matrix of order
/// `size` and D a diagonal of seeded random signs. With `normalized`, M is scaled by
/// 1/sqrt(size) and is orthogonal; otherwise M * M^T = size * I.
class HadamardOp {
 public:
  static HadamardOp build(std::size_t size, std::uint64_t seed, bool normalized = true) {
    HadamardOp op(size, seed, normalized);
    std::mt19937_64 gen(seed);
    for (auto& s : op.signs_) s = (gen() >> 63) != 0 ? -1 : 1;
    return op;
  }

  // Plain Sylvester matrix (D = I).
  static HadamardOp sylvester(std::size_t size, bool normalized = true) { return HadamardOp(size, 0, normalized); }

  std::size_t size() const { return size_; }
  std::uint64_t seed() const { return seed_; }
  bool normalized() const { return normalized_; }
  std::span<const std::int8_t> sign_diagonal() const { return signs_; }

  /// row <- row * M
  void apply_right(std::span<double> row) const {
    require(row.size() == size_, "hadamard: width " + std::to_string(row.size()) + " != size " +
                                     std::to_string(size_));
    walsh_hadamard(row);
    const double g = gain();
    for (std::size_t j = 0; j < size_; ++j) row[j] *= g * signs_[j];
  }

  /// row <- row * M^T
  void apply_right_transpose(std::span<double> row) const {
    require(row.size() == size_, "hadamard: width " + std::to_string(row.size()) + " != size " +
                                     std::to_string(size_));
    for (std::size_t j = 0; j < size_; ++j) row[j] *= signs_[j];
    walsh_hadamard(row);
    const double g = gain();
    if (g != 1.0)
      for (double& v : row) v *= g;
  }

  FloatMatrix apply_right(const FloatMatrix& block) const {
    FloatMatrix out = block;
    for (Eigen::Index r = 0; r < out.rows(); ++r) apply_right(row_span(out, r));
    return out;
  }

  FloatMatrix apply_right_transpose(const FloatMatrix& block) const {
    FloatMatrix out = block;
    for (Eigen::Index r = 0; r < out.rows(); ++r) apply_right_transpose(row_span(out, r));
    return out;
  }

  /// Dense M, built by the Sylvester recursion H_2k = [[H_k, H_k], [H_k, -H_k]].
  FloatMatrix dense() const {
    FloatMatrix h = FloatMatrix::Ones(1, 1);
    while (static_cast<std::size_t>(h.rows()) < size_) {
      const Eigen::Index k = h.rows();
      FloatMatrix next(2 * k, 2 * k);
      next << h, h, h, -h;
      h = std::move(next);
    }
    for (std::size_t j = 0; j < size_; ++j) h.col(static_cast<Eigen::Index>(j)) *= gain() * signs_[j];
    return h;
  }

 private:
  HadamardOp(std::size_t size, std::uint64_t seed, bool normalized)
      : size_(size), seed_(seed), normalized_(normalized), signs_(size, 1) {
    require(size >= 1 && std::has_single_bit(size), "hadamard size must be a power of two, got " +
                                                        std::to_string(size));
  }

  double gain() const { return normalized_ ? 1.0 / std::sqrt(static_cast<double>(size_)) : 1.0; }

  // In-place x <- H x (H symmetric, so also x^T H).
  static void walsh_hadamard(std::span<double> x) {
    for (std::size_t h = 1; h < x.size(); h *= 2)
      for (std::size_t i = 0; i < x.size(); i += 2 * h)
        for (std::size_t j = i; j < i + h; ++j) {
          const double a = x[j];
          const double b = x[j + h];
          x[j] = a + b;
          x[j + h] = a - b;
        }
  }

  std::size_t size_;
  std::uint64_t seed_;
  bool normalized_;
  std::vector<std::int8_t> signs_;
};

/// Applies op (or its transpose) to every consecutive column block of width op.size().
inline void rotate_blocks(FloatMatrix& m, const HadamardOp& op, bool transpose = false) {
  const auto b = static_cast<Eigen::Index>(op.size());
  require(m.cols() % b == 0, "hadamard: column count is not a multiple of the block size");
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = row_span(m, r);
    for (Eigen::Index c = 0; c < m.cols(); c += b) {
      auto blk = row.subspan(static_cast<std::size_t>(c), static_cast<std::size_t>(b));
      transpose ? op.apply_right_transpose(blk) : op.apply_right(blk);
    }
  }
}

}  // namespace sdq
