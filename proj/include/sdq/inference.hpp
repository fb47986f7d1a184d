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

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "sdq/engine.hpp"
#include "sdq/errors.hpp"
#include "sdq/hadamard.hpp"
#include "sdq/matrix.hpp"
#include "sdq/parallel.hpp"
#include "sdq/resampler.hpp"
#include "sdq/tensor_io.hpp"

namespace sdq {

/// Sum of code[k] * act[k] over one packed row. Codes only select add, subtract or skip;
/// T needs operator+ and operator- and a value-initialized zero.
template <typename T>
T accumulate_packed(std::span<const T> act, std::span<const std::uint8_t> packed, std::size_t count) {
  T acc{};
  std::size_t k = 0;
  for (std::uint8_t byte : packed) {
    for (int slot = 0; slot < 4 && k < count; ++slot, ++k) {
      switch ((byte >> (6 - 2 * slot)) & 0b11) {
        case trit_code::plus: acc = acc + act[k]; break;
        case trit_code::minus: acc = acc - act[k]; break;
        default: break;
      }
    }
  }
  return acc;
}

/// Per-layer setup for forward(): rotation and activation upsampler for one quantized weight.
class ForwardPlan {
 public:
  explicit ForwardPlan(const QuantizedWeight& q)
      : block_(q.block_size),
        blocks_(q.num_blocks()),
        width_up_(q.block_width_up()),
        inv_osr_(static_cast<double>(q.block_size) / static_cast<double>(q.block_width_up())),
        upsample_(q.block_size, q.block_width_up(), NyquistRule::mirror) {
    if (q.hadamard.enabled) rotation_ = HadamardOp::build(q.block_size, q.hadamard.seed);
  }

  /// Rotates each block of one activation row and upsamples it to the codes' width.
  std::vector<double> upsample_activation(std::span<const double> a) const {
    require(a.size() == block_ * blocks_, "activation width does not match the quantized weight");
    std::vector<double> out(width_up_ * blocks_);
    std::vector<double> blk(block_);
    for (std::size_t b = 0; b < blocks_; ++b) {
      std::copy_n(a.begin() + static_cast<std::ptrdiff_t>(b * block_), block_, blk.begin());
      if (rotation_) rotation_->apply_right(blk);
      upsample_.apply(blk, std::span<double>(out).subspan(b * width_up_, width_up_));
    }
    return out;
  }

  double inv_osr() const { return inv_osr_; }

 private:
  std::size_t block_;
  std::size_t blocks_;
  std::size_t width_up_;
  double inv_osr_;
  ResamplePlan upsample_;
  std::optional<HadamardOp> rotation_;
};

/// Add-only forward pass: out[a, r] = (scale_r / osr) * sum_k up(A)[a, k] * code[r, k].
///
/// Activations are upsampled with the mirrored Nyquist rule, which is osr times the transpose
/// of the downsampling used by reconstruct(); the 1/osr factor then makes this equal to
/// A * reconstruct(q)^T for integer and fractional OSR alike.
inline FloatMatrix forward(const QuantizedWeight& q, const FloatMatrix& a, std::size_t threads = 1) {
  q.validate();
  require(a.cols() == static_cast<Eigen::Index>(q.cols_orig),
          "activations have " + std::to_string(a.cols()) + " columns, weight expects " + std::to_string(q.cols_orig));
  if (!all_finite(a)) throw InvariantError("activations contain non-finite values");
  const ForwardPlan plan(q);
  FloatMatrix out(a.rows(), q.rows);
  parallel_for(static_cast<std::size_t>(a.rows()), threads, [&](std::size_t i) {
    const std::vector<double> up = plan.upsample_activation(row_span(a, static_cast<Eigen::Index>(i)));
    for (std::size_t r = 0; r < q.rows; ++r) {
      const double acc = accumulate_packed<double>(up, q.packed_row(r), q.cols_up);
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) = q.row_scales[r] * plan.inv_osr() * acc;
    }
  });
  return out;
}

/// Dense oracle: A * reconstruct(q)^T.
inline FloatMatrix forward_reference(const QuantizedWeight& q, const FloatMatrix& a, std::size_t threads = 1) {
  require(a.cols() == static_cast<Eigen::Index>(q.cols_orig),
          "activations have " + std::to_string(a.cols()) + " columns, weight expects " + std::to_string(q.cols_orig));
  return a * reconstruct(q, threads).transpose();
}

/// max |f - r| / max |r|; 0 when both are zero.
inline double max_relative_error(const FloatMatrix& f, const FloatMatrix& r) {
  require(f.rows() == r.rows() && f.cols() == r.cols(), "shape mismatch");
  const double denom = r.cwiseAbs().maxCoeff();
  const double diff = (f - r).cwiseAbs().maxCoeff();
  if (denom == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / denom;
}

}  // namespace sdq
