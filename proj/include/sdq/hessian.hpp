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

#include <Eigen/Cholesky>

#include <cstddef>
#include <optional>
#include <string>

#include "sdq/errors.hpp"
#include "sdq/hadamard.hpp"
#include "sdq/matrix.hpp"
#include "sdq/tensor_io.hpp"

namespace sdq {

/// Upper Cholesky factor U of (2 X^T X + lambda I)^{-1}, so that U^T U equals the damped inverse Hessian.
struct HessianContext {
  FloatMatrix cholesky_upper;
  double lambda = 0.0;
  std::size_t n_samples = 0;
  // Rotation the calibration activations were passed through, if any.
  HadamardSetting rotation;
  std::size_t rotation_block = 0;

  Eigen::Index dim() const { return cholesky_upper.rows(); }
};

inline constexpr int kDampingRetries = 3;

/// Builds the compensation context from calibration activations X (samples x cols).
/// When `rotation` is given, every block of X columns is multiplied by it first, so the
/// Hessian lives in the same rotated coordinates as the weights being quantized.
/// Factorization failures escalate lambda by 10x up to kDampingRetries times.
inline HessianContext build_hessian(const FloatMatrix& x, double lambda_fraction,
                                    const std::optional<HadamardOp>& rotation = std::nullopt) {
  require(x.rows() >= 1 && x.cols() >= 1, "calibration activations must be non-empty");
  require(std::isfinite(lambda_fraction) && lambda_fraction >= 0.0, "lambda fraction must be finite and >= 0");
  if (!all_finite(x)) throw InvariantError("calibration activations contain non-finite values");

  HessianContext ctx;
  ctx.n_samples = static_cast<std::size_t>(x.rows());

  FloatMatrix h;
  if (rotation) {
    FloatMatrix xr = x;
    rotate_blocks(xr, *rotation);
    h = 2.0 * (xr.transpose() * xr);
    ctx.rotation = {true, rotation->seed()};
    ctx.rotation_block = rotation->size();
  } else {
    h = 2.0 * (x.transpose() * x);
  }
  const Eigen::Index d = h.rows();
  const double mean_diag = h.diagonal().mean();
  double lambda = lambda_fraction * mean_diag;

  for (int attempt = 0; attempt <= kDampingRetries; ++attempt) {
    if (attempt > 0) lambda = lambda > 0.0 ? 10.0 * lambda : 0.01 * (mean_diag > 0.0 ? mean_diag : 1.0);
    FloatMatrix damped = h;
    damped.diagonal().array() += lambda;
    Eigen::LLT<FloatMatrix> forward(damped);
    if (forward.info() != Eigen::Success) continue;
    FloatMatrix inverse = forward.solve(FloatMatrix::Identity(d, d));
    inverse = 0.5 * (inverse + inverse.transpose()).eval();
    Eigen::LLT<FloatMatrix> inv_factor(inverse);
    if (inv_factor.info() != Eigen::Success) continue;
    FloatMatrix upper = inv_factor.matrixU();
    if (!all_finite(upper) || (upper.diagonal().array() <= 0.0).any()) continue;
    ctx.cholesky_upper = std::move(upper);
    ctx.lambda = lambda;
    return ctx;
  }
  throw NumericError("Cholesky factorization failed after " + std::to_string(kDampingRetries) +
                     " damping escalations (last lambda " + std::to_string(lambda) + ")");
}

/// Context whose inverse-Hessian factor is the identity: no error propagation between blocks.
/// The identity is rotation invariant, so it may be tagged with any rotation.
inline HessianContext identity_hessian(std::size_t dim, HadamardSetting rotation = {}, std::size_t rotation_block = 0) {
  HessianContext ctx;
  ctx.rotation = rotation;
  ctx.rotation_block = rotation_block;
  ctx.cholesky_upper = FloatMatrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  return ctx;
}

}  // namespace sdq
