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

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdq/errors.hpp"
#include "sdq/hadamard.hpp"
#include "sdq/hessian.hpp"
#include "sdq/matrix.hpp"
#include "sdq/parallel.hpp"
#include "sdq/resampler.hpp"
#include "sdq/sigma_delta.hpp"
#include "sdq/tensor_io.hpp"

namespace sdq {

/// How a finished block's error is pushed into the not-yet-quantized columns.
enum class Propagation {
  // W_rest -= E * U_bb^{-1} * U_{b,rest}: the exact least-squares update for the remaining columns.
  block_solve,
  // W_rest -= E * U_{b,rest}, without normalizing by the diagonal block.
  literal,
};

struct QuantizeConfig {
  double osr = 2.0;
  QuantizerKind kind = QuantizerKind::ternary;
  std::size_t block_size = 128;
  HadamardSetting hadamard{true, 0};
  double lambda_fraction = 0.01;
  bool compensation = true;
  LoopForm loop_form = LoopForm::eq7;
  Propagation propagation = Propagation::block_solve;
  std::size_t threads = 1;

  void validate(std::size_t cols) const {
    require(std::isfinite(osr) && osr >= 1.0, "osr must be >= 1 (got " + std::to_string(osr) + ")");
    require(block_size >= 1, "block size must be >= 1");
    require(cols % block_size == 0, "block size " + std::to_string(block_size) + " does not divide " +
                                        std::to_string(cols) + " columns");
    require(!hadamard.enabled || std::has_single_bit(block_size),
            "block size must be a power of two when hadamard is on");
    require(std::isfinite(lambda_fraction) && lambda_fraction >= 0.0, "lambda fraction must be >= 0");
    require(threads >= 1, "threads must be >= 1");
  }
};

/// Output of quantizing one column block.
struct BlockQuantization {
  std::size_t width_up = 0;
  std::vector<std::int8_t> symbols;  // rows x width_up, row-major
  std::vector<float> row_scales;
  FloatMatrix down;  // rows x block width: scale * downsample(symbols)
};

namespace detail {

// Smallest float >= s, so that |x / scale| <= 1 holds after the scale is stored in 32 bits.
inline float storable_scale(double s) {
  if (!(s > 0.0)) return 1.0f;
  if (!std::isfinite(s) || s > FLT_MAX) throw NumericError("row scale overflows 32-bit storage");
  float f = static_cast<float>(s);
  if (static_cast<double>(f) < s) f = std::nextafter(f, std::numeric_limits<float>::infinity());
  if (!(f > 0.0f)) f = std::numeric_limits<float>::denorm_min();
  return f;
}

}  // namespace detail

/// Sigma-Delta quantization of a rows x B block at the given OSR.
///
/// Each row is upsampled to round(osr * B), normalized by its scale, modulated with a
/// unit-level quantizer and downsampled back to B for error compensation. Without
/// `fixed_scales`, each row's scale is max|upsampled row| (1 for a zero row). With
/// `fixed_scales`, the given per-row scales are used and normalized samples are clipped to [-1, 1].
inline BlockQuantization sd_quantize_block(const FloatMatrix& block, double osr, QuantizerKind kind,
                                           LoopForm form = LoopForm::eq7, std::span<const float> fixed_scales = {},
                                           std::size_t threads = 1) {
  require(std::isfinite(osr) && osr >= 1.0, "osr must be >= 1");
  require(block.rows() >= 1 && block.cols() >= 1, "block must be non-empty");
  require(fixed_scales.empty() || fixed_scales.size() == static_cast<std::size_t>(block.rows()),
          "fixed scales must hold one value per row");
  if (!all_finite(block)) throw InvariantError("block contains non-finite values");

  const auto rows = static_cast<std::size_t>(block.rows());
  const auto width = static_cast<std::size_t>(block.cols());
  BlockQuantization out;
  out.width_up = scaled_length(width, osr);
  out.symbols.assign(rows * out.width_up, 0);
  out.row_scales.assign(rows, 1.0f);
  out.down.resize(block.rows(), block.cols());

  const ResamplePlan up(width, out.width_up);
  const ResamplePlan down(out.width_up, width);

  parallel_for(rows, threads, [&](std::size_t r) {
    std::vector<double> x = up(row_span(block, static_cast<Eigen::Index>(r)));
    const float scale = fixed_scales.empty() ? detail::storable_scale(max_abs(x)) : fixed_scales[r];
    const double s = scale;
    for (double& v : x) v = std::clamp(v / s, -1.0, 1.0);

    auto y = std::span<std::int8_t>(out.symbols).subspan(r * out.width_up, out.width_up);
    sigma_delta_modulate(x, unit_quantizer_for(x, kind), form, y);

    std::vector<double> yd(y.begin(), y.end());
    auto dst = row_span(out.down, static_cast<Eigen::Index>(r));
    down.apply(yd, dst);
    for (double& v : dst) v *= s;
    out.row_scales[r] = scale;
  });
  return out;
}

/// Per-row scale for a whole matrix: the largest upsampled magnitude over all blocks.
inline std::vector<float> matrix_row_scales(const FloatMatrix& w, std::size_t block_size, double osr,
                                            std::size_t threads = 1) {
  const auto width = block_size;
  const ResamplePlan up(width, scaled_length(width, osr));
  std::vector<float> scales(static_cast<std::size_t>(w.rows()));
  parallel_for(scales.size(), threads, [&](std::size_t r) {
    auto row = row_span(w, static_cast<Eigen::Index>(r));
    double peak = 0.0;
    for (std::size_t c = 0; c < row.size(); c += width) peak = std::max(peak, max_abs(up(row.subspan(c, width))));
    scales[r] = detail::storable_scale(peak);
  });
  return scales;
}

/// Block-wise Sigma-Delta quantization with error compensation.
///
/// Blocks are processed left to right. With hadamard on, W and the Hessian are both in the
/// rotated domain; stored symbols stay rotated and reconstruct() undoes the rotation.
inline QuantizedWeight quantize_matrix(const FloatMatrix& w, const std::optional<HessianContext>& hessian,
                                       const QuantizeConfig& cfg) {
  require(w.rows() >= 1 && w.cols() >= 1, "weight matrix must be non-empty");
  if (!all_finite(w)) throw InvariantError("weight matrix contains non-finite values");
  const auto cols = static_cast<std::size_t>(w.cols());
  cfg.validate(cols);
  require(!cfg.compensation || hessian.has_value(), "compensation requires a Hessian context");
  if (cfg.compensation) {
    require(hessian->dim() == w.cols(), "Hessian dimension " + std::to_string(hessian->dim()) +
                                            " does not match " + std::to_string(cols) + " weight columns");
    require(hessian->rotation.enabled == cfg.hadamard.enabled &&
                (!cfg.hadamard.enabled ||
                 (hessian->rotation.seed == cfg.hadamard.seed && hessian->rotation_block == cfg.block_size)),
            "Hessian was built for a different Hadamard rotation or block size");
  }

  const std::size_t b = cfg.block_size;
  const std::size_t blocks = cols / b;
  const auto rows = static_cast<std::size_t>(w.rows());

  FloatMatrix work = w;
  std::optional<HadamardOp> rotation;
  if (cfg.hadamard.enabled) {
    rotation = HadamardOp::build(b, cfg.hadamard.seed);
    rotate_blocks(work, *rotation);
  }
  const std::vector<float> scales = matrix_row_scales(work, b, cfg.osr, cfg.threads);

  const std::size_t width_up = scaled_length(b, cfg.osr);
  const std::size_t cols_up = width_up * blocks;
  std::vector<std::int8_t> symbols(rows * cols_up);

  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const auto c0 = static_cast<Eigen::Index>(blk * b);
    const auto bw = static_cast<Eigen::Index>(b);
    const FloatMatrix block = work.middleCols(c0, bw);
    BlockQuantization q = sd_quantize_block(block, cfg.osr, cfg.kind, cfg.loop_form, scales, cfg.threads);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(q.symbols.begin() + static_cast<std::ptrdiff_t>(r * width_up), width_up,
                  symbols.begin() + static_cast<std::ptrdiff_t>(r * cols_up + blk * width_up));

    const Eigen::Index rest = static_cast<Eigen::Index>(cols) - c0 - bw;
    if (!cfg.compensation || rest == 0) continue;
    const FloatMatrix err = block - q.down;
    const auto& u = hessian->cholesky_upper;
    if (cfg.propagation == Propagation::block_solve) {
      const FloatMatrix gain =
          u.block(c0, c0, bw, bw).triangularView<Eigen::Upper>().solve(u.block(c0, c0 + bw, bw, rest));
      work.rightCols(rest).noalias() -= err * gain;
    } else {
      work.rightCols(rest).noalias() -= err * u.block(c0, c0 + bw, bw, rest);
    }
    if (!all_finite(work)) throw NumericError("error propagation produced non-finite weights");
  }

  return QuantizedWeight::from_symbols(symbols, static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols),
                                       static_cast<std::uint32_t>(cols_up), static_cast<std::uint32_t>(b), cfg.kind,
                                       cfg.hadamard.enabled ? cfg.hadamard : HadamardSetting{}, scales);
}

/// Quantizes W against calibration activations X, building the Hessian in the matching domain.
inline QuantizedWeight quantize_matrix(const FloatMatrix& w, const FloatMatrix& calib, const QuantizeConfig& cfg) {
  cfg.validate(static_cast<std::size_t>(w.cols()));
  std::optional<HessianContext> hessian;
  if (cfg.compensation) {
    require(calib.cols() == w.cols(), "calibration activations have " + std::to_string(calib.cols()) +
                                          " columns, weights have " + std::to_string(w.cols()));
    std::optional<HadamardOp> rotation;
    if (cfg.hadamard.enabled) rotation = HadamardOp::build(cfg.block_size, cfg.hadamard.seed);
    hessian = build_hessian(calib, cfg.lambda_fraction, rotation);
  }
  return quantize_matrix(w, hessian, cfg);
}

/// Dense surrogate of a quantized weight: scaled, downsampled symbols rotated back per block.
inline FloatMatrix reconstruct(const QuantizedWeight& q, std::size_t threads = 1) {
  q.validate();
  const std::size_t b = q.block_size;
  const std::size_t blocks = q.num_blocks();
  const std::size_t width_up = q.block_width_up();
  const ResamplePlan down(width_up, b);
  std::optional<HadamardOp> rotation;
  if (q.hadamard.enabled) rotation = HadamardOp::build(b, q.hadamard.seed);

  FloatMatrix out(q.rows, q.cols_orig);
  parallel_for(q.rows, threads, [&](std::size_t r) {
    const std::vector<std::int8_t> sym = q.unpack_row(r);
    auto dst_row = row_span(out, static_cast<Eigen::Index>(r));
    const double s = q.row_scales[r];
    std::vector<double> y(width_up);
    for (std::size_t blk = 0; blk < blocks; ++blk) {
      std::copy_n(sym.begin() + static_cast<std::ptrdiff_t>(blk * width_up), width_up, y.begin());
      auto dst = dst_row.subspan(blk * b, b);
      down.apply(y, dst);
      for (double& v : dst) v *= s;
      if (rotation) rotation->apply_right_transpose(dst);
    }
  });
  return out;
}

}  // namespace sdq
