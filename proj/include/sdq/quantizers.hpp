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
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sdq/errors.hpp"

namespace sdq {

/// Baseline quantizer description. `threshold_fraction` only applies to ternary.
struct QuantizerSpec {
  enum class Kind { rtn, binary, ternary };

  Kind kind = Kind::ternary;
  int bits = 2;
  double threshold_fraction = 0.5;

  static QuantizerSpec rtn(int bits) { return {Kind::rtn, bits, 0.5}; }
  static QuantizerSpec binary() { return {Kind::binary, 1, 0.5}; }
  static QuantizerSpec ternary(double fraction = 0.5) { return {Kind::ternary, 2, fraction}; }

  void validate() const {
    if (kind == Kind::rtn) require(bits >= 2 && bits <= 8, "rtn bits must lie in [2, 8]");
    require(threshold_fraction > 0.0 && threshold_fraction < 1.0, "threshold_fraction must lie in (0, 1)");
  }
};

struct BinarizeResult {
  std::vector<std::int8_t> symbols;
  double alpha = 0.0;
};

struct TernarizeResult {
  std::vector<std::int8_t> symbols;
  double alpha = 0.0;
  double theta = 0.0;
};

inline double mean_abs(std::span<const double> row) {
  if (row.empty()) return 0.0;
  double sum = 0.0;
  for (double v : row) sum += std::abs(v);
  return sum / static_cast<double>(row.size());
}

inline double max_abs(std::span<const double> row) {
  double m = 0.0;
  for (double v : row) m = std::max(m, std::abs(v));
  return m;
}

// sign(0) = +1.
inline std::int8_t sign_symbol(double x) { return x >= 0.0 ? 1 : -1; }

// +1 above theta, -1 below -theta, 0 on the closed interval [-theta, theta].
inline std::int8_t ternary_symbol(double x, double theta) {
  if (x > theta) return 1;
  if (x < -theta) return -1;
  return 0;
}

/// Symmetric round-to-nearest: delta * round(x / delta), delta = max|x| / 2^(bits-1).
/// Ties round away from zero. An all-zero row passes through unchanged.
inline std::vector<double> rtn_quantize(std::span<const double> row, int bits) {
  require(!row.empty(), "rtn_quantize: empty row");
  require(bits >= 2 && bits <= 8, "rtn bits must lie in [2, 8]");
  const double peak = max_abs(row);
  std::vector<double> out(row.size(), 0.0);
  if (peak == 0.0) return out;
  const double delta = std::ldexp(peak, -(bits - 1));
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = delta * std::round(row[i] / delta);
  return out;
}

inline BinarizeResult binarize(std::span<const double> row) {
  require(!row.empty(), "binarize: empty row");
  BinarizeResult r;
  r.alpha = mean_abs(row);
  r.symbols.reserve(row.size());
  for (double v : row) r.symbols.push_back(sign_symbol(v));
  return r;
}

inline TernarizeResult ternarize(std::span<const double> row, double threshold_fraction = 0.5) {
  require(!row.empty(), "ternarize: empty row");
  require(threshold_fraction > 0.0 && threshold_fraction < 1.0, "threshold_fraction must lie in (0, 1)");
  TernarizeResult r;
  r.alpha = mean_abs(row);
  r.theta = threshold_fraction * r.alpha;
  r.symbols.reserve(row.size());
  for (double v : row) r.symbols.push_back(ternary_symbol(v, r.theta));
  return r;
}

}  // namespace sdq
