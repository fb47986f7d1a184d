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

#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>

#include "sdq/errors.hpp"
#include "sdq/quantizers.hpp"
#include "sdq/tensor_io.hpp"

namespace sdq {

/// Recurrence used by the modulator.
enum class LoopForm {
  // i_n = i_{n-1} + x_n - y_{n-1}: first-order Sigma-Delta with noise shaping.
  eq7,
  // i_n = x_n - y_{n-1}: the integrator-free variant (a delta modulator), kept for comparison.
  alg1,
};

inline const char* to_string(LoopForm form) { return form == LoopForm::eq7 ? "eq7" : "alg1"; }

struct SigmaDeltaState {
  double integrator = 0.0;
  double previous_output = 0.0;
};

/// Unit-level quantizer inside the loop: sign for binary, {-1,0,+1} with threshold theta for ternary.
struct UnitQuantizer {
  QuantizerKind kind = QuantizerKind::ternary;
  double theta = 0.0;

  std::int8_t operator()(double v) const {
    return kind == QuantizerKind::binary ? sign_symbol(v) : ternary_symbol(v, theta);
  }
};

/// Ternary threshold is half the mean magnitude of the normalized row.
inline UnitQuantizer unit_quantizer_for(std::span<const double> normalized, QuantizerKind kind) {
  UnitQuantizer q{kind, 0.0};
  if (kind == QuantizerKind::ternary) q.theta = 0.5 * mean_abs(normalized);
  return q;
}

/// Runs the modulator over x (|x_n| <= 1 expected) and writes one symbol per sample.
/// For eq7 on unit-bounded input the integrator stays within [-2, 2].
inline void sigma_delta_modulate(std::span<const double> x, const UnitQuantizer& quant, LoopForm form,
                                 std::span<std::int8_t> y, SigmaDeltaState& state) {
  require(x.size() == y.size(), "sigma-delta: input and output lengths differ");
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double base = form == LoopForm::eq7 ? state.integrator : 0.0;
    state.integrator = base + x[n] - state.previous_output;
    assert(form != LoopForm::eq7 || std::abs(state.integrator) <= 2.0 + 1e-9);
    y[n] = quant(state.integrator);
    state.previous_output = y[n];
  }
}

inline void sigma_delta_modulate(std::span<const double> x, const UnitQuantizer& quant, LoopForm form,
                                 std::span<std::int8_t> y) {
  SigmaDeltaState state;
  sigma_delta_modulate(x, quant, form, y, state);
}

}  // namespace sdq
