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
#include <complex>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "sdq/errors.hpp"
#include "sdq/fft.hpp"
#include "sdq/matrix.hpp"
#include "sdq/parallel.hpp"

namespace sdq {

/// round(osr * len) with ties to even.
inline std::size_t scaled_length(std::size_t len, double osr) {
  const double x = osr * static_cast<double>(len);
  const double f = std::floor(x);
  const double frac = x - f;
  double r = f;
  if (frac > 0.5 || (frac == 0.5 && std::fmod(f, 2.0) != 0.0)) r = f + 1.0;
  return static_cast<std::size_t>(r);
}

/// Handling of the Nyquist bin of the shorter spectrum when lengthening an even-length row.
enum class NyquistRule {
  // Halve the bin and place it at both mirrored positions. down(up(x)) == x.
  split,
  // Copy the full bin to both mirrored positions. Upsampling becomes (len_out / len_in) times the
  // transpose of downsampling, so <up(a), y> == (len_out / len_in) * <a, down(y)> for every y.
  mirror,
};

/// Fourier-domain resampling of rows from len_in to len_out samples.
///
/// The spectrum keeps bins [0, N/2] and the top N - N/2 - 1 negative bins, N = min(len_in, len_out).
/// For even N the Nyquist bin of the shorter spectrum is summed with its mirror when shrinking and
/// split (or mirrored) when growing. The result is scaled by len_out / len_in, so means are preserved.
class ResamplePlan {
 public:
  ResamplePlan(std::size_t len_in, std::size_t len_out, NyquistRule rule = NyquistRule::split)
      : len_in_(len_in), len_out_(len_out), rule_(rule) {
    require(len_in >= 1 && len_out >= 1, "resample lengths must be >= 1");
    if (len_in_ != len_out_) {
      // Warm the plan cache so apply() never plans under contention.
      std::vector<std::complex<double>> a(len_in_), b(len_in_), c(len_out_), d(len_out_);
      dft(a, b);
      dft(c, d, true);
    }
  }

  std::size_t len_in() const { return len_in_; }
  std::size_t len_out() const { return len_out_; }
  NyquistRule rule() const { return rule_; }

  void apply(std::span<const double> in, std::span<double> out) const {
    require(in.size() == len_in_ && out.size() == len_out_, "resample: buffer length mismatch");
    if (!all_finite(in)) throw InvariantError("resample: non-finite input");
    if (len_in_ == len_out_) {
      std::copy(in.begin(), in.end(), out.begin());
      return;
    }
    const std::size_t n = len_in_;
    const std::size_t m = len_out_;
    const std::size_t shorter = std::min(n, m);
    const std::size_t nyq = shorter / 2;

    std::vector<std::complex<double>> time_in(in.begin(), in.end());
    std::vector<std::complex<double>> spec_in(n);
    dft(time_in, spec_in);

    std::vector<std::complex<double>> spec_out(m);
    for (std::size_t k = 0; k <= nyq; ++k) spec_out[k] = spec_in[k];
    for (std::size_t j = 1; j < shorter - nyq; ++j) spec_out[m - j] = spec_in[n - j];
    if (shorter % 2 == 0) {
      if (m < n) {
        spec_out[nyq] += spec_in[n - nyq];
      } else {
        const std::complex<double> bin = rule_ == NyquistRule::split ? 0.5 * spec_in[nyq] : spec_in[nyq];
        spec_out[nyq] = bin;
        spec_out[m - nyq] = bin;
      }
    }

    std::vector<std::complex<double>> time_out(m);
    dft(spec_out, time_out, true);
    // ifft carries 1/m; the resample gain is m/n.
    const double gain = 1.0 / static_cast<double>(n);
    double peak = 0.0;
    double residue = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      out[i] = time_out[i].real() * gain;
      peak = std::max(peak, std::abs(out[i]));
      residue = std::max(residue, std::abs(time_out[i].imag() * gain));
    }
    if (residue > 1e-9 * std::max(peak, std::numeric_limits<double>::min()) && residue > 0.0)
      throw NumericError("resample: imaginary residue " + std::to_string(residue) + " exceeds tolerance");
  }

  std::vector<double> operator()(std::span<const double> in) const {
    std::vector<double> out(len_out_);
    apply(in, out);
    return out;
  }

 private:
  std::size_t len_in_;
  std::size_t len_out_;
  NyquistRule rule_;
};

inline std::vector<double> resample_row(std::span<const double> w, std::size_t len_out,
                                        NyquistRule rule = NyquistRule::split) {
  return ResamplePlan(w.size(), len_out, rule)(w);
}

inline FloatMatrix resample_matrix(const FloatMatrix& w, std::size_t len_out, std::size_t threads = 1) {
  const ResamplePlan plan(static_cast<std::size_t>(w.cols()), len_out);
  FloatMatrix out(w.rows(), static_cast<Eigen::Index>(len_out));
  parallel_for(static_cast<std::size_t>(w.rows()), threads, [&](std::size_t r) {
    plan.apply(row_span(w, static_cast<Eigen::Index>(r)), row_span(out, static_cast<Eigen::Index>(r)));
  });
  return out;
}

}  // namespace sdq
