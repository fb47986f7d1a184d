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
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "sdq/engine.hpp"
#include "sdq/errors.hpp"
#include "sdq/fft.hpp"
#include "sdq/matrix.hpp"
#include "sdq/resampler.hpp"
#include "sdq/tensor_io.hpp"

namespace sdq {

/// Effective bits per stored symbol used for storage accounting.
inline double effective_bits(QuantizerKind kind) { return kind == QuantizerKind::binary ? 1.0 : 1.58; }

/// eta = bits * osr / 16 for an arbitrary per-symbol rate.
inline double compression_ratio_bits(double bits, double osr) {
  require(osr >= 1.0, "osr must be >= 1");
  require(bits > 0.0, "bits must be > 0");
  return bits * osr / 16.0;
}

/// Quantized-to-FP16 storage ratio eta = N * osr / 16. With include_scales, one 32-bit scale
/// per row is charged against the FP16 matrix as well.
inline double compression_ratio(QuantizerKind kind, double osr, bool include_scales = false, std::size_t rows = 1,
                                std::size_t cols = 1) {
  double eta = compression_ratio_bits(effective_bits(kind), osr);
  if (include_scales) {
    require(rows >= 1 && cols >= 1, "rows and cols must be >= 1");
    eta += 32.0 * static_cast<double>(rows) / (16.0 * static_cast<double>(rows) * static_cast<double>(cols));
  }
  return eta;
}

struct ErrorReport {
  double frobenius_rel = 0.0;
  double max_abs = 0.0;
  std::optional<double> output_frobenius_rel;
};

inline double relative_frobenius(const FloatMatrix& approx, const FloatMatrix& exact) {
  const double denom = exact.norm();
  const double num = (exact - approx).norm();
  if (denom == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / denom;
}

/// ||X (W - W_hat)^T||_F / ||X W^T||_F
inline double output_relative_error(const FloatMatrix& w, const FloatMatrix& w_hat, const FloatMatrix& x) {
  require(x.cols() == w.cols(), "activation width does not match weight columns");
  return relative_frobenius(x * w_hat.transpose(), x * w.transpose());
}

inline ErrorReport error_report(const FloatMatrix& w, const FloatMatrix& w_hat, const FloatMatrix* x = nullptr) {
  require(w.rows() == w_hat.rows() && w.cols() == w_hat.cols(), "error_report: shape mismatch");
  ErrorReport r;
  r.frobenius_rel = relative_frobenius(w_hat, w);
  r.max_abs = (w - w_hat).cwiseAbs().maxCoeff();
  if (x != nullptr) r.output_frobenius_rel = output_relative_error(w, w_hat, *x);
  return r;
}

inline ErrorReport error_report(const FloatMatrix& w, const QuantizedWeight& q, const FloatMatrix* x = nullptr) {
  require(w.rows() == static_cast<Eigen::Index>(q.rows) && w.cols() == static_cast<Eigen::Index>(q.cols_orig),
          "error_report: quantized weight shape does not match");
  return error_report(w, reconstruct(q), x);
}

// ---------------------------------------------------------------------------
// Spectra
// ---------------------------------------------------------------------------

struct SpectrumReport {
  std::vector<double> band_edges;  // n_bands + 1 normalized frequencies in [0, 0.5]
  std::vector<double> signal_energy;
  std::vector<double> error_energy;
  double total_error_energy = 0.0;
  double low_half_energy = 0.0;   // |f| < 0.25
  double high_half_energy = 0.0;  // |f| >= 0.25
  double in_band_fraction = 0.0;  // share of error energy with |f| <= 1 / (2 osr)
};

/// Per-bin energies |X_k|^2 / N of a real sequence; they sum to sum(x^2).
inline std::vector<double> bin_energies(std::span<const double> x) {
  std::vector<std::complex<double>> t(x.begin(), x.end()), f(x.size());
  dft(t, f);
  std::vector<double> e(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) e[k] = std::norm(f[k]) / static_cast<double>(x.size());
  return e;
}

// |f| of bin k for a length-n transform.
inline double bin_frequency(std::size_t k, std::size_t n) {
  return static_cast<double>(std::min(k, n - k)) / static_cast<double>(n);
}

/// Error spectrum of scale * y - upsample(w) binned into n_bands equal bands of [0, 0.5].
inline SpectrumReport spectrum_report(std::span<const double> w_row, std::span<const std::int8_t> symbols,
                                      double scale, double osr, std::size_t n_bands = 32) {
  require(!w_row.empty() && !symbols.empty(), "spectrum_report: empty input");
  require(n_bands >= 1, "spectrum_report: n_bands must be >= 1");
  require(osr >= 1.0, "osr must be >= 1");
  const std::size_t len = symbols.size();
  const std::vector<double> signal = resample_row(w_row, len);
  std::vector<double> err(len);
  for (std::size_t i = 0; i < len; ++i) err[i] = scale * symbols[i] - signal[i];

  SpectrumReport rep;
  rep.band_edges.resize(n_bands + 1);
  for (std::size_t b = 0; b <= n_bands; ++b) rep.band_edges[b] = 0.5 * static_cast<double>(b) / n_bands;
  rep.signal_energy.assign(n_bands, 0.0);
  rep.error_energy.assign(n_bands, 0.0);

  const auto es = bin_energies(signal);
  const auto ee = bin_energies(err);
  const double in_band_edge = 0.5 / osr;
  double in_band = 0.0;
  for (std::size_t k = 0; k < len; ++k) {
    const double f = bin_frequency(k, len);
    const auto band = std::min(n_bands - 1, static_cast<std::size_t>(f * 2.0 * static_cast<double>(n_bands)));
    rep.signal_energy[band] += es[k];
    rep.error_energy[band] += ee[k];
    rep.total_error_energy += ee[k];
    (f < 0.25 ? rep.low_half_energy : rep.high_half_energy) += ee[k];
    if (f <= in_band_edge + 1e-12) in_band += ee[k];
  }
  rep.in_band_fraction = rep.total_error_energy > 0.0 ? std::min(1.0, in_band / rep.total_error_energy) : 0.0;
  return rep;
}

/// Time-domain inner product sum a_n b_n.
inline double inner_product_time(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "inner product: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// (1/N) sum_k A_k conj(B_k), which equals the time-domain inner product for real a, b.
inline double inner_product_frequency(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "inner product: length mismatch");
  const std::size_t n = a.size();
  std::vector<std::complex<double>> ta(a.begin(), a.end()), tb(b.begin(), b.end()), fa(n), fb(n);
  dft(ta, fa);
  dft(tb, fb);
  std::complex<double> s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += fa[k] * std::conj(fb[k]);
  return s.real() / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// OSR sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  double osr = 1.0;
  double eta = 0.0;
  double frob_rel = 0.0;
  double out_rel = 0.0;
};

inline std::vector<SweepRow> osr_sweep(const FloatMatrix& w, const FloatMatrix& x, const QuantizeConfig& base,
                                       std::span<const double> osr_list) {
  require(!osr_list.empty(), "osr list must be non-empty");
  require(std::is_sorted(osr_list.begin(), osr_list.end()), "osr list must be sorted ascending");
  std::vector<SweepRow> rows;
  rows.reserve(osr_list.size());
  for (double osr : osr_list) {
    QuantizeConfig cfg = base;
    cfg.osr = osr;
    const QuantizedWeight q = quantize_matrix(w, x, cfg);
    const FloatMatrix w_hat = reconstruct(q, cfg.threads);
    rows.push_back({osr, compression_ratio(cfg.kind, osr), relative_frobenius(w_hat, w),
                    output_relative_error(w, w_hat, x)});
  }
  return rows;
}

inline constexpr const char* kSweepCsvHeader = "osr,eta,frob_rel,out_rel";

inline void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << kSweepCsvHeader << '\n';
  out.precision(17);
  for (const auto& r : rows) out << r.osr << ',' << r.eta << ',' << r.frob_rel << ',' << r.out_rel << '\n';
}

}  // namespace sdq
