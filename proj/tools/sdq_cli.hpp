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

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sdq/sdq.hpp"

namespace sdq::cli {

enum ExitCode : int { kOk = 0, kUnexpected = 1, kUsage = 2, kFormat = 3, kNumeric = 4 };

// Shared quantization flags.
struct QuantizeFlags {
  double osr = 2.0;
  std::string quantizer = "ternary";
  std::size_t block_size = 128;
  std::string hadamard = "on";
  std::uint64_t seed = 0;
  double lambda_frac = 0.01;
  std::string compensation = "on";
  std::string loop_form = "eq7";
  std::string propagation = "block-solve";

  void add_to(CLI::App& cmd, bool with_osr) {
    if (with_osr)
      cmd.add_option("--osr", osr, "Over-sampling ratio (>= 1)")
          ->check(CLI::Validator(
              [](std::string& v) -> std::string {
                try {
                  return std::stod(v) >= 1.0 ? "" : "osr must be >= 1 (got " + v + ")";
                } catch (const std::exception&) {
                  return "osr must be a number >= 1";
                }
              },
              "REAL>=1"));
    cmd.add_option("--quantizer", quantizer, "Symbol alphabet")->check(CLI::IsMember({"binary", "ternary"}));
    cmd.add_option("--block-size", block_size, "Columns per compensation block")->check(CLI::PositiveNumber);
    cmd.add_option("--hadamard", hadamard, "Randomized Hadamard smoothing")->check(CLI::IsMember({"on", "off"}));
    cmd.add_option("--seed", seed, "Seed of the Hadamard sign diagonal");
    cmd.add_option("--lambda-frac", lambda_frac, "Damping as a fraction of the mean Hessian diagonal")
        ->check(CLI::NonNegativeNumber);
    cmd.add_option("--compensation", compensation, "Block error compensation")->check(CLI::IsMember({"on", "off"}));
    cmd.add_option("--loop-form", loop_form, "Modulator recurrence")->check(CLI::IsMember({"eq7", "alg1"}));
    cmd.add_option("--propagation", propagation, "Compensation update")
        ->check(CLI::IsMember({"block-solve", "literal"}));
  }

  QuantizeConfig config(std::size_t threads) const {
    QuantizeConfig c;
    c.osr = osr;
    c.kind = quantizer == "binary" ? QuantizerKind::binary : QuantizerKind::ternary;
    c.block_size = block_size;
    c.hadamard = {hadamard == "on", seed};
    c.lambda_fraction = lambda_frac;
    c.compensation = compensation == "on";
    c.loop_form = loop_form == "alg1" ? LoopForm::alg1 : LoopForm::eq7;
    c.propagation = propagation == "literal" ? Propagation::literal : Propagation::block_solve;
    c.threads = threads;
    return c;
  }
};

inline FloatMatrix standard_normal(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist;
  FloatMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(dist(gen));
  return m;
}

/// Either a SDQT path or "synthetic:<rows>:<seed>" (standard-normal, `cols` wide).
inline FloatMatrix load_activations(const std::string& spec, std::size_t cols) {
  const std::string prefix = "synthetic:";
  if (spec.rfind(prefix, 0) == 0) {
    const std::string rest = spec.substr(prefix.size());
    const auto colon = rest.find(':');
    std::size_t rows = 0;
    std::uint64_t seed = 0;
    try {
      rows = std::stoul(rest.substr(0, colon));
      seed = colon == std::string::npos ? 0 : std::stoull(rest.substr(colon + 1));
    } catch (const std::exception&) {
      throw InvariantError("expected synthetic:<rows>:<seed>, got '" + spec + "'");
    }
    require(rows >= 1, "synthetic activations need at least one row");
    return standard_normal(rows, cols, seed);
  }
  FloatMatrix x = load_float(spec);
  require(static_cast<std::size_t>(x.cols()) == cols, "activations in '" + spec + "' have " +
                                                          std::to_string(x.cols()) + " columns, expected " +
                                                          std::to_string(cols));
  return x;
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f << text;
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

/// Entry point shared by the `sdq` executable and in-process tests.
/// Standard output carries key=value lines only; prose goes to `err`.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Sigma-Delta low-bit weight quantization toolkit", "sdq"};
  app.fallthrough();
  app.require_subcommand(1);
  std::size_t threads = default_threads();
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  // quantize
  auto* quantize = app.add_subcommand("quantize", "Quantize one weight matrix into an SDQW file");
  QuantizeFlags qflags;
  std::string weights_path, calib_spec, out_path;
  quantize->add_option("--weights", weights_path, "SDQT weight matrix")->required();
  quantize->add_option("--calib", calib_spec, "SDQT activations or synthetic:<rows>:<seed>");
  quantize->add_option("--out", out_path, "Output SDQW path")->required();
  qflags.add_to(*quantize, true);

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "Allocate per-module OSR from weight variance");
  std::string manifest_path, plan_path;
  double target_osr = 2.0;
  PlanOptions popt;
  plan_cmd->add_option("--manifest", manifest_path, "Module manifest (JSON)")->required();
  plan_cmd->add_option("--target-osr", target_osr, "Parameter-weighted average OSR")->required();
  plan_cmd->add_option("--osr-min", popt.osr_min, "Lower OSR bound");
  plan_cmd->add_option("--osr-max", popt.osr_max, "Upper OSR bound");
  plan_cmd->add_option("--gamma", popt.gamma, "Sensitivity exponent");
  plan_cmd->add_option("--out", plan_path, "Output plan (JSON)")->required();

  // quantize-batch
  auto* batch = app.add_subcommand("quantize-batch", "Quantize every manifest module at its planned OSR");
  QuantizeFlags bflags;
  std::string out_dir;
  batch->add_option("--manifest", manifest_path, "Module manifest (JSON)")->required();
  batch->add_option("--plan", plan_path, "Plan produced by `sdq plan`")->required();
  batch->add_option("--calib", calib_spec, "Default activations for modules without their own");
  batch->add_option("--out-dir", out_dir, "Directory for SDQW files")->required();
  bflags.add_to(*batch, false);

  // reconstruct
  auto* recon = app.add_subcommand("reconstruct", "Write the dense surrogate of an SDQW file as SDQT");
  std::string in_path;
  recon->add_option("--in", in_path, "SDQW input")->required();
  recon->add_option("--out", out_path, "SDQT output")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Error report and add-only forward agreement");
  std::string quant_path;
  eval->add_option("--weights", weights_path, "Original SDQT weights")->required();
  eval->add_option("--quantized", quant_path, "SDQW file")->required();
  eval->add_option("--calib", calib_spec, "Activations for output error and forward check");

  // spectrum
  auto* spectrum = app.add_subcommand("spectrum", "Per-row error spectra of Sigma-Delta quantization");
  QuantizeFlags sflags;
  std::size_t n_bands = 32;
  std::size_t max_rows = 0;
  std::string bands_out;
  spectrum->add_option("--weights", weights_path, "SDQT weights")->required();
  spectrum->add_option("--bands", n_bands, "Number of frequency bands")->check(CLI::PositiveNumber);
  spectrum->add_option("--rows", max_rows, "Analyze at most this many rows (0 = all)");
  spectrum->add_option("--out", out_path, "Per-row summary CSV")->required();
  spectrum->add_option("--bands-out", bands_out, "Per-band energies CSV");
  sflags.add_to(*spectrum, true);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Quantize at several OSRs and emit an error table");
  QuantizeFlags wflags;
  std::vector<double> osr_list{1.0, 1.5, 2.0, 3.0, 4.0};
  sweep->add_option("--weights", weights_path, "SDQT weights")->required();
  sweep->add_option("--calib", calib_spec, "SDQT activations or synthetic:<rows>:<seed>")->required();
  sweep->add_option("--osr-list", osr_list, "Ascending OSR values")->delimiter(',');
  sweep->add_option("--out", out_path, "CSV output (default: standard output)");
  wflags.add_to(*sweep, false);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a standard-normal SDQT matrix");
  std::size_t rows = 64, cols = 256;
  std::uint64_t synth_seed = 0;
  double outlier_frac = 0.0, outlier_scale = 10.0;
  synth->add_option("--rows", rows)->check(CLI::PositiveNumber);
  synth->add_option("--cols", cols)->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--outlier-frac", outlier_frac, "Fraction of columns scaled by --outlier-scale")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--outlier-scale", outlier_scale);
  synth->add_option("--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    const auto t0 = std::chrono::steady_clock::now();

    if (*quantize) {
      const FloatMatrix w = load_float(weights_path);
      const QuantizeConfig cfg = qflags.config(threads);
      cfg.validate(static_cast<std::size_t>(w.cols()));
      QuantizedWeight q;
      if (cfg.compensation) {
        require(!calib_spec.empty(), "--calib is required when --compensation on");
        q = quantize_matrix(w, load_activations(calib_spec, static_cast<std::size_t>(w.cols())), cfg);
      } else {
        q = quantize_matrix(w, std::nullopt, cfg);
      }
      save_quantized(q, out_path);
      const auto rep = error_report(w, reconstruct(q, threads));
      out << "eta=" << fmt(compression_ratio(cfg.kind, cfg.osr)) << " frob_rel=" << fmt(rep.frobenius_rel)
          << " cols_up=" << q.cols_up << " wall_ms=" << fmt(elapsed_ms(t0)) << '\n';
      err << "wrote " << out_path << '\n';
      return kOk;
    }

    if (*plan_cmd) {
      const auto stats = collect_stats(manifest_path, threads);
      const OsrPlan p = plan(stats, target_osr, popt);
      save_plan(p, popt, plan_path);
      out << "target=" << fmt(p.target) << " achieved=" << fmt(p.achieved_average)
          << " modules=" << p.modules.size() << '\n';
      for (const auto& m : p.modules)
        out << "layer=" << m.layer_index << " name=" << m.name << " osr=" << fmt(m.osr) << '\n';
      return kOk;
    }

    if (*batch) {
      const auto manifest = load_manifest(manifest_path);
      const OsrPlan p = load_plan(plan_path);
      std::filesystem::create_directories(out_dir);
      for (const auto& entry : manifest) {
        const ModuleOsr* m = p.find(entry.layer_index, entry.name);
        if (m == nullptr)
          throw FormatError("plan has no entry for layer " + std::to_string(entry.layer_index) + " module '" +
                            entry.name + "'");
        const FloatMatrix w = load_float(entry.path);
        QuantizeFlags f = bflags;
        f.osr = m->osr;
        const QuantizeConfig cfg = f.config(threads);
        cfg.validate(static_cast<std::size_t>(w.cols()));
        QuantizedWeight q;
        if (cfg.compensation) {
          const std::string spec = !entry.calib.empty() ? entry.calib.string() : calib_spec;
          require(!spec.empty(), "module '" + entry.name + "' has no calibration activations; pass --calib");
          q = quantize_matrix(w, load_activations(spec, static_cast<std::size_t>(w.cols())), cfg);
        } else {
          q = quantize_matrix(w, std::nullopt, cfg);
        }
        const auto path = std::filesystem::path(out_dir) /
                          (std::to_string(entry.layer_index) + "_" + entry.name + ".sdqw");
        save_quantized(q, path);
        out << "layer=" << entry.layer_index << " name=" << entry.name << " osr=" << fmt(m->osr)
            << " eta=" << fmt(compression_ratio(cfg.kind, q.osr()))
            << " frob_rel=" << fmt(relative_frobenius(reconstruct(q, threads), w)) << " path=" << path.string()
            << '\n';
      }
      return kOk;
    }

    if (*recon) {
      save_float(reconstruct(load_quantized(in_path), threads), out_path);
      out << "status=ok\n";
      return kOk;
    }

    if (*eval) {
      const FloatMatrix w = load_float(weights_path);
      const QuantizedWeight q = load_quantized(quant_path);
      require(w.rows() == static_cast<Eigen::Index>(q.rows) && w.cols() == static_cast<Eigen::Index>(q.cols_orig),
              "weights and quantized file have different shapes");
      const FloatMatrix x = load_activations(calib_spec.empty() ? "synthetic:64:0" : calib_spec,
                                             static_cast<std::size_t>(w.cols()));
      const auto rep = error_report(w, reconstruct(q, threads), &x);
      const double agreement = max_relative_error(forward(q, x, threads), forward_reference(q, x, threads));
      out << "frob_rel=" << fmt(rep.frobenius_rel) << " max_abs=" << fmt(rep.max_abs)
          << " out_rel=" << fmt(*rep.output_frobenius_rel) << " forward_rel_err=" << fmt(agreement)
          << " osr=" << fmt(q.osr()) << " eta=" << fmt(compression_ratio(q.kind, q.osr())) << '\n';
      return kOk;
    }

    if (*spectrum) {
      const FloatMatrix w = load_float(weights_path);
      const QuantizeConfig cfg = sflags.config(threads);
      const std::size_t n = max_rows == 0 ? static_cast<std::size_t>(w.rows())
                                          : std::min<std::size_t>(max_rows, static_cast<std::size_t>(w.rows()));
      const FloatMatrix rows_used = w.topRows(static_cast<Eigen::Index>(n));
      const BlockQuantization bq = sd_quantize_block(rows_used, cfg.osr, cfg.kind, cfg.loop_form, {}, threads);
      std::ostringstream summary, bands;
      summary.precision(17);
      bands.precision(17);
      summary << "row,osr,in_band_frac,low_half,high_half,total\n";
      bands << "row,band,f_lo,f_hi,signal_energy,error_energy\n";
      double mean_in_band = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const auto sym = std::span<const std::int8_t>(bq.symbols).subspan(r * bq.width_up, bq.width_up);
        const auto rep = spectrum_report(row_span(rows_used, static_cast<Eigen::Index>(r)), sym, bq.row_scales[r],
                                         cfg.osr, n_bands);
        mean_in_band += rep.in_band_fraction / static_cast<double>(n);
        summary << r << ',' << cfg.osr << ',' << rep.in_band_fraction << ',' << rep.low_half_energy << ','
                << rep.high_half_energy << ',' << rep.total_error_energy << '\n';
        for (std::size_t b = 0; b < n_bands; ++b)
          bands << r << ',' << b << ',' << rep.band_edges[b] << ',' << rep.band_edges[b + 1] << ','
                << rep.signal_energy[b] << ',' << rep.error_energy[b] << '\n';
      }
      write_text(out_path, summary.str());
      if (!bands_out.empty()) write_text(bands_out, bands.str());
      out << "rows=" << n << " osr=" << fmt(cfg.osr) << " mean_in_band_frac=" << fmt(mean_in_band) << '\n';
      return kOk;
    }

    if (*sweep) {
      const FloatMatrix w = load_float(weights_path);
      const FloatMatrix x = load_activations(calib_spec, static_cast<std::size_t>(w.cols()));
      QuantizeConfig cfg = wflags.config(threads);
      for (double o : osr_list) require(std::isfinite(o) && o >= 1.0, "every --osr-list value must be >= 1");
      require(std::is_sorted(osr_list.begin(), osr_list.end()), "--osr-list must be ascending");
      const auto table = osr_sweep(w, x, cfg, osr_list);
      if (out_path.empty()) {
        write_sweep_csv(out, table);
      } else {
        std::ofstream f(out_path);
        if (!f) throw FormatError("cannot open '" + out_path + "' for writing");
        write_sweep_csv(f, table);
        out << "points=" << table.size() << '\n';
      }
      return kOk;
    }

    if (*synth) {
      FloatMatrix m = standard_normal(rows, cols, synth_seed);
      const auto n_out = static_cast<std::size_t>(std::lround(outlier_frac * static_cast<double>(cols)));
      if (n_out > 0) {
        std::vector<std::size_t> idx(cols);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::mt19937_64 gen(synth_seed ^ 0x9e3779b97f4a7c15ULL);
        std::shuffle(idx.begin(), idx.end(), gen);
        for (std::size_t k = 0; k < n_out; ++k) m.col(static_cast<Eigen::Index>(idx[k])) *= outlier_scale;
      }
      save_float(m, out_path);
      out << "rows=" << rows << " cols=" << cols << '\n';
      return kOk;
    }
  } catch (const InvariantError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kFormat;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    err << "unexpected error: " << e.what() << '\n';
    return kUnexpected;
  }
  return kUsage;
}

}  // namespace sdq::cli
