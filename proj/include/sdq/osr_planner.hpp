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

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "sdq/errors.hpp"
#include "sdq/matrix.hpp"
#include "sdq/parallel.hpp"
#include "sdq/tensor_io.hpp"

namespace sdq {

struct ModuleStat {
  std::size_t layer_index = 0;
  std::string name;
  std::size_t param_count = 1;
  double variance = 1.0;  // population variance of the module's weights
};

struct ModuleOsr {
  std::size_t layer_index = 0;
  std::string name;
  std::size_t param_count = 1;
  double osr = 1.0;
};

struct OsrPlan {
  std::vector<ModuleOsr> modules;  // ordered by (layer_index, name)
  double target = 1.0;
  double achieved_average = 1.0;

  const ModuleOsr* find(std::size_t layer, const std::string& name) const {
    for (const auto& m : modules)
      if (m.layer_index == layer && m.name == name) return &m;
    return nullptr;
  }
};

struct PlanOptions {
  double osr_min = 1.0;
  double osr_max = 8.0;
  double gamma = 1.0;  // sensitivity = variance^-gamma
};

namespace detail {

/// Solves sum_i p_i * clamp(c * s_i, lo, hi) = target * sum_i p_i for c and returns the clamped values.
///
/// This is the fixpoint of clamp-freeze-renormalize water filling: clamped entries sit at a bound,
/// free entries stay proportional to their sensitivity. The left side is continuous and
/// non-decreasing in c, so the crossing segment is found among the clamp breakpoints.
inline std::vector<double> water_fill(std::span<const double> weight, std::span<const double> sens, double target,
                                      double lo, double hi) {
  const std::size_t n = weight.size();
  const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
  const double budget = target * total;
  auto filled = [&](double c) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += weight[i] * std::clamp(c * sens[i], lo, hi);
    return s;
  };

  std::vector<double> breaks;
  breaks.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    breaks.push_back(lo / sens[i]);
    breaks.push_back(hi / sens[i]);
  }
  std::sort(breaks.begin(), breaks.end());

  std::vector<double> x(n);
  if (budget <= filled(breaks.front())) {
    std::fill(x.begin(), x.end(), lo);
    return x;
  }
  if (budget >= filled(breaks.back())) {
    std::fill(x.begin(), x.end(), hi);
    return x;
  }
  std::size_t j = 0;
  while (j + 1 < breaks.size() && filled(breaks[j + 1]) < budget) ++j;
  const double mid = 0.5 * (breaks[j] + breaks[j + 1]);

  // On (breaks[j], breaks[j+1]) the clamped set is fixed; solve the free part exactly.
  double fixed = 0.0;
  double free_weight = 0.0;
  std::vector<int> state(n);  // -1 at lo, +1 at hi, 0 free
  for (std::size_t i = 0; i < n; ++i) {
    const double v = mid * sens[i];
    if (v <= lo) {
      state[i] = -1;
      fixed += weight[i] * lo;
    } else if (v >= hi) {
      state[i] = 1;
      fixed += weight[i] * hi;
    } else {
      free_weight += weight[i] * sens[i];
    }
  }
  const double c = free_weight > 0.0 ? (budget - fixed) / free_weight : mid;
  for (std::size_t i = 0; i < n; ++i)
    x[i] = state[i] < 0 ? lo : state[i] > 0 ? hi : std::clamp(c * sens[i], lo, hi);
  return x;
}

}  // namespace detail

/// Two-stage variance-aware OSR allocation.
///
/// Stage 1 splits the target across layers with sensitivity 1/var_L^gamma, where var_L is the
/// parameter-weighted mean variance of the layer's modules. Stage 2 splits each layer's OSR across
/// its modules with sensitivity 1/var_m^gamma. Both stages keep the parameter-weighted average
/// fixed and clamp to [osr_min, osr_max].
inline OsrPlan plan(std::vector<ModuleStat> stats, double target_osr, const PlanOptions& opt = {}) {
  require(!stats.empty(), "plan: no modules");
  require(std::isfinite(opt.osr_min) && std::isfinite(opt.osr_max) && opt.osr_min >= 1.0 &&
              opt.osr_min <= opt.osr_max,
          "plan: need 1 <= osr_min <= osr_max");
  require(std::isfinite(opt.gamma) && opt.gamma >= 0.0, "plan: gamma must be finite and >= 0");
  for (const auto& s : stats) {
    require(s.param_count >= 1, "plan: module '" + s.name + "' has no parameters");
    if (!(s.variance > 0.0) || !std::isfinite(s.variance))
      throw NumericError("module '" + s.name + "' in layer " + std::to_string(s.layer_index) +
                         " has zero or non-finite variance");
  }
  if (!(target_osr >= opt.osr_min && target_osr <= opt.osr_max)) {
    std::ostringstream msg;
    msg << "target OSR " << target_osr << " is infeasible; feasible interval is [" << opt.osr_min << ", "
        << opt.osr_max << "]";
    throw NumericError(msg.str());
  }

  std::sort(stats.begin(), stats.end(), [](const ModuleStat& a, const ModuleStat& b) {
    return std::tie(a.layer_index, a.name) < std::tie(b.layer_index, b.name);
  });
  for (std::size_t i = 1; i < stats.size(); ++i)
    require(!(stats[i].layer_index == stats[i - 1].layer_index && stats[i].name == stats[i - 1].name),
            "plan: duplicate module '" + stats[i].name + "' in layer " + std::to_string(stats[i].layer_index));

  // Contiguous [begin, end) ranges per layer.
  std::vector<std::pair<std::size_t, std::size_t>> layers;
  for (std::size_t i = 0; i < stats.size();) {
    std::size_t j = i;
    while (j < stats.size() && stats[j].layer_index == stats[i].layer_index) ++j;
    layers.emplace_back(i, j);
    i = j;
  }

  auto sensitivity = [&](double var) { return std::pow(var, -opt.gamma); };

  std::vector<double> layer_weight, layer_sens;
  for (auto [b, e] : layers) {
    double p = 0.0, pv = 0.0;
    for (std::size_t i = b; i < e; ++i) {
      p += static_cast<double>(stats[i].param_count);
      pv += static_cast<double>(stats[i].param_count) * stats[i].variance;
    }
    layer_weight.push_back(p);
    layer_sens.push_back(sensitivity(pv / p));
  }
  const std::vector<double> layer_osr =
      detail::water_fill(layer_weight, layer_sens, target_osr, opt.osr_min, opt.osr_max);

  OsrPlan out;
  out.target = target_osr;
  double weighted = 0.0, total = 0.0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto [b, e] = layers[l];
    std::vector<double> w, s;
    for (std::size_t i = b; i < e; ++i) {
      w.push_back(static_cast<double>(stats[i].param_count));
      s.push_back(sensitivity(stats[i].variance));
    }
    const std::vector<double> osr = detail::water_fill(w, s, layer_osr[l], opt.osr_min, opt.osr_max);
    for (std::size_t i = b; i < e; ++i) {
      out.modules.push_back({stats[i].layer_index, stats[i].name, stats[i].param_count, osr[i - b]});
      weighted += w[i - b] * osr[i - b];
      total += w[i - b];
    }
  }
  out.achieved_average = weighted / total;
  return out;
}

// ---------------------------------------------------------------------------
// Manifest and plan files (JSON)
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::size_t layer_index = 0;
  std::string name;
  std::filesystem::path path;   // resolved against the manifest's directory
  std::filesystem::path calib;  // optional per-module calibration activations
};

/// {"modules": [{"layer": 0, "name": "q_proj", "path": "l0_q.sdqt", "calib": "x.sdqt"?}, ...]}
inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest '" + path.string() + "'");
  std::vector<ManifestEntry> entries;
  try {
    const auto doc = nlohmann::json::parse(in);
    const auto base = path.parent_path();
    for (const auto& m : doc.at("modules")) {
      ManifestEntry e;
      e.layer_index = m.at("layer").get<std::size_t>();
      e.name = m.at("name").get<std::string>();
      e.path = base / m.at("path").get<std::string>();
      if (m.contains("calib")) e.calib = base / m.at("calib").get<std::string>();
      entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest '" + path.string() + "': " + e.what());
  }
  if (entries.empty()) throw FormatError("manifest '" + path.string() + "' lists no modules");
  return entries;
}

inline void save_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["modules"] = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json m{{"layer", e.layer_index}, {"name", e.name}, {"path", e.path.generic_string()}};
    if (!e.calib.empty()) m["calib"] = e.calib.generic_string();
    doc["modules"].push_back(std::move(m));
  }
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out << doc.dump(2) << '\n';
}

/// Population variance via Welford's update.
inline double population_variance(std::span<const double> values) {
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    ++n;
    const double d = v - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (v - mean);
  }
  return n == 0 ? 0.0 : m2 / static_cast<double>(n);
}

inline std::vector<ModuleStat> collect_stats(const std::vector<ManifestEntry>& manifest, std::size_t threads = 1) {
  std::vector<ModuleStat> stats(manifest.size());
  parallel_for(manifest.size(), threads, [&](std::size_t i) {
    const FloatMatrix w = load_float(manifest[i].path);
    const double var = population_variance(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
    if (!(var > 0.0))
      throw NumericError("module '" + manifest[i].name + "' (" + manifest[i].path.string() + ") has zero variance");
    stats[i] = {manifest[i].layer_index, manifest[i].name, static_cast<std::size_t>(w.size()), var};
  });
  std::sort(stats.begin(), stats.end(), [](const ModuleStat& a, const ModuleStat& b) {
    return std::tie(a.layer_index, a.name) < std::tie(b.layer_index, b.name);
  });
  return stats;
}

inline std::vector<ModuleStat> collect_stats(const std::filesystem::path& manifest, std::size_t threads = 1) {
  return collect_stats(load_manifest(manifest), threads);
}

inline nlohmann::json plan_to_json(const OsrPlan& p, const PlanOptions& opt) {
  nlohmann::json doc{{"target_osr", p.target},
                     {"achieved_average", p.achieved_average},
                     {"osr_min", opt.osr_min},
                     {"osr_max", opt.osr_max},
                     {"gamma", opt.gamma}};
  doc["modules"] = nlohmann::json::array();
  for (const auto& m : p.modules)
    doc["modules"].push_back(
        {{"layer", m.layer_index}, {"name", m.name}, {"param_count", m.param_count}, {"osr", m.osr}});
  return doc;
}

inline void save_plan(const OsrPlan& p, const PlanOptions& opt, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out << plan_to_json(p, opt).dump(2) << '\n';
}

inline OsrPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open plan '" + path.string() + "'");
  OsrPlan p;
  try {
    const auto doc = nlohmann::json::parse(in);
    p.target = doc.at("target_osr").get<double>();
    p.achieved_average = doc.at("achieved_average").get<double>();
    for (const auto& m : doc.at("modules"))
      p.modules.push_back({m.at("layer").get<std::size_t>(), m.at("name").get<std::string>(),
                           m.at("param_count").get<std::size_t>(), m.at("osr").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed plan '" + path.string() + "': " + e.what());
  }
  return p;
}

}  // namespace sdq
