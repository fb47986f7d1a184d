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

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <span>
#include <utility>

#include "sdq/errors.hpp"

namespace sdq {

namespace detail {

// FFTW planning is not thread-safe; execution with the new-array interface is.
// Plans are created once per (length, direction) and kept for the process lifetime.
class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  fftw_plan get(std::size_t n, int sign) {
    std::lock_guard lock(mutex_);
    auto key = std::make_pair(n, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    auto* in = fftw_alloc_complex(n);
    auto* out = fftw_alloc_complex(n);
    fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(n), in, out, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(in);
    fftw_free(out);
    if (plan == nullptr) throw NumericError("FFTW failed to plan a transform of length " + std::to_string(n));
    plans_.emplace(key, plan);
    return plan;
  }

  FftPlanCache(const FftPlanCache&) = delete;
  FftPlanCache& operator=(const FftPlanCache&) = delete;

 private:
  FftPlanCache() = default;
  ~FftPlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  std::mutex mutex_;
  std::map<std::pair<std::size_t, int>, fftw_plan> plans_;
};

}  // namespace detail

// Unnormalized DFT: X[k] = sum_n x[n] exp(-2 pi i k n / N). The inverse omits the 1/N factor.
inline void dft(std::span<const std::complex<double>> in, std::span<std::complex<double>> out, bool inverse = false) {
  require(in.size() == out.size(), "dft: input and output lengths differ");
  require(in.data() != out.data(), "dft: transform must be out-of-place");
  if (in.empty()) return;
  fftw_plan plan = detail::FftPlanCache::instance().get(in.size(), inverse ? FFTW_BACKWARD : FFTW_FORWARD);
  // fftw_execute_dft does not write its input array despite the non-const signature.
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in.data())),
                   reinterpret_cast<fftw_complex*>(out.data()));
}

}  // namespace sdq
