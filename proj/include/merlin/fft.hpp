// Copyright (c) 2026 The merlin-despeckle Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
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
#include <mutex>
#include <span>
#include <vector>

#include "merlin/error.hpp"

namespace merlin::fft {

using cplx = std::complex<double>;

namespace detail {

// FFTW's planner is not re-entrant; execution of distinct plans is.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class Plan {
 public:
  Plan(int rank, const int* dims, cplx* data, int sign) {
    std::lock_guard lock(planner_mutex());
    auto* buf = reinterpret_cast<fftw_complex*>(data);
    plan_ = fftw_plan_dft(rank, dims, buf, buf, sign, FFTW_ESTIMATE);
    require(plan_ != nullptr, ErrorCode::invalid_argument, "fftw plan creation failed");
  }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
  ~Plan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  void execute() const { fftw_execute(plan_); }

 private:
  fftw_plan plan_ = nullptr;
};

}  // namespace detail

/// In-place 2-D DFT of a row-major `height x width` array.
/// Forward: X[k] = sum_n x[n] exp(-2πi k·n / N). Inverse includes the 1/(w·h) factor.
inline void dft2(std::span<cplx> data, std::size_t width, std::size_t height, bool inverse = false) {
  require(data.size() == width * height && width > 0 && height > 0,
          ErrorCode::dimension_mismatch, "dft2 buffer size");
  const int dims[2] = {static_cast<int>(height), static_cast<int>(width)};
  detail::Plan plan(2, dims, data.data(), inverse ? FFTW_BACKWARD : FFTW_FORWARD);
  plan.execute();
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(width * height);
    for (auto& v : data) v *= scale;
  }
}

inline void dft1(std::span<cplx> data, bool inverse = false) {
  require(!data.empty(), ErrorCode::dimension_mismatch, "dft1 of empty buffer");
  const int dims[1] = {static_cast<int>(data.size())};
  detail::Plan plan(1, dims, data.data(), inverse ? FFTW_BACKWARD : FFTW_FORWARD);
  plan.execute();
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(data.size());
    for (auto& v : data) v *= scale;
  }
}

/// Signed frequency of bin k on an n-point grid, in cycles/sample, within [-0.5, 0.5).
inline double bin_frequency(std::size_t k, std::size_t n) {
  const auto kk = static_cast<long>(k), nn = static_cast<long>(n);
  const long signed_k = (2 * kk < nn) ? kk : kk - nn;
  return static_cast<double>(signed_k) / static_cast<double>(n);
}

/// Index of -k on an n-point circular grid.
inline std::size_t mirror_bin(std::size_t k, std::size_t n) { return (n - k) % n; }

}  // namespace merlin::fft
