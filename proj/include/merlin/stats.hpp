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

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "merlin/error.hpp"

namespace merlin::stats {

template <typename T>
double mean(std::span<const T> x) {
  require(!x.empty(), ErrorCode::invalid_argument, "mean of empty sample");
  double s = 0.0;
  for (T v : x) s += static_cast<double>(v);
  return s / static_cast<double>(x.size());
}

/// Population variance (divides by n).
template <typename T>
double variance(std::span<const T> x) {
  const double m = mean(x);
  double s = 0.0;
  for (T v : x) {
    const double d = static_cast<double>(v) - m;
    s += d * d;
  }
  return s / static_cast<double>(x.size());
}

template <typename T>
double correlation(std::span<const T> x, std::span<const T> y) {
  require(x.size() == y.size() && !x.empty(), ErrorCode::dimension_mismatch, "correlation needs equal sizes");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = static_cast<double>(x[i]) - mx, dy = static_cast<double>(y[i]) - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

struct MeanSigma {
  double mean = 0.0;
  double sigma = 0.0;  // population standard deviation
};

inline MeanSigma mean_sigma(std::span<const double> x) { return {mean(x), std::sqrt(variance(x))}; }

/// Kolmogorov-Smirnov distance between the sample and Exponential(rate).
template <typename T>
double ks_statistic_exponential(std::span<const T> x, double rate = 1.0) {
  require(!x.empty(), ErrorCode::invalid_argument, "KS test of empty sample");
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double f = s[i] > 0 ? 1.0 - std::exp(-rate * s[i]) : 0.0;
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Large-sample critical value of the one-sample KS statistic at α = 0.01.
inline double ks_critical_alpha01(std::size_t n) { return 1.628 / std::sqrt(static_cast<double>(n)); }

}  // namespace merlin::stats
