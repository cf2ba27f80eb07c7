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
#include <string>
#include <vector>

#include "merlin/autodiff.hpp"
#include "merlin/error.hpp"
#include "merlin/spectrum_prep.hpp"

/// Log-domain likelihood losses. Scalar versions take denormalized logs:
/// ř = log r̃, b̌ = log|b̃| (MERLIN) or ǐ′ = log I′ (supervised).
namespace merlin::loss {

inline constexpr double kExpClamp = 30.0;

namespace detail {

inline void check_pair(std::span<const double> r, std::span<const double> t, const char* what) {
  require(r.size() == t.size(), ErrorCode::shape_mismatch, std::string(what) + ": operand sizes differ");
  for (std::size_t k = 0; k < r.size(); ++k) {
    require(std::isfinite(r[k]) && std::isfinite(t[k]), ErrorCode::non_finite,
            std::string(what) + ": non-finite value at pixel " + std::to_string(k));
  }
}

}  // namespace detail

/// Σ ½ř + exp(2b̌ − ř), exponent clamped at +30.
inline double merlin_loss(std::span<const double> r_log, std::span<const double> b_log) {
  detail::check_pair(r_log, b_log, "merlin_loss");
  double acc = 0.0;
  for (std::size_t k = 0; k < r_log.size(); ++k) {
    acc += 0.5 * r_log[k] + std::exp(std::min(2.0 * b_log[k] - r_log[k], kExpClamp));
  }
  return acc;
}

/// ∂/∂ř of merlin_loss: ½ − exp(2b̌ − ř), zero where the clamp is active.
inline std::vector<double> merlin_loss_gradient(std::span<const double> r_log, std::span<const double> b_log) {
  detail::check_pair(r_log, b_log, "merlin_loss_gradient");
  std::vector<double> g(r_log.size());
  for (std::size_t k = 0; k < r_log.size(); ++k) {
    const double arg = 2.0 * b_log[k] - r_log[k];
    g[k] = 0.5 - (arg < kExpClamp ? std::exp(arg) : 0.0);
  }
  return g;
}

/// Σ ř + exp(ǐ′ − ř), exponent clamped at +30.
inline double supervised_loss(std::span<const double> r_log, std::span<const double> i_log) {
  detail::check_pair(r_log, i_log, "supervised_loss");
  double acc = 0.0;
  for (std::size_t k = 0; k < r_log.size(); ++k) {
    acc += r_log[k] + std::exp(std::min(i_log[k] - r_log[k], kExpClamp));
  }
  return acc;
}

/// Log-scale nodes appended to a network graph. The network works in the
/// normalized domain: with s = hi − lo, ř = s·o + lo and 2b̌ = s·t + lo, so
/// ½ř + exp(2b̌ − ř) = (½s·o + ½lo) + exp(s·(t − o)).
struct LossNodes {
  ad::NodeId target = -1;
  ad::NodeId per_pixel = -1;
  ad::NodeId loss = -1;
};

inline constexpr const char* kTargetInput = "target";

/// Pixel sum, then mean over the batch.
template <typename T>
LossNodes attach_merlin_loss(ad::Graph<T>& g, ad::NodeId output, const prep::Normalization& norm) {
  const double s = norm.hi - norm.lo;
  require(s > 0, ErrorCode::invalid_argument, "normalization requires hi > lo");
  LossNodes n;
  n.target = g.input(kTargetInput, 1);
  const auto lin = g.multiply_scalar(output, 0.5 * s, 0.5 * norm.lo);
  const auto arg = g.multiply_scalar(g.subtract(n.target, output), s);
  n.per_pixel = g.add(lin, g.exp(arg, kExpClamp));
  n.loss = g.reduce_sum(n.per_pixel, /*batch_mean=*/true);
  return n;
}

/// Same reduction for Σ ř + exp(ǐ′ − ř) with ǐ′ = s·t + lo.
template <typename T>
LossNodes attach_supervised_loss(ad::Graph<T>& g, ad::NodeId output, const prep::Normalization& norm) {
  const double s = norm.hi - norm.lo;
  require(s > 0, ErrorCode::invalid_argument, "normalization requires hi > lo");
  LossNodes n;
  n.target = g.input(kTargetInput, 1);
  const auto lin = g.multiply_scalar(output, s, norm.lo);
  const auto arg = g.multiply_scalar(g.subtract(n.target, output), s);
  n.per_pixel = g.add(lin, g.exp(arg, kExpClamp));
  n.loss = g.reduce_sum(n.per_pixel, /*batch_mean=*/true);
  return n;
}

}  // namespace merlin::loss
