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

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "merlin/autodiff.hpp"
#include "merlin/error.hpp"

namespace merlin::ad {

/// Global L2 norm over several gradient buffers, accumulated in double.
template <typename T>
double global_norm(const std::vector<std::span<const T>>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(sq);
}

/// Scales all gradients by c/g when their global norm g exceeds c. Returns g (pre-clip).
template <typename T>
double clip_global_norm(const std::vector<std::span<T>>& grads, double c) {
  require(c > 0.0, ErrorCode::invalid_argument, "gradient clip threshold must be > 0");
  std::vector<std::span<const T>> view(grads.begin(), grads.end());
  const double g = global_norm(view);
  if (g > c) {
    const T scale = static_cast<T>(c / g);
    for (const auto& buf : grads) {
      for (T& v : buf) v *= scale;
    }
  }
  return g;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update. Moments are created zeroed on the first call.
template <typename T>
void adam_step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads,
               AdamState<T>& state, double lr, const AdamConfig& cfg = {}) {
  require(params.size() == grads.size(), ErrorCode::shape_mismatch, "adam: parameter/gradient count differs");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), T{});
      state.v.emplace_back(p.size(), T{});
    }
  }
  require(state.m.size() == params.size(), ErrorCode::shape_mismatch, "adam: state does not match parameters");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto g = grads[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    require(p.size() == g.size() && p.size() == m.size(), ErrorCode::shape_mismatch,
            "adam: tensor " + std::to_string(k) + " size mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p[i] = static_cast<T>(p[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps));
    }
  }
}

/// Parameter and gradient views of a graph, in parameter creation order.
template <typename T>
std::vector<std::span<T>> parameter_views(Graph<T>& g) {
  std::vector<std::span<T>> out;
  for (NodeId id : g.parameter_ids()) out.emplace_back(g.param(id).data);
  return out;
}

template <typename T>
std::vector<std::span<T>> gradient_views(Graph<T>& g) {
  std::vector<std::span<T>> out;
  for (NodeId id : g.parameter_ids()) out.emplace_back(g.grad(id));
  return out;
}

}  // namespace merlin::ad
