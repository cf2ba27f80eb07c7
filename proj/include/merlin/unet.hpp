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
#include <cstddef>
#include <string>

#include <nlohmann/json.hpp>

#include "merlin/autodiff.hpp"
#include "merlin/error.hpp"
#include "merlin/rng.hpp"
#include "merlin/spectrum_prep.hpp"

namespace merlin::net {

struct UNetConfig {
  int levels = 3;
  int base_channels = 16;
  double leaky_slope = 0.1;
  bool residual = true;

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

inline void validate(const UNetConfig& cfg) {
  require(cfg.levels >= 1 && cfg.levels <= 12, ErrorCode::config, "unet.levels must be in [1, 12]");
  require(cfg.base_channels >= 1, ErrorCode::config, "unet.base_channels must be >= 1");
  require(std::isfinite(cfg.leaky_slope) && cfg.leaky_slope >= 0.0 && cfg.leaky_slope < 1.0, ErrorCode::config,
          "unet.leaky_slope must be in [0, 1)");
}

inline nlohmann::json to_json(const UNetConfig& cfg) {
  return {{"levels", cfg.levels},
          {"base_channels", cfg.base_channels},
          {"leaky_slope", cfg.leaky_slope},
          {"residual", cfg.residual}};
}

inline UNetConfig unet_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::config, "unet config must be an object");
  UNetConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "levels") {
      cfg.levels = value.get<int>();
    } else if (key == "base_channels") {
      cfg.base_channels = value.get<int>();
    } else if (key == "leaky_slope") {
      cfg.leaky_slope = value.get<double>();
    } else if (key == "residual") {
      cfg.residual = value.get<bool>();
    } else {
      throw Error(ErrorCode::config, "unknown unet config key '" + key + "'");
    }
  }
  validate(cfg);
  return cfg;
}

/// Graph plus the node ids a caller needs.
struct UNet {
  UNetConfig config;
  ad::Graph<float> graph;
  ad::NodeId input = -1;
  ad::NodeId trunk = -1;
  ad::NodeId output = -1;
};

namespace detail {

inline ad::NodeId conv(ad::Graph<float>& g, ad::NodeId x, const std::string& name, int cin, int cout, int k) {
  const auto w = g.parameter(name + ".weight", ad::Shape{cout, cin, k, k});
  const auto b = g.parameter(name + ".bias", ad::Shape{1, cout, 1, 1});
  return g.conv2d(x, w, b);
}

}  // namespace detail

/// Per level: two 3x3 conv + leaky_relu, then maxpool2. Bottleneck: two conv.
/// Decoder: upsample2, concat with the skip, two conv. Head: 1x1 conv to one channel.
/// All parameters start at zero; call initialize() for a random start.
inline UNet build_unet(const UNetConfig& cfg) {
  validate(cfg);
  UNet net;
  net.config = cfg;
  auto& g = net.graph;
  const int c = cfg.base_channels;
  const double a = cfg.leaky_slope;

  net.input = g.input("x", 1);
  std::vector<ad::NodeId> skips;
  ad::NodeId h = net.input;
  int cin = 1;
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string p = "enc" + std::to_string(l);
    h = g.leaky_relu(detail::conv(g, h, p + ".conv1", cin, c, 3), a);
    h = g.leaky_relu(detail::conv(g, h, p + ".conv2", c, c, 3), a);
    skips.push_back(h);
    h = g.maxpool2(h);
    cin = c;
  }
  h = g.leaky_relu(detail::conv(g, h, "mid.conv1", c, c, 3), a);
  h = g.leaky_relu(detail::conv(g, h, "mid.conv2", c, c, 3), a);
  for (int l = cfg.levels - 1; l >= 0; --l) {
    const std::string p = "dec" + std::to_string(l);
    h = g.concat(g.upsample2(h), skips[static_cast<std::size_t>(l)]);
    h = g.leaky_relu(detail::conv(g, h, p + ".conv1", 2 * c, c, 3), a);
    h = g.leaky_relu(detail::conv(g, h, p + ".conv2", c, c, 3), a);
  }
  net.trunk = detail::conv(g, h, "head", c, 1, 1);
  net.output = cfg.residual ? g.subtract(net.input, net.trunk) : net.trunk;
  return net;
}

/// Weights ~ N(0, gain²/fan_in) with gain √(2/(1+α²)) for leaky layers and 1 for the
/// linear head; biases zero.
inline void initialize(UNet& net, RngStream rng) {
  auto& g = net.graph;
  const double leaky_gain = std::sqrt(2.0 / (1.0 + net.config.leaky_slope * net.config.leaky_slope));
  for (ad::NodeId id : g.parameter_ids()) {
    auto& t = g.param(id);
    const std::string& name = g.node(id).name;
    if (name.ends_with(".bias")) {
      std::fill(t.data.begin(), t.data.end(), 0.0f);
      continue;
    }
    const double fan_in = static_cast<double>(t.shape.c) * t.shape.h * t.shape.w;
    const double gain = name.starts_with("head.") ? 1.0 : leaky_gain;
    const double sd = gain / std::sqrt(fan_in);
    for (float& v : t.data) v = static_cast<float>(sd * rng.normal());
  }
}

/// Sets every trunk parameter to zero; with a residual head the network is then the identity.
inline void zero_parameters(UNet& net) {
  for (ad::NodeId id : net.graph.parameter_ids()) {
    auto& t = net.graph.param(id);
    std::fill(t.data.begin(), t.data.end(), 0.0f);
  }
}

/// Sum of kernel and bias sizes implied by the topology, without building the graph.
inline std::size_t parameter_count(const UNetConfig& cfg) {
  const std::size_t c = static_cast<std::size_t>(cfg.base_channels);
  auto conv = [](std::size_t cin, std::size_t cout, std::size_t k) { return cout * cin * k * k + cout; };
  std::size_t total = conv(1, c, 3) + conv(c, c, 3);
  total += static_cast<std::size_t>(cfg.levels - 1) * (conv(c, c, 3) + conv(c, c, 3));
  total += 2 * conv(c, c, 3);
  total += static_cast<std::size_t>(cfg.levels) * (conv(2 * c, c, 3) + conv(c, c, 3));
  total += conv(c, 1, 1);
  return total;
}

inline void require_admissible(const UNetConfig& cfg, std::size_t width, std::size_t height) {
  const std::size_t m = std::size_t{1} << cfg.levels;
  require(width > 0 && height > 0 && width % m == 0 && height % m == 0, ErrorCode::shape_mismatch,
          "patch " + std::to_string(width) + "x" + std::to_string(height) + " not divisible by 2^" +
              std::to_string(cfg.levels));
}

/// Runs the network on a batch tensor (n, 1, h, w) and returns the output tensor.
inline ad::Tensor<float> predict_tensor(UNet& net, const ad::Tensor<float>& batch) {
  require(batch.shape.c == 1, ErrorCode::shape_mismatch, "network input must have one channel");
  require_admissible(net.config, static_cast<std::size_t>(batch.shape.w), static_cast<std::size_t>(batch.shape.h));
  return net.graph.forward({{"x", batch}}, net.output);
}

/// Maps a normalized log-domain patch to the normalized log-reflectivity estimate.
inline prep::LogImage predict(UNet& net, const prep::LogImage& patch) {
  const ad::Shape s{1, 1, static_cast<int>(patch.height()), static_cast<int>(patch.width())};
  ad::Tensor<float> x(s, patch.values.data);
  const auto y = predict_tensor(net, x);
  prep::LogImage out{FloatGrid(patch.width(), patch.height()), patch.norm};
  out.values.data = y.data;
  return out;
}

}  // namespace merlin::net
