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

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "merlin/error.hpp"
#include "merlin/raster_io.hpp"
#include "merlin/speckle_sim.hpp"

/// JSON form of a TransferFunctionSpec:
///   {"kind": "identity" | "separable_apodized" | "explicit_frequency_grid",
///    "zero_pad_factor": 1.0, "window": [azimuth, range], "freq_shift": [azimuth, range],
///    "grid": "response.tns"}
/// Window names: "rectangular", "hamming", "hann". An explicit grid lives in a tensor
/// container with entries "re" and "im" of dims [height, width]; a relative path is
/// resolved against the JSON file's directory.
namespace merlin::sim {

inline const char* to_string(TransferKind k) {
  switch (k) {
    case TransferKind::identity: return "identity";
    case TransferKind::separable_apodized: return "separable_apodized";
    case TransferKind::explicit_frequency_grid: return "explicit_frequency_grid";
  }
  return "?";
}

inline const char* to_string(Window w) {
  switch (w) {
    case Window::rectangular: return "rectangular";
    case Window::hamming: return "hamming";
    case Window::hann: return "hann";
  }
  return "?";
}

inline Window window_from_string(const std::string& s) {
  if (s == "rectangular") return Window::rectangular;
  if (s == "hamming") return Window::hamming;
  if (s == "hann") return Window::hann;
  throw Error(ErrorCode::config, "unknown window '" + s + "'");
}

inline io::TensorContainer response_to_tensors(const FrequencyResponse& r) {
  std::vector<float> re(r.values.size()), im(r.values.size());
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    re[i] = static_cast<float>(r.values[i].real());
    im[i] = static_cast<float>(r.values[i].imag());
  }
  io::TensorContainer tc;
  const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(r.height), static_cast<std::uint32_t>(r.width)};
  tc.add("re", dims, std::move(re));
  tc.add("im", dims, std::move(im));
  return tc;
}

inline FrequencyResponse response_from_tensors(const io::TensorContainer& tc) {
  const auto& re = tc.at("re");
  const auto& im = tc.at("im");
  require(re.dims.size() == 2 && re.dims == im.dims, ErrorCode::config, "response tensors must be 2-D and equal");
  FrequencyResponse r(re.dims[1], re.dims[0]);
  for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] = {re.data[i], im.data[i]};
  return r;
}

/// `grid_file` names the container written for explicit grids (ignored otherwise).
inline nlohmann::json to_json(const TransferFunctionSpec& spec, const std::string& grid_file = "") {
  nlohmann::json j{{"kind", to_string(spec.kind)}};
  if (spec.kind == TransferKind::separable_apodized) {
    j["zero_pad_factor"] = spec.zero_pad_factor;
    j["window"] = {to_string(spec.window_azimuth), to_string(spec.window_range)};
    j["freq_shift"] = {spec.shift_azimuth, spec.shift_range};
  } else if (spec.kind == TransferKind::explicit_frequency_grid) {
    j["grid"] = grid_file;
  }
  return j;
}

inline TransferFunctionSpec transfer_spec_from_json(const nlohmann::json& j,
                                                    const std::filesystem::path& base_dir = {}) {
  require(j.is_object(), ErrorCode::config, "transfer function spec must be a JSON object");
  TransferFunctionSpec spec;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "identity") {
      spec.kind = TransferKind::identity;
    } else if (kind == "separable_apodized") {
      spec.kind = TransferKind::separable_apodized;
    } else if (kind == "explicit_frequency_grid") {
      spec.kind = TransferKind::explicit_frequency_grid;
    } else {
      throw Error(ErrorCode::config, "unknown transfer kind '" + kind + "'");
    }
    for (const auto& [key, value] : j.items()) {
      if (key == "kind") continue;
      if (key == "zero_pad_factor") {
        spec.zero_pad_factor = value.get<double>();
      } else if (key == "window") {
        require(value.is_array() && value.size() == 2, ErrorCode::config, "window is [azimuth, range]");
        spec.window_azimuth = window_from_string(value[0].get<std::string>());
        spec.window_range = window_from_string(value[1].get<std::string>());
      } else if (key == "freq_shift") {
        require(value.is_array() && value.size() == 2, ErrorCode::config, "freq_shift is [azimuth, range]");
        spec.shift_azimuth = value[0].get<double>();
        spec.shift_range = value[1].get<double>();
      } else if (key == "grid") {
        std::filesystem::path p = value.get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        spec.response = response_from_tensors(io::load_tensors(p));
      } else {
        throw Error(ErrorCode::config, "unknown transfer spec key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("transfer spec: ") + e.what());
  }
  if (spec.kind != TransferKind::explicit_frequency_grid) spec.response.reset();
  try {
    validate(spec);
  } catch (const Error& e) {
    throw Error(ErrorCode::config, e.what());
  }
  return spec;
}

inline TransferFunctionSpec load_transfer_spec(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, "cannot parse '" + path.string() + "': " + e.what());
  }
  return transfer_spec_from_json(j, path.parent_path());
}

}  // namespace merlin::sim
