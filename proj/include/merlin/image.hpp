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
#include <span>
#include <string>
#include <vector>

#include "merlin/error.hpp"

namespace merlin {

/// Row-major 2-D grid. `x` indexes columns (range), `y` rows (azimuth).
template <typename T>
struct Grid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(std::size_t w, std::size_t h, T fill = T{}) : width(w), height(h), data(w * h, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  bool empty() const noexcept { return data.empty(); }

  T& operator()(std::size_t x, std::size_t y) { return data[y * width + x]; }
  const T& operator()(std::size_t x, std::size_t y) const { return data[y * width + x]; }

  std::span<T> span() noexcept { return data; }
  std::span<const T> span() const noexcept { return data; }

  bool same_shape(const Grid& other) const noexcept {
    return width == other.width && height == other.height;
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using FloatGrid = Grid<float>;

/// Single-look complex samples: real part `re`, imaginary part `im`.
struct ComplexImage {
  FloatGrid re;
  FloatGrid im;

  ComplexImage() = default;
  ComplexImage(std::size_t w, std::size_t h) : re(w, h), im(w, h) {}

  std::size_t width() const noexcept { return re.width; }
  std::size_t height() const noexcept { return re.height; }
  std::size_t size() const noexcept { return re.size(); }

  friend bool operator==(const ComplexImage&, const ComplexImage&) = default;
};

/// Nonnegative reflectivity map r, or the system-convolved r̃ when `convolved` is set.
struct ReflectivityImage {
  FloatGrid values;
  bool convolved = false;

  std::size_t width() const noexcept { return values.width; }
  std::size_t height() const noexcept { return values.height; }

  friend bool operator==(const ReflectivityImage&, const ReflectivityImage&) = default;
};

inline constexpr float kReflectivityFloor = 1e-6f;

inline void validate(const ComplexImage& img) {
  require(img.width() >= 1 && img.height() >= 1, ErrorCode::invalid_argument,
          "complex image must be at least 1x1");
  require(img.re.same_shape(img.im) && img.re.size() == img.width() * img.height(),
          ErrorCode::dimension_mismatch, "re/im grids disagree");
  for (std::size_t i = 0; i < img.size(); ++i) {
    require(std::isfinite(img.re.data[i]) && std::isfinite(img.im.data[i]), ErrorCode::non_finite,
            "non-finite sample at index " + std::to_string(i));
  }
}

template <typename T>
void require_same_shape(const Grid<T>& a, const Grid<T>& b, const char* what) {
  require(a.same_shape(b), ErrorCode::dimension_mismatch,
          std::string(what) + ": " + std::to_string(a.width) + "x" + std::to_string(a.height) +
              " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
}

/// Crop `[x0, x0+w) x [y0, y0+h)`; coordinates outside the grid are mirrored
/// (reflection without edge repeat), which also serves as padding.
template <typename T>
Grid<T> crop_reflect(const Grid<T>& src, long x0, long y0, std::size_t w, std::size_t h) {
  auto reflect = [](long i, long n) {
    if (n == 1) return 0L;
    const long period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
  };
  Grid<T> out(w, h);
  const long sw = static_cast<long>(src.width), sh = static_cast<long>(src.height);
  for (std::size_t y = 0; y < h; ++y) {
    const long sy = reflect(y0 + static_cast<long>(y), sh);
    for (std::size_t x = 0; x < w; ++x) {
      out(x, y) = src(static_cast<std::size_t>(reflect(x0 + static_cast<long>(x), sw)),
                      static_cast<std::size_t>(sy));
    }
  }
  return out;
}

}  // namespace merlin
