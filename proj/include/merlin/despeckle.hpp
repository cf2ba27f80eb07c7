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
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "merlin/autodiff.hpp"
#include "merlin/error.hpp"
#include "merlin/image.hpp"
#include "merlin/spectrum_prep.hpp"
#include "merlin/train.hpp"
#include "merlin/unet.hpp"

namespace merlin::infer {

inline constexpr std::size_t kDefaultTile = 256;
inline constexpr std::size_t kDefaultMargin = 32;
inline constexpr std::size_t kMinMargin = 16;

enum class Fusion { linear, log };

/// Smallest positive value an estimate may take.
inline constexpr float kEstimateFloor = std::numeric_limits<float>::min();

/// Network wrapper: maps a positive quantity (a part squared, or an intensity) to
/// exp(denormalize(predict(normalize(log q)))).
class Despeckler {
 public:
  explicit Despeckler(const train::Checkpoint& ckpt, int threads = 1)
      : net_(train::instantiate(ckpt)), norm_(ckpt.norm), mode_(ckpt.mode) {
    require(norm_.hi > norm_.lo, ErrorCode::config, "checkpoint normalization requires hi > lo");
    net_.graph.set_threads(threads);
  }

  const net::UNetConfig& config() const noexcept { return net_.config; }
  const std::string& mode() const noexcept { return mode_; }
  const prep::Normalization& normalization() const noexcept { return norm_; }

  /// Batch of equally sized quantity grids, each with sides divisible by 2^levels.
  std::vector<FloatGrid> run(const std::vector<FloatGrid>& quantities) {
    if (quantities.empty()) return {};
    const std::size_t w = quantities.front().width, h = quantities.front().height;
    net::require_admissible(net_.config, w, h);
    const std::size_t plane = w * h;
    ad::Tensor<float> x(ad::Shape{static_cast<int>(quantities.size()), 1, static_cast<int>(h), static_cast<int>(w)});
    for (std::size_t b = 0; b < quantities.size(); ++b) {
      require(quantities[b].width == w && quantities[b].height == h, ErrorCode::dimension_mismatch,
              "batched grids must share dims");
      for (std::size_t i = 0; i < plane; ++i) {
        x.data[b * plane + i] = prep::normalize_value(quantities[b].data[i], norm_);
      }
    }
    const auto& y = net::predict_tensor(net_, x);
    std::vector<FloatGrid> out(quantities.size(), FloatGrid(w, h));
    for (std::size_t b = 0; b < quantities.size(); ++b) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = prep::denormalize_value(y.data[b * plane + i], norm_);
        out[b].data[i] = std::max(static_cast<float>(v), kEstimateFloor);
      }
    }
    return out;
  }

  FloatGrid run(const FloatGrid& quantity) { return run(std::vector<FloatGrid>{quantity}).front(); }

 private:
  net::UNet net_;
  prep::Normalization norm_;
  std::string mode_;
};

inline FloatGrid square_of(const FloatGrid& part) {
  FloatGrid q(part.width, part.height);
  for (std::size_t i = 0; i < part.size(); ++i) q.data[i] = part.data[i] * part.data[i];
  return q;
}

/// Reflectivity estimate from one part (ã or b̃) with the network fed log(part²).
inline ReflectivityImage despeckle_component(const train::Checkpoint& ckpt, const FloatGrid& part, int threads = 1) {
  Despeckler d(ckpt, threads);
  return {d.run(square_of(part)), true};
}

inline ReflectivityImage combine_estimates(const ReflectivityImage& ra, const ReflectivityImage& rb,
                                           Fusion fusion = Fusion::linear) {
  require_same_shape(ra.values, rb.values, "combine_estimates");
  ReflectivityImage out{FloatGrid(ra.width(), ra.height()), ra.convolved || rb.convolved};
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double a = ra.values.data[i], b = rb.values.data[i];
    out.values.data[i] = fusion == Fusion::linear
                             ? static_cast<float>(0.5 * (a + b))
                             : static_cast<float>(std::exp(0.5 * (std::log(a) + std::log(b))));
  }
  return out;
}

struct TileOptions {
  std::size_t tile = kDefaultTile;
  std::size_t margin = kDefaultMargin;
  Fusion fusion = Fusion::linear;
  /// Re-center the spectrum of every tile before splitting it into parts.
  bool recenter = false;
  std::size_t batch = 4;  // tiles per network call
};

/// Produces the network quantity for the window [x0, x0+w) x [y0, y0+h), mirrored outside the image.
using TileSource = std::function<FloatGrid(long x0, long y0, std::size_t w, std::size_t h)>;

/// Runs the network over a grid of arbitrary size. Grids that fit in one tile are
/// reflect-padded to the tile and cropped back; larger grids are cut into tiles whose
/// central (tile - 2·margin) core is kept.
inline FloatGrid despeckle_tiled(Despeckler& d, const TileSource& source, std::size_t w, std::size_t h,
                                 const TileOptions& opt) {
  const std::size_t m = std::size_t{1} << d.config().levels;
  require(opt.tile > 0 && opt.tile % m == 0, ErrorCode::invalid_argument,
          "tile must be divisible by 2^levels (" + std::to_string(m) + ")");
  require(opt.margin >= kMinMargin, ErrorCode::invalid_argument, "margin must be >= 16");
  if (w <= opt.tile && h <= opt.tile) {
    if (w == opt.tile && h == opt.tile) return d.run(source(0, 0, w, h));
    return crop_reflect(d.run(source(0, 0, opt.tile, opt.tile)), 0, 0, w, h);
  }
  require(opt.tile > 2 * opt.margin, ErrorCode::invalid_argument, "tile must exceed twice the margin");
  const std::size_t core = opt.tile - 2 * opt.margin;
  const std::size_t nx = (w + core - 1) / core, ny = (h + core - 1) / core;
  const std::size_t batch = std::max<std::size_t>(opt.batch, 1);
  FloatGrid out(w, h);
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t ty = 0; ty < ny; ++ty) {
    for (std::size_t tx = 0; tx < nx; ++tx) cells.emplace_back(tx * core, ty * core);
  }
  for (std::size_t begin = 0; begin < cells.size(); begin += batch) {
    const std::size_t end = std::min(cells.size(), begin + batch);
    std::vector<FloatGrid> tiles;
    for (std::size_t k = begin; k < end; ++k) {
      tiles.push_back(source(static_cast<long>(cells[k].first) - static_cast<long>(opt.margin),
                             static_cast<long>(cells[k].second) - static_cast<long>(opt.margin), opt.tile, opt.tile));
    }
    const auto results = d.run(tiles);
    for (std::size_t k = begin; k < end; ++k) {
      const auto [x0, y0] = cells[k];
      const auto& r = results[k - begin];
      for (std::size_t y = 0; y < core && y0 + y < h; ++y) {
        for (std::size_t x = 0; x < core && x0 + x < w; ++x) out(x0 + x, y0 + y) = r(opt.margin + x, opt.margin + y);
      }
    }
  }
  return out;
}

inline FloatGrid despeckle_tiled(Despeckler& d, const FloatGrid& quantity, const TileOptions& opt) {
  return despeckle_tiled(
      d, [&](long x0, long y0, std::size_t w, std::size_t h) { return crop_reflect(quantity, x0, y0, w, h); },
      quantity.width, quantity.height, opt);
}

inline ComplexImage crop_complex(const ComplexImage& img, long x0, long y0, std::size_t w, std::size_t h) {
  ComplexImage out;
  out.re = crop_reflect(img.re, x0, y0, w, h);
  out.im = crop_reflect(img.im, x0, y0, w, h);
  return out;
}

/// Full pipeline. MERLIN checkpoints process the real and imaginary parts separately
/// and fuse the two estimates; supervised checkpoints process the intensity.
inline ReflectivityImage despeckle_image(const train::Checkpoint& ckpt, const ComplexImage& img,
                                         const TileOptions& opt = {}, int threads = 1) {
  validate(img);
  Despeckler d(ckpt, threads);
  const std::size_t w = img.width(), h = img.height();
  auto tile_of = [&](long x0, long y0, std::size_t tw, std::size_t th) {
    auto z = crop_complex(img, x0, y0, tw, th);
    return opt.recenter ? prep::recenter_patch(z).patch : z;
  };
  if (d.mode() == "supervised") {
    const TileSource src = [&](long x0, long y0, std::size_t tw, std::size_t th) {
      return train::intensity(tile_of(x0, y0, tw, th));
    };
    return {despeckle_tiled(d, src, w, h, opt), true};
  }
  const TileSource src_a = [&](long x0, long y0, std::size_t tw, std::size_t th) {
    return square_of(tile_of(x0, y0, tw, th).re);
  };
  const TileSource src_b = [&](long x0, long y0, std::size_t tw, std::size_t th) {
    return square_of(tile_of(x0, y0, tw, th).im);
  };
  const ReflectivityImage ra{despeckle_tiled(d, src_a, w, h, opt), true};
  const ReflectivityImage rb{despeckle_tiled(d, src_b, w, h, opt), true};
  return combine_estimates(ra, rb, opt.fusion);
}

}  // namespace merlin::infer
