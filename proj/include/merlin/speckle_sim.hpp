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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "merlin/error.hpp"
#include "merlin/fft.hpp"
#include "merlin/image.hpp"
#include "merlin/rng.hpp"

namespace merlin::sim {

using fft::cplx;

enum class TransferKind { identity, separable_apodized, explicit_frequency_grid };
enum class Window { rectangular, hamming, hann };

/// Sampled frequency response h̄ on a `width x height` DFT grid (row-major, unshifted bins).
struct FrequencyResponse {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<cplx> values;

  FrequencyResponse() = default;
  FrequencyResponse(std::size_t w, std::size_t h, cplx fill = {1.0, 0.0})
      : width(w), height(h), values(w * h, fill) {}

  cplx& operator()(std::size_t kx, std::size_t ky) { return values[ky * width + kx]; }
  const cplx& operator()(std::size_t kx, std::size_t ky) const { return values[ky * width + kx]; }
  /// h̄(-ν)
  const cplx& mirrored(std::size_t kx, std::size_t ky) const {
    return (*this)(fft::mirror_bin(kx, width), fft::mirror_bin(ky, height));
  }
};

/// Parametric SAR system. `separable_apodized` is a product of an azimuth (y) and a
/// range (x) gain: each is a window over the retained band |ν - shift| <= 1/(2·pad),
/// zero elsewhere, and the product is scaled to unit mean power (unit-energy kernel).
struct TransferFunctionSpec {
  TransferKind kind = TransferKind::identity;
  double zero_pad_factor = 1.0;
  Window window_azimuth = Window::rectangular;
  Window window_range = Window::rectangular;
  double shift_azimuth = 0.0;  // cycles/sample
  double shift_range = 0.0;    // cycles/sample
  /// Explicit grid (explicit kind) or a cached materialization.
  std::optional<FrequencyResponse> response;

  static TransferFunctionSpec identity() { return {}; }

  static TransferFunctionSpec separable(double pad, Window az, Window rg, double shift_az = 0.0,
                                        double shift_rg = 0.0) {
    TransferFunctionSpec s;
    s.kind = TransferKind::separable_apodized;
    s.zero_pad_factor = pad;
    s.window_azimuth = az;
    s.window_range = rg;
    s.shift_azimuth = shift_az;
    s.shift_range = shift_rg;
    return s;
  }

  static TransferFunctionSpec explicit_grid(FrequencyResponse grid) {
    TransferFunctionSpec s;
    s.kind = TransferKind::explicit_frequency_grid;
    s.response = std::move(grid);
    return s;
  }
};

inline void validate(const TransferFunctionSpec& spec) {
  switch (spec.kind) {
    case TransferKind::identity:
      require(spec.zero_pad_factor == 1.0 && spec.window_azimuth == Window::rectangular &&
                  spec.window_range == Window::rectangular && spec.shift_azimuth == 0.0 &&
                  spec.shift_range == 0.0,
              ErrorCode::invalid_argument, "identity transfer function carries non-trivial parameters");
      break;
    case TransferKind::separable_apodized:
      require(spec.zero_pad_factor >= 1.0, ErrorCode::invalid_argument, "zero_pad_factor must be >= 1");
      require(std::isfinite(spec.shift_azimuth) && std::isfinite(spec.shift_range),
              ErrorCode::invalid_argument, "frequency shift must be finite");
      break;
    case TransferKind::explicit_frequency_grid:
      require(spec.response.has_value() && spec.response->values.size() ==
                                               spec.response->width * spec.response->height,
              ErrorCode::invalid_argument, "explicit transfer function needs a response grid");
      break;
  }
}

inline double window_value(Window w, double t) {
  switch (w) {
    case Window::rectangular: return 1.0;
    case Window::hamming: return 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * t);
    case Window::hann: return 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * t);
  }
  return 1.0;
}

/// One axis of a separable response: gain per DFT bin.
inline std::vector<double> axis_gain(std::size_t n, Window window, double pad, double shift) {
  const double half_band = 0.5 / pad;
  std::vector<double> gain(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double u = fft::bin_frequency(k, n) - shift;
    u -= std::floor(u + 0.5);  // wrap into [-0.5, 0.5)
    if (std::abs(u) <= half_band + 1e-12) {
      gain[k] = window_value(window, (u + half_band) / (2.0 * half_band));
    }
  }
  return gain;
}

/// Response grid for a `width x height` image.
inline FrequencyResponse materialize_response(const TransferFunctionSpec& spec, std::size_t width,
                                              std::size_t height) {
  validate(spec);
  require(width >= 1 && height >= 1, ErrorCode::invalid_argument, "response dims must be >= 1");
  switch (spec.kind) {
    case TransferKind::identity:
      return FrequencyResponse(width, height);
    case TransferKind::explicit_frequency_grid:
      require(spec.response->width == width && spec.response->height == height,
              ErrorCode::dimension_mismatch, "explicit response grid does not match image dims");
      return *spec.response;
    case TransferKind::separable_apodized: {
      if (spec.response && spec.response->width == width && spec.response->height == height) {
        return *spec.response;
      }
      const auto gy = axis_gain(height, spec.window_azimuth, spec.zero_pad_factor, spec.shift_azimuth);
      const auto gx = axis_gain(width, spec.window_range, spec.zero_pad_factor, spec.shift_range);
      FrequencyResponse r(width, height, {0.0, 0.0});
      double power = 0.0;
      for (std::size_t ky = 0; ky < height; ++ky) {
        for (std::size_t kx = 0; kx < width; ++kx) {
          const double g = gy[ky] * gx[kx];
          r(kx, ky) = {g, 0.0};
          power += g * g;
        }
      }
      require(power > 0, ErrorCode::invalid_argument, "transfer function has empty support");
      const double scale = 1.0 / std::sqrt(power / static_cast<double>(width * height));
      for (auto& v : r.values) v *= scale;
      return r;
    }
  }
  throw Error(ErrorCode::invalid_argument, "unknown transfer kind");
}

/// Returns a copy of `spec` with its response materialized for the given dims.
inline TransferFunctionSpec materialize(TransferFunctionSpec spec, std::size_t width, std::size_t height) {
  spec.response = materialize_response(spec, width, height);
  return spec;
}

/// Spatial kernel h = IDFT(h̄), row-major, periodic.
inline std::vector<cplx> spatial_kernel(const FrequencyResponse& response) {
  std::vector<cplx> h = response.values;
  fft::dft2(h, response.width, response.height, /*inverse=*/true);
  return h;
}

// ---------------------------------------------------------------------------
// Analytic independence of real/imaginary parts for a shift-invariant H:
// the gain must be even, |h̄(ν)| = |h̄(-ν)|, and h̄(ν)·h̄(-ν) must carry one
// common phase over the support (H = exp(jφ)·Q' with Q' real).

struct EvennessReport {
  double gain_asymmetry = 0.0;  // max ||h̄(ν)| - |h̄(-ν)|| / max|h̄|
  double phase_spread = 0.0;    // max |arg(h̄(ν)h̄(-ν)) - common phase| (radians)
  bool independent = true;
};

inline EvennessReport evenness_report(const FrequencyResponse& r, double tol) {
  EvennessReport rep;
  double peak = 0.0;
  for (const auto& v : r.values) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) return rep;
  const double support_floor = (1e-6 * peak) * (1e-6 * peak);
  bool have_ref = false;
  double ref_phase = 0.0;
  for (std::size_t ky = 0; ky < r.height; ++ky) {
    for (std::size_t kx = 0; kx < r.width; ++kx) {
      const cplx a = r(kx, ky), b = r.mirrored(kx, ky);
      rep.gain_asymmetry = std::max(rep.gain_asymmetry, std::abs(std::abs(a) - std::abs(b)) / peak);
      const cplx prod = a * b;
      if (std::abs(prod) <= support_floor) continue;
      const double phase = std::arg(prod);
      if (!have_ref) {
        ref_phase = phase;
        have_ref = true;
        continue;
      }
      double d = phase - ref_phase;
      d = std::remainder(d, 2.0 * std::numbers::pi);
      rep.phase_spread = std::max(rep.phase_spread, std::abs(d));
    }
  }
  rep.independent = rep.gain_asymmetry <= tol && rep.phase_spread <= tol;
  return rep;
}

// ---------------------------------------------------------------------------
// Speckle

/// Unit-power circular complex Gaussian field: re, im ~ N(0, 1/2) i.i.d.
inline ComplexImage sample_speckle_field(std::size_t width, std::size_t height, RngStream& rng) {
  require(width >= 1 && height >= 1, ErrorCode::invalid_argument, "speckle field dims must be >= 1");
  ComplexImage s(width, height);
  const double scale = std::numbers::sqrt2 / 2.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    s.re.data[i] = static_cast<float>(rng.normal() * scale);
    s.im.data[i] = static_cast<float>(rng.normal() * scale);
  }
  return s;
}

/// z̃ = H z, applied as a pointwise product in the 2-D DFT domain (periodic boundaries).
inline ComplexImage apply_transfer_function(const ComplexImage& z, const TransferFunctionSpec& spec) {
  validate(spec);
  if (spec.kind == TransferKind::identity) return z;
  const FrequencyResponse response =
      materialize_response(spec, z.width(), z.height());
  require(response.width == z.width() && response.height == z.height(), ErrorCode::dimension_mismatch,
          "transfer function response does not match image dims");
  std::vector<cplx> buf(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) buf[i] = {z.re.data[i], z.im.data[i]};
  fft::dft2(buf, z.width(), z.height());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] *= response.values[i];
  fft::dft2(buf, z.width(), z.height(), /*inverse=*/true);
  ComplexImage out(z.width(), z.height());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.re.data[i] = static_cast<float>(buf[i].real());
    out.im.data[i] = static_cast<float>(buf[i].imag());
  }
  return out;
}

/// z̃ = H (s ⊙ √r)
inline ComplexImage simulate_slc(const ReflectivityImage& r, const TransferFunctionSpec& spec, RngStream& rng) {
  require(!r.convolved, ErrorCode::invalid_argument, "simulate_slc expects an unconvolved reflectivity");
  ComplexImage z = sample_speckle_field(r.width(), r.height(), rng);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const float amp = std::sqrt(std::max(r.values.data[i], 0.0f));
    z.re.data[i] *= amp;
    z.im.data[i] *= amp;
  }
  return apply_transfer_function(z, spec);
}

inline FloatGrid intensity_of(const ComplexImage& z) {
  FloatGrid out(z.width(), z.height());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out.data[i] = z.re.data[i] * z.re.data[i] + z.im.data[i] * z.im.data[i];
  }
  return out;
}

/// r̃_k = Σ_ℓ |H_kℓ|² r_ℓ: circular convolution of r with the squared kernel magnitude.
inline ReflectivityImage effective_reflectivity(const ReflectivityImage& r, const TransferFunctionSpec& spec,
                                                double tol = 1e-6) {
  require(!r.convolved, ErrorCode::invalid_argument, "reflectivity is already convolved");
  ReflectivityImage out;
  out.convolved = true;
  if (spec.kind == TransferKind::identity) {
    out.values = r.values;
    return out;
  }
  const auto response = materialize_response(spec, r.width(), r.height());
  require(response.width == r.width() && response.height == r.height(), ErrorCode::dimension_mismatch,
          "transfer function response does not match reflectivity dims");
  if (!evenness_report(response, tol).independent) {
    throw Error(ErrorCode::not_independent, "transfer function fails the even-gain condition");
  }
  const auto h = spatial_kernel(response);
  std::vector<cplx> g(h.size()), rv(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    g[i] = std::norm(h[i]);
    rv[i] = r.values.data[i];
  }
  fft::dft2(g, r.width(), r.height());
  fft::dft2(rv, r.width(), r.height());
  for (std::size_t i = 0; i < g.size(); ++i) rv[i] *= g[i];
  fft::dft2(rv, r.width(), r.height(), /*inverse=*/true);
  out.values = FloatGrid(r.width(), r.height());
  for (std::size_t i = 0; i < rv.size(); ++i) {
    out.values.data[i] = std::max(static_cast<float>(rv[i].real()), kReflectivityFloor);
  }
  return out;
}

/// a = √I cos φ, b = √I sin φ with φ ~ U[-π, π).
inline ComplexImage pseudo_slc_from_intensity(const FloatGrid& intensity, RngStream& rng) {
  ComplexImage out(intensity.width, intensity.height);
  for (std::size_t i = 0; i < intensity.size(); ++i) {
    const float v = intensity.data[i];
    require(v >= 0.0f, ErrorCode::invalid_argument, "negative intensity at pixel " + std::to_string(i));
    const double phase = -std::numbers::pi + 2.0 * std::numbers::pi * rng.uniform();
    const double amp = std::sqrt(static_cast<double>(v));
    out.re.data[i] = static_cast<float>(amp * std::cos(phase));
    out.im.data[i] = static_cast<float>(amp * std::sin(phase));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense spatial operator for tiny images: H = M + jN, pixels indexed k = y·width + x.

inline constexpr std::size_t kMaxDensePixels = 256;

struct SpatialParts {
  Eigen::MatrixXd real;  // M
  Eigen::MatrixXd imag;  // N
};

inline SpatialParts spatial_parts(const TransferFunctionSpec& spec, std::size_t width, std::size_t height) {
  const std::size_t k = width * height;
  require(k <= kMaxDensePixels, ErrorCode::invalid_argument,
          "dense spatial operator limited to " + std::to_string(kMaxDensePixels) + " pixels");
  const auto response = materialize_response(spec, width, height);
  require(response.width == width && response.height == height, ErrorCode::dimension_mismatch,
          "response dims do not match requested operator dims");
  const auto h = spatial_kernel(response);
  SpatialParts parts{Eigen::MatrixXd(k, k), Eigen::MatrixXd(k, k)};
  for (std::size_t row = 0; row < k; ++row) {
    const std::size_t yk = row / width, xk = row % width;
    for (std::size_t col = 0; col < k; ++col) {
      const std::size_t yl = col / width, xl = col % width;
      const std::size_t dy = (yk + height - yl) % height, dx = (xk + width - xl) % width;
      const cplx v = h[dy * width + dx];
      parts.real(row, col) = v.real();
      parts.imag(row, col) = v.imag();
    }
  }
  return parts;
}

}  // namespace merlin::sim
