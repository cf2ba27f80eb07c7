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
#include <complex>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include "merlin/error.hpp"
#include "merlin/fft.hpp"
#include "merlin/image.hpp"

namespace merlin::prep {

using fft::cplx;

enum class Axis { azimuth, range };

/// Averaged spectrum magnitude along one axis; bin k of an N-point DFT.
struct SpectrumProfile {
  Axis axis = Axis::azimuth;
  std::vector<double> values;
};

inline void require_even_square(const ComplexImage& patch) {
  require(patch.width() == patch.height(), ErrorCode::invalid_argument, "patch must be square");
  require(patch.width() >= 2 && patch.width() % 2 == 0, ErrorCode::invalid_argument,
          "patch side must be even");
}

inline std::vector<cplx> to_complex(const ComplexImage& z) {
  std::vector<cplx> buf(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) buf[i] = {z.re.data[i], z.im.data[i]};
  return buf;
}

inline ComplexImage from_complex(const std::vector<cplx>& buf, std::size_t width, std::size_t height) {
  ComplexImage out(width, height);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.re.data[i] = static_cast<float>(buf[i].real());
    out.im.data[i] = static_cast<float>(buf[i].imag());
  }
  return out;
}

inline std::pair<SpectrumProfile, SpectrumProfile> profiles_from_spectrum(const std::vector<cplx>& spectrum,
                                                                          std::size_t n) {
  SpectrumProfile az{Axis::azimuth, std::vector<double>(n, 0.0)};
  SpectrumProfile rg{Axis::range, std::vector<double>(n, 0.0)};
  for (std::size_t ky = 0; ky < n; ++ky) {
    for (std::size_t kx = 0; kx < n; ++kx) {
      const double mag = std::abs(spectrum[ky * n + kx]);
      az.values[ky] += mag;
      rg.values[kx] += mag;
    }
  }
  for (auto& v : az.values) v /= static_cast<double>(n);
  for (auto& v : rg.values) v /= static_cast<double>(n);
  return {std::move(az), std::move(rg)};
}

/// Azimuth profile averages |FFT| over range bins (per row frequency), range profile over azimuth bins.
inline std::pair<SpectrumProfile, SpectrumProfile> compute_profiles(const ComplexImage& patch) {
  require_even_square(patch);
  auto spectrum = to_complex(patch);
  fft::dft2(spectrum, patch.width(), patch.height());
  return profiles_from_spectrum(spectrum, patch.width());
}

/// Circular self-convolution C[τ] = Σ_m p[m] p[(τ - m) mod N], evaluated with FFTs.
/// C[2δ] is the overlap of the profile translated by -δ with its mirror image.
inline std::vector<double> symmetry_scores(const std::vector<double>& p) {
  std::vector<cplx> buf(p.begin(), p.end());
  fft::dft1(buf);
  for (auto& v : buf) v *= v;
  fft::dft1(buf, /*inverse=*/true);
  std::vector<double> c(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) c[i] = buf[i].real();
  return c;
}

/// Profile mass within a quarter band of bin `center` (circular distance < N/4).
inline double central_mass(const std::vector<double>& p, long center) {
  const long n = static_cast<long>(p.size());
  double mass = 0.0;
  for (long k = 0; k < n; ++k) {
    long d = (k - center) % n;
    if (d < 0) d += n;
    d = std::min(d, n - d);
    if (4 * d < n) mass += p[static_cast<std::size_t>(k)];
  }
  return mass;
}

namespace detail {

inline bool nearly_equal(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max({std::abs(a), std::abs(b), 1e-300});
}

/// Smallest |δ| first, then the negative one.
inline bool preferred(long a, long b) {
  if (std::abs(a) != std::abs(b)) return std::abs(a) < std::abs(b);
  return a < b;
}

}  // namespace detail

/// Picks δ among candidates sharing the best score. Shifts δ and δ ± N/2 always
/// score identically; the one that puts the profile mass near zero frequency
/// wins, and any remaining tie falls back to smallest |δ|, then negative δ.
inline long resolve_shift_candidates(const std::vector<double>& p, const std::vector<long>& tied_half_lags) {
  const long n = static_cast<long>(p.size());
  std::vector<long> survivors;
  for (long half_lag : tied_half_lags) {
    long d1 = half_lag;
    long d2 = half_lag - n / 2;
    auto wrap = [n](long d) {
      d %= n;
      if (d < -n / 2) d += n;
      if (d >= n / 2) d -= n;
      return d;
    };
    d1 = wrap(d1);
    d2 = wrap(d2);
    const double m1 = central_mass(p, d1), m2 = central_mass(p, d2);
    if (detail::nearly_equal(m1, m2)) {
      survivors.push_back(d1);
      survivors.push_back(d2);
    } else {
      survivors.push_back(m1 > m2 ? d1 : d2);
    }
  }
  long best = survivors.front();
  for (long d : survivors) {
    if (detail::preferred(d, best)) best = d;
  }
  return best;
}

/// δ̂ = argmax_δ C[2δ] over δ ∈ [-N/2, N/2).
inline long estimate_spectrum_shift(const SpectrumProfile& profile) {
  const auto& p = profile.values;
  require(p.size() >= 2 && p.size() % 2 == 0, ErrorCode::invalid_argument, "profile length must be even and >= 2");
  for (double v : p) require(v >= 0 && std::isfinite(v), ErrorCode::invalid_argument, "profile must be nonnegative");
  const auto scores = symmetry_scores(p);
  const long n = static_cast<long>(p.size());
  double best = -INFINITY;
  for (long lag = 0; lag < n; lag += 2) best = std::max(best, scores[static_cast<std::size_t>(lag)]);
  std::vector<long> tied;
  for (long lag = 0; lag < n; lag += 2) {
    if (detail::nearly_equal(scores[static_cast<std::size_t>(lag)], best)) tied.push_back(lag / 2);
  }
  return resolve_shift_candidates(p, tied);
}

/// Multiplies by exp(-2πj(δ_az·y + δ_rg·x)/N).
inline ComplexImage demodulate(const ComplexImage& patch, long delta_az, long delta_rg) {
  const std::size_t n = patch.width();
  ComplexImage out(patch.width(), patch.height());
  for (std::size_t y = 0; y < patch.height(); ++y) {
    for (std::size_t x = 0; x < patch.width(); ++x) {
      const long cycles = (delta_az * static_cast<long>(y) + delta_rg * static_cast<long>(x)) % static_cast<long>(n);
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(cycles) / static_cast<double>(n);
      const cplx v = cplx(patch.re(x, y), patch.im(x, y)) * std::polar(1.0, angle);
      out.re(x, y) = static_cast<float>(v.real());
      out.im(x, y) = static_cast<float>(v.imag());
    }
  }
  return out;
}

struct RecenterResult {
  ComplexImage patch;
  long delta_azimuth = 0;
  long delta_range = 0;
};

inline RecenterResult recenter_patch(const ComplexImage& patch) {
  const auto [az, rg] = compute_profiles(patch);
  RecenterResult res;
  res.delta_azimuth = estimate_spectrum_shift(az);
  res.delta_range = estimate_spectrum_shift(rg);
  res.patch = (res.delta_azimuth == 0 && res.delta_range == 0)
                  ? patch
                  : demodulate(patch, res.delta_azimuth, res.delta_range);
  return res;
}

inline constexpr double kBandThreshold = 0.05;

struct MaskResult {
  ComplexImage patch;
  Grid<std::uint8_t> mask;  // 1 where the frequency bin is kept, indexed (kx, ky)
  double kept_fraction = 0.0;
};

/// Keeps a frequency (νx, νy) only when (±νx, ±νy) all lie inside the detected band.
/// The band on each axis is where the averaged magnitude exceeds `band_threshold` × peak.
inline MaskResult symmetric_mask(const ComplexImage& patch, double band_threshold = kBandThreshold) {
  require_even_square(patch);
  const std::size_t n = patch.width();
  auto spectrum = to_complex(patch);
  fft::dft2(spectrum, n, n);
  const auto [az, rg] = profiles_from_spectrum(spectrum, n);

  auto symmetric_support = [n, band_threshold](const std::vector<double>& p) {
    const double peak = *std::max_element(p.begin(), p.end());
    std::vector<bool> in(n), sym(n);
    for (std::size_t k = 0; k < n; ++k) in[k] = peak > 0 && p[k] > band_threshold * peak;
    for (std::size_t k = 0; k < n; ++k) sym[k] = in[k] && in[fft::mirror_bin(k, n)];
    return sym;
  };
  const auto keep_y = symmetric_support(az.values);
  const auto keep_x = symmetric_support(rg.values);

  MaskResult res;
  res.mask = Grid<std::uint8_t>(n, n, 0);
  std::size_t kept = 0;
  for (std::size_t ky = 0; ky < n; ++ky) {
    for (std::size_t kx = 0; kx < n; ++kx) {
      const bool keep = keep_y[ky] && keep_x[kx];
      res.mask(kx, ky) = keep ? 1 : 0;
      if (keep) {
        ++kept;
      } else {
        spectrum[ky * n + kx] = 0.0;
      }
    }
  }
  if (kept == 0) throw Error(ErrorCode::empty_support, "symmetric spectral mask is empty");
  res.kept_fraction = static_cast<double>(kept) / static_cast<double>(n * n);
  fft::dft2(spectrum, n, n, /*inverse=*/true);
  res.patch = from_complex(spectrum, n, n);
  return res;
}

// ---------------------------------------------------------------------------
// Log-domain normalization: č = (log max(x, x_floor) - lo) / (hi - lo).

inline constexpr double kLogFloor = 1e-10;

struct Normalization {
  double lo = 0.0;  // m
  double hi = 1.0;  // M
  friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct LogImage {
  FloatGrid values;
  Normalization norm;

  std::size_t width() const noexcept { return values.width; }
  std::size_t height() const noexcept { return values.height; }
};

inline float normalize_value(double x, const Normalization& norm) {
  return static_cast<float>((std::log(std::max(x, kLogFloor)) - norm.lo) / (norm.hi - norm.lo));
}

inline double denormalize_value(double v, const Normalization& norm) {
  return std::exp(v * (norm.hi - norm.lo) + norm.lo);
}

inline LogImage log_normalize(const FloatGrid& x, const Normalization& norm) {
  require(norm.hi > norm.lo, ErrorCode::invalid_argument, "normalization requires hi > lo");
  LogImage out{FloatGrid(x.width, x.height), norm};
  for (std::size_t i = 0; i < x.size(); ++i) out.values.data[i] = normalize_value(x.data[i], norm);
  return out;
}

inline FloatGrid log_denormalize(const LogImage& img) {
  require(img.norm.hi > img.norm.lo, ErrorCode::invalid_argument, "normalization requires hi > lo");
  FloatGrid out(img.width(), img.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = static_cast<float>(denormalize_value(img.values.data[i], img.norm));
  }
  return out;
}

/// Every second sample on each axis, starting at index 0.
inline ComplexImage decimate2(const ComplexImage& img) {
  require(img.width() >= 2 && img.height() >= 2, ErrorCode::invalid_argument, "decimate2 needs dims >= 2");
  ComplexImage out(img.width() / 2, img.height() / 2);
  for (std::size_t y = 0; y < out.height(); ++y) {
    for (std::size_t x = 0; x < out.width(); ++x) {
      out.re(x, y) = img.re(2 * x, 2 * y);
      out.im(x, y) = img.im(2 * x, 2 * y);
    }
  }
  return out;
}

}  // namespace merlin::prep
