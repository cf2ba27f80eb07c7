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

#include <cmath>
#include <numbers>

#include "merlin/speckle_sim.hpp"
#include "merlin/stats.hpp"
#include "test_util.hpp"

namespace merlin {
namespace {

using sim::cplx;
using sim::TransferFunctionSpec;
using sim::Window;

std::vector<double> to_double(const FloatGrid& g) { return {g.data.begin(), g.data.end()}; }

ReflectivityImage constant_reflectivity(std::size_t w, std::size_t h, float v) {
  return {FloatGrid(w, h, v), false};
}

// Direct inverse DFT, independent of the FFT library.
std::vector<cplx> naive_idft2(const std::vector<cplx>& x, std::size_t w, std::size_t h) {
  std::vector<cplx> out(x.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      cplx acc = 0;
      for (std::size_t ky = 0; ky < h; ++ky) {
        for (std::size_t kx = 0; kx < w; ++kx) {
          const double phase = 2.0 * std::numbers::pi *
                               (static_cast<double>(kx * xx) / static_cast<double>(w) +
                                static_cast<double>(ky * y) / static_cast<double>(h));
          acc += x[ky * w + kx] * std::polar(1.0, phase);
        }
      }
      out[y * w + xx] = acc / static_cast<double>(w * h);
    }
  }
  return out;
}

TEST(SpeckleField, Moments) {
  RngStream rng(1, 0);
  const auto s = sim::sample_speckle_field(1000, 1000, rng);
  const auto re = to_double(s.re), im = to_double(s.im);
  const auto power = to_double(sim::intensity_of(s));
  EXPECT_NEAR(stats::mean<double>(power), 1.0, 0.005);
  EXPECT_NEAR(stats::variance<double>(re), 0.5, 0.005);
  EXPECT_NEAR(stats::variance<double>(im), 0.5, 0.005);
  EXPECT_NEAR(stats::correlation<double>(re, im), 0.0, 0.005);
  EXPECT_NEAR(stats::mean<double>(re), 0.0, 0.005);
}

TEST(SpeckleField, RejectsEmptyDims) {
  RngStream rng;
  EXPECT_MERLIN_ERROR(sim::sample_speckle_field(0, 3, rng), ErrorCode::invalid_argument);
}

TEST(Transfer, IdentityReturnsInput) {
  const auto z = testing::random_complex(17, 9, 3);
  const auto out = sim::apply_transfer_function(z, TransferFunctionSpec::identity());
  for (std::size_t i = 0; i < z.size(); ++i) {
    EXPECT_LT(std::abs(out.re.data[i] - z.re.data[i]), 1e-5);
    EXPECT_LT(std::abs(out.im.data[i] - z.im.data[i]), 1e-5);
  }
}

TEST(Transfer, ConstantTwoDoubles) {
  const auto z = testing::random_complex(12, 10, 4);
  const auto spec = TransferFunctionSpec::explicit_grid(sim::FrequencyResponse(12, 10, {2.0, 0.0}));
  const auto out = sim::apply_transfer_function(z, spec);
  for (std::size_t i = 0; i < z.size(); ++i) {
    EXPECT_NEAR(out.re.data[i], 2.0f * z.re.data[i], 1e-5);
    EXPECT_NEAR(out.im.data[i], 2.0f * z.im.data[i], 1e-5);
  }
}

TEST(Transfer, DimensionMismatch) {
  const auto spec = TransferFunctionSpec::explicit_grid(sim::FrequencyResponse(8, 8));
  EXPECT_MERLIN_ERROR(sim::apply_transfer_function(testing::random_complex(8, 4, 1), spec),
                      ErrorCode::dimension_mismatch);
}

TEST(Transfer, HammingWindowValuesOnFullBand) {
  const auto r = sim::materialize_response(TransferFunctionSpec::separable(1.0, Window::hamming, Window::rectangular),
                                           1, 8);
  // t = ν + 1/2 over the full band; w(t) = 0.54 - 0.46 cos(2πt).
  std::vector<double> expected(8);
  double power = 0;
  for (std::size_t k = 0; k < 8; ++k) {
    const double nu = k < 4 ? k / 8.0 : (static_cast<double>(k) - 8.0) / 8.0;
    expected[k] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * (nu + 0.5));
    power += expected[k] * expected[k];
  }
  const double scale = std::sqrt(8.0 / power);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_NEAR(r(0, k).real(), expected[k] * scale, 1e-12) << k;
    EXPECT_EQ(r(0, k).imag(), 0.0);
  }
  EXPECT_NEAR(r(0, 4).real(), 0.08 * scale, 1e-12);
}

TEST(Transfer, ImpulseResponseIsInverseDftOfWindow) {
  const std::size_t w = 12, h = 10;
  const auto spec = TransferFunctionSpec::separable(1.5, Window::hamming, Window::hamming);
  ComplexImage impulse(w, h);
  impulse.re(0, 0) = 1.0f;
  const auto out = sim::apply_transfer_function(impulse, spec);
  const auto response = sim::materialize_response(spec, w, h);
  const auto kernel = naive_idft2(response.values, w, h);
  for (std::size_t i = 0; i < kernel.size(); ++i) {
    EXPECT_NEAR(out.re.data[i], kernel[i].real(), 1e-6);
    EXPECT_NEAR(out.im.data[i], kernel[i].imag(), 1e-6);
  }
}

TEST(Transfer, Linearity) {
  const auto spec = TransferFunctionSpec::separable(1.7, Window::hann, Window::hamming, 0.1, -0.05);
  const auto z1 = testing::random_complex(16, 12, 5), z2 = testing::random_complex(16, 12, 6);
  const float alpha = -2.5f;
  ComplexImage mix(16, 12);
  for (std::size_t i = 0; i < mix.size(); ++i) {
    mix.re.data[i] = alpha * z1.re.data[i] + z2.re.data[i];
    mix.im.data[i] = alpha * z1.im.data[i] + z2.im.data[i];
  }
  const auto o1 = sim::apply_transfer_function(z1, spec), o2 = sim::apply_transfer_function(z2, spec);
  const auto om = sim::apply_transfer_function(mix, spec);
  double err = 0, norm = 0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    const double er = om.re.data[i] - (alpha * o1.re.data[i] + o2.re.data[i]);
    const double ei = om.im.data[i] - (alpha * o1.im.data[i] + o2.im.data[i]);
    err += er * er + ei * ei;
    norm += om.re.data[i] * om.re.data[i] + om.im.data[i] * om.im.data[i];
  }
  EXPECT_LT(std::sqrt(err / norm), 1e-5);
}

TEST(Transfer, SeparableIsUnitEnergy) {
  const auto spec = TransferFunctionSpec::separable(2.0, Window::hamming, Window::hann, 0.2, 0.0);
  const auto kernel = sim::spatial_kernel(sim::materialize_response(spec, 20, 16));
  double energy = 0;
  for (const auto& v : kernel) energy += std::norm(v);
  EXPECT_NEAR(energy, 1.0, 1e-12);
}

TEST(Transfer, ValidateRejectsBadParameters) {
  auto spec = TransferFunctionSpec::identity();
  spec.shift_range = 0.1;
  EXPECT_MERLIN_ERROR(sim::validate(spec), ErrorCode::invalid_argument);
  EXPECT_MERLIN_ERROR(sim::validate(TransferFunctionSpec::separable(0.5, Window::hann, Window::hann)),
                      ErrorCode::invalid_argument);
  TransferFunctionSpec missing;
  missing.kind = sim::TransferKind::explicit_frequency_grid;
  EXPECT_MERLIN_ERROR(sim::validate(missing), ErrorCode::invalid_argument);
}

TEST(Transfer, MaterializedDimsFollowTarget) {
  auto spec = sim::materialize(TransferFunctionSpec::separable(2.0, Window::hann, Window::hann), 8, 8);
  const auto other = sim::materialize_response(spec, 16, 12);
  EXPECT_EQ(other.width, 16u);
  EXPECT_EQ(other.height, 12u);
  const auto z = testing::random_complex(16, 12, 1);
  EXPECT_NO_THROW(sim::apply_transfer_function(z, spec));
}

TEST(Simulate, IdentityMeans) {
  RngStream rng(2, 0);
  const auto z = sim::simulate_slc(constant_reflectivity(1000, 1000, 4.0f), TransferFunctionSpec::identity(), rng);
  const auto intensity = to_double(sim::intensity_of(z));
  EXPECT_NEAR(stats::mean<double>(intensity), 4.0, 0.02);
  std::vector<double> amplitude(intensity.size());
  for (std::size_t i = 0; i < amplitude.size(); ++i) amplitude[i] = std::sqrt(intensity[i]);
  // Rayleigh mean √(π r)/2
  EXPECT_NEAR(stats::mean<double>(amplitude), std::sqrt(std::numbers::pi * 4.0) / 2.0, 0.01);
}

TEST(Simulate, RayleighMeanMonteCarloOracle) {
  // Oracle from polar sampling, independent of the simulator's Box-Muller path.
  RngStream oracle(77, 5);
  double acc = 0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) acc += 2.0 * std::sqrt(-std::log(1.0 - oracle.uniform()));
  EXPECT_NEAR(acc / n, std::sqrt(std::numbers::pi * 4.0) / 2.0, 0.005);
}

TEST(Simulate, UnitReflectivityIntensityVariance) {
  RngStream rng(3, 0);
  const auto z = sim::simulate_slc(constant_reflectivity(1000, 1000, 1.0f), TransferFunctionSpec::identity(), rng);
  EXPECT_NEAR(stats::variance<double>(to_double(sim::intensity_of(z))), 1.0, 0.02);
}

TEST(Simulate, KolmogorovSmirnovAgainstExponential) {
  RngStream rng(4, 0);
  const float r = 2.5f;
  const auto z = sim::simulate_slc(constant_reflectivity(400, 250, r), TransferFunctionSpec::identity(), rng);
  const auto intensity = to_double(sim::intensity_of(z));
  ASSERT_EQ(intensity.size(), 100000u);
  EXPECT_LT(stats::ks_statistic_exponential<double>(intensity, 1.0 / r), stats::ks_critical_alpha01(intensity.size()));
}

TEST(Simulate, RejectsConvolvedInput) {
  RngStream rng;
  ReflectivityImage r{FloatGrid(2, 2, 1.0f), true};
  EXPECT_MERLIN_ERROR(sim::simulate_slc(r, TransferFunctionSpec::identity(), rng), ErrorCode::invalid_argument);
}

TEST(Simulate, Reproducible) {
  const auto r = constant_reflectivity(32, 24, 3.0f);
  const auto spec = TransferFunctionSpec::separable(1.3, Window::hamming, Window::hamming);
  RngStream a(9, 1), b(9, 1), c(9, 2);
  const auto za = sim::simulate_slc(r, spec, a), zb = sim::simulate_slc(r, spec, b), zc = sim::simulate_slc(r, spec, c);
  EXPECT_EQ(za, zb);
  EXPECT_NE(za, zc);
}

TEST(Intensity, Examples) {
  ComplexImage z(2, 1);
  z.re.data = {3, 0};
  z.im.data = {4, 0};
  const auto i = sim::intensity_of(z);
  EXPECT_EQ(i.data[0], 25.0f);
  EXPECT_EQ(i.data[1], 0.0f);
  const auto r = testing::random_complex(9, 7, 8);
  const auto ir = sim::intensity_of(r);
  for (std::size_t k = 0; k < r.size(); ++k) {
    const float modulus = std::abs(std::complex<float>(r.re.data[k], r.im.data[k]));
    EXPECT_NEAR(ir.data[k], modulus * modulus, 1e-5f * (1.0f + ir.data[k]));
    EXPECT_GE(ir.data[k], 0.0f);
  }
}

TEST(EffectiveReflectivity, IdentityAndConstant) {
  ReflectivityImage r{FloatGrid(6, 5), false};
  for (std::size_t i = 0; i < r.values.size(); ++i) r.values.data[i] = 1.0f + static_cast<float>(i);
  const auto same = sim::effective_reflectivity(r, TransferFunctionSpec::identity());
  EXPECT_EQ(same.values, r.values);
  EXPECT_TRUE(same.convolved);
  const auto c = sim::effective_reflectivity(constant_reflectivity(16, 16, 7.0f),
                                             TransferFunctionSpec::separable(2.0, Window::hamming, Window::hann));
  for (float v : c.values.data) EXPECT_NEAR(v, 7.0f, 1e-4f);
}

TEST(EffectiveReflectivity, MatchesDoubleSum) {
  const std::size_t n = 4;
  RngStream rng(12, 0);
  // Real 3x3 kernel centered on the origin of a periodic 4x4 grid.
  std::vector<double> kernel(n * n, 0.0);
  for (long dy = -1; dy <= 1; ++dy) {
    for (long dx = -1; dx <= 1; ++dx) {
      kernel[static_cast<std::size_t>(((dy + 4) % 4) * 4 + (dx + 4) % 4)] = rng.normal();
    }
  }
  sim::FrequencyResponse response(n, n, {0.0, 0.0});
  for (std::size_t ky = 0; ky < n; ++ky) {
    for (std::size_t kx = 0; kx < n; ++kx) {
      cplx acc = 0;
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          acc += kernel[y * n + x] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(kx * x + ky * y) / 4.0);
        }
      }
      response(kx, ky) = acc;
    }
  }
  ReflectivityImage r{FloatGrid(n, n), false};
  for (auto& v : r.values.data) v = static_cast<float>(1.0 + 4.0 * rng.uniform());
  const auto out = sim::effective_reflectivity(r, TransferFunctionSpec::explicit_grid(response));
  for (std::size_t k = 0; k < n * n; ++k) {
    const std::size_t yk = k / n, xk = k % n;
    double expected = 0;
    for (std::size_t l = 0; l < n * n; ++l) {
      const std::size_t yl = l / n, xl = l % n;
      const double hk = kernel[((yk + n - yl) % n) * n + (xk + n - xl) % n];
      expected += hk * hk * r.values.data[l];
    }
    EXPECT_NEAR(out.values.data[k], expected, 1e-6 * std::max(1.0, expected)) << k;
  }
}

TEST(EffectiveReflectivity, RejectsOneSidedResponse) {
  const auto spec = TransferFunctionSpec::separable(2.0, Window::rectangular, Window::rectangular, 0.25, 0.0);
  EXPECT_MERLIN_ERROR(sim::effective_reflectivity(constant_reflectivity(16, 16, 1.0f), spec),
                      ErrorCode::not_independent);
}

TEST(EffectiveReflectivity, MatchesMonteCarloVarianceOfParts) {
  const std::size_t w = 8, h = 8;
  ReflectivityImage r{FloatGrid(w, h), false};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) r.values(x, y) = static_cast<float>(1.0 + x + 3.0 * (y % 3));
  }
  const auto spec = TransferFunctionSpec::separable(1.6, Window::hamming, Window::hann);
  const auto expected = sim::effective_reflectivity(r, spec);
  const int draws = 10000;
  std::vector<double> var_re(w * h, 0.0), var_im(w * h, 0.0), cross(w * h, 0.0);
  RngStream rng(21, 0);
  for (int d = 0; d < draws; ++d) {
    const auto z = sim::simulate_slc(r, spec, rng);
    for (std::size_t i = 0; i < w * h; ++i) {
      var_re[i] += z.re.data[i] * z.re.data[i];
      var_im[i] += z.im.data[i] * z.im.data[i];
      cross[i] += z.re.data[i] * z.im.data[i];
    }
  }
  // A variance estimate from 1e4 Gaussian draws has relative standard error √(2/1e4) ≈ 1.4%.
  double mean_abs_rel = 0, max_abs_rel = 0;
  for (std::size_t i = 0; i < w * h; ++i) {
    const double target = expected.values.data[i] / 2.0;
    for (double v : {var_re[i] / draws, var_im[i] / draws}) {
      const double rel = std::abs(v / target - 1.0);
      mean_abs_rel += rel / (2.0 * w * h);
      max_abs_rel = std::max(max_abs_rel, rel);
    }
    EXPECT_LT(std::abs(cross[i] / draws) / target, 0.06) << i;
  }
  EXPECT_LT(mean_abs_rel, 0.03);
  EXPECT_LT(max_abs_rel, 0.065);
}

TEST(PseudoSlc, Examples) {
  FloatGrid intensity(3, 1);
  intensity.data = {0.0f, 2.0f, 1e4f};
  RngStream rng(5, 5);
  const auto z = sim::pseudo_slc_from_intensity(intensity, rng);
  EXPECT_EQ(z.re.data[0], 0.0f);
  EXPECT_EQ(z.im.data[0], 0.0f);
  const auto back = sim::intensity_of(z);
  for (std::size_t i = 1; i < 3; ++i) EXPECT_NEAR(back.data[i] / intensity.data[i], 1.0, 1e-6);
  intensity.data[2] = -1.0f;
  EXPECT_MERLIN_ERROR(sim::pseudo_slc_from_intensity(intensity, rng), ErrorCode::invalid_argument);
}

TEST(PseudoSlc, PartsUncorrelated) {
  RngStream rng(6, 0);
  const auto z = sim::pseudo_slc_from_intensity(FloatGrid(1000, 1000, 1.0f), rng);
  EXPECT_NEAR(stats::correlation<double>(to_double(z.re), to_double(z.im)), 0.0, 0.005);
}

TEST(SpatialParts, MatchesFftApplication) {
  const std::size_t w = 6, h = 4;
  const auto spec = TransferFunctionSpec::separable(1.5, Window::hann, Window::hamming, 0.1, 0.0);
  const auto parts = sim::spatial_parts(spec, w, h);
  ASSERT_EQ(parts.real.rows(), 24);
  const auto x = testing::random_complex(w, h, 31);
  ComplexImage real_only = x;
  std::fill(real_only.im.data.begin(), real_only.im.data.end(), 0.0f);
  const auto out = sim::apply_transfer_function(real_only, spec);
  Eigen::VectorXd v(24);
  for (std::size_t i = 0; i < 24; ++i) v(static_cast<long>(i)) = x.re.data[i];
  const Eigen::VectorXd re = parts.real * v, im = parts.imag * v;
  for (std::size_t i = 0; i < 24; ++i) {
    EXPECT_NEAR(re(static_cast<long>(i)), out.re.data[i], 1e-5);
    EXPECT_NEAR(im(static_cast<long>(i)), out.im.data[i], 1e-5);
  }
  EXPECT_MERLIN_ERROR(sim::spatial_parts(spec, 17, 17), ErrorCode::invalid_argument);
}

TEST(Evenness, ReportsOneSidedAndEvenResponses) {
  const auto even = sim::materialize_response(TransferFunctionSpec::separable(2.0, Window::hamming, Window::hann), 16, 16);
  EXPECT_TRUE(sim::evenness_report(even, 1e-6).independent);
  const auto odd = sim::materialize_response(
      TransferFunctionSpec::separable(2.0, Window::rectangular, Window::rectangular, 0.25, 0.0), 16, 16);
  const auto rep = sim::evenness_report(odd, 1e-6);
  EXPECT_FALSE(rep.independent);
  EXPECT_GT(rep.gain_asymmetry, 0.5);
  // A constant phase factor keeps the parts independent.
  auto rotated = even;
  for (auto& v : rotated.values) v *= std::polar(1.0, 0.7);
  EXPECT_TRUE(sim::evenness_report(rotated, 1e-6).independent);
}

}  // namespace
}  // namespace merlin
