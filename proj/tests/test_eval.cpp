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
#include <numeric>

#include <Eigen/LU>

#include "merlin/eval.hpp"
#include "merlin/losses.hpp"
#include "test_util.hpp"

namespace merlin {
namespace {

using sim::TransferFunctionSpec;
using sim::Window;

ReflectivityImage refl(const FloatGrid& g) { return {g, false}; }

TransferFunctionSpec centered_hamming() { return TransferFunctionSpec::separable(1.0, Window::hamming, Window::hamming); }
TransferFunctionSpec one_sided_band() {
  return TransferFunctionSpec::separable(2.0, Window::rectangular, Window::rectangular, 0.25, 0.0);
}

TEST(Psnr, Examples) {
  const FloatGrid ref(8, 8, 1e4f);
  EXPECT_EQ(eval::psnr_amplitude(refl(ref), refl(ref), 100.0), 99.0);
  // Amplitudes 100 vs 90 at peak 100: 10·log10(10⁴ / 10²) = 20 dB.
  EXPECT_NEAR(eval::psnr_amplitude(refl(ref), refl(FloatGrid(8, 8, 8100.0f)), 100.0), 20.0, 1e-9);
  EXPECT_EQ(eval::amplitude_peak(refl(ref)), 100.0);
  EXPECT_MERLIN_ERROR(eval::psnr_amplitude(refl(ref), refl(FloatGrid(8, 7)), 1.0), ErrorCode::dimension_mismatch);
  EXPECT_MERLIN_ERROR(eval::psnr_amplitude(refl(ref), refl(ref), 0.0), ErrorCode::invalid_argument);
}

TEST(Psnr, InvariantUnderJointPermutation) {
  RngStream rng(1, 0);
  FloatGrid a(16, 16), b(16, 16);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a.data[i] = static_cast<float>(1.0 + 50.0 * rng.uniform());
    b.data[i] = static_cast<float>(1.0 + 50.0 * rng.uniform());
  }
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm, rng);
  FloatGrid pa(16, 16), pb(16, 16);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    pa.data[i] = a.data[perm[i]];
    pb.data[i] = b.data[perm[i]];
  }
  EXPECT_NEAR(eval::psnr_amplitude(refl(a), refl(b), 7.0), eval::psnr_amplitude(refl(pa), refl(pb), 7.0), 1e-9);
}

TEST(Residual, Examples) {
  RngStream rng(2, 0);
  const auto z = sim::simulate_slc(refl(FloatGrid(500, 200, 3.0f)), TransferFunctionSpec::identity(), rng);
  const auto intensity = sim::intensity_of(z);
  for (float v : eval::residual_ratio(intensity, refl(intensity)).data) EXPECT_EQ(v, 1.0f);

  const auto ratio = eval::residual_ratio(intensity, refl(FloatGrid(500, 200, 3.0f)));
  EXPECT_NEAR(stats::mean<float>(ratio.data), 1.0, 0.01);
  EXPECT_NEAR(eval::enl<float>(ratio.data), 1.0, 0.05);
  const auto half = eval::residual_ratio(intensity, refl(FloatGrid(500, 200, 1.5f)));
  EXPECT_NEAR(stats::mean<float>(half.data), 2.0, 0.02);
}

TEST(Enl, Examples) {
  EXPECT_EQ(eval::enl<float>(std::vector<float>(100, 4.0f)), 1e6);
  EXPECT_MERLIN_ERROR(eval::enl<float>(std::vector<float>(99, 4.0f)), ErrorCode::invalid_argument);
  RngStream rng(3, 0);
  std::vector<double> one(100000), four(100000);
  for (auto& v : one) v = -std::log(1.0 - rng.uniform());
  for (auto& v : four) {
    v = 0;
    for (int l = 0; l < 4; ++l) v += -std::log(1.0 - rng.uniform()) / 4.0;
  }
  EXPECT_NEAR(eval::enl<double>(one), 1.0, 0.05);
  EXPECT_NEAR(eval::enl<double>(four), 4.0, 0.2);
}

TEST(Enl, RegionExtraction) {
  FloatGrid g(5, 4);
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = static_cast<float>(i);
  EXPECT_EQ(eval::extract(g, {1, 2, 3, 2}), (std::vector<float>{11, 12, 13, 16, 17, 18}));
  EXPECT_MERLIN_ERROR(eval::extract(g, {3, 0, 3, 1}), ErrorCode::invalid_argument);
}

TEST(TransferIndependence, Matrix) {
  EXPECT_EQ(eval::check_transfer_independence(TransferFunctionSpec::identity()).verdict, eval::Verdict::independent);
  EXPECT_EQ(eval::check_transfer_independence(centered_hamming()).verdict, eval::Verdict::independent);
  EXPECT_EQ(eval::check_transfer_independence(one_sided_band()).verdict, eval::Verdict::dependent);
  EXPECT_STREQ(eval::to_string(eval::Verdict::dependent), "dependent");
}

TEST(TransferIndependence, GlobalPhaseAllowed) {
  auto resp = sim::materialize_response(centered_hamming(), 16, 16);
  for (auto& v : resp.values) v *= std::polar(1.0, 1.1);
  EXPECT_EQ(eval::check_transfer_independence(TransferFunctionSpec::explicit_grid(resp)).verdict,
            eval::Verdict::independent);
  // A linear phase ramp (a spatial shift) is also fine: h̄(ν)·h̄(−ν) keeps one phase.
  auto ramp = sim::materialize_response(centered_hamming(), 16, 16);
  for (std::size_t k = 0; k < 16; ++k) {
    for (std::size_t j = 0; j < 16; ++j) ramp(j, k) *= std::polar(1.0, 2.0 * M_PI * fft::bin_frequency(j, 16) * 3.0);
  }
  EXPECT_EQ(eval::check_transfer_independence(TransferFunctionSpec::explicit_grid(ramp)).verdict,
            eval::Verdict::independent);
}

Eigen::MatrixXd random_matrix(Eigen::Index k, RngStream& rng) {
  Eigen::MatrixXd m(k, k);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

TEST(SpatialCondition, Examples) {
  RngStream rng(4, 0);
  const Eigen::Index k = 16;
  const Eigen::MatrixXd q = random_matrix(k, rng);
  EXPECT_EQ(eval::check_spatial_condition(q, Eigen::MatrixXd::Zero(k, k), 5).verdict, eval::Verdict::independent);

  Eigen::VectorXd lambda(k), tau(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    lambda(i) = rng.normal();
    tau(i) = rng.normal();
  }
  const auto good = eval::check_spatial_condition(q * lambda.asDiagonal(), q * tau.asDiagonal(), 10);
  EXPECT_EQ(good.verdict, eval::Verdict::independent);
  EXPECT_LT(good.max_residual, 1e-10);

  const auto bad = eval::check_spatial_condition(random_matrix(k, rng), random_matrix(k, rng), 10);
  EXPECT_EQ(bad.verdict, eval::Verdict::dependent);
  EXPECT_MERLIN_ERROR(eval::check_spatial_condition(q, Eigen::MatrixXd::Zero(k, k + 1), 1),
                      ErrorCode::dimension_mismatch);
}

TEST(SpatialCondition, ElementaryVectorResidualIsColumnCommutator) {
  RngStream rng(5, 0);
  const Eigen::Index k = 9;
  const auto m = random_matrix(k, rng), n = random_matrix(k, rng);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::MatrixXd expected = m.col(i) * n.col(i).transpose() - n.col(i) * m.col(i).transpose();
    EXPECT_LT((eval::spatial_residual(m, n, Eigen::VectorXd::Unit(k, i)) - expected).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(SpatialCondition, AgreesWithTransferCheck) {
  for (const auto& spec : {TransferFunctionSpec::identity(), centered_hamming(), one_sided_band()}) {
    const auto parts = sim::spatial_parts(spec, 8, 8);
    EXPECT_EQ(eval::check_spatial_condition(parts.real, parts.imag, 3).verdict,
              eval::check_transfer_independence(spec).verdict);
  }
}

TEST(EmpiricalIndependence, Matrix) {
  const auto id = eval::empirical_independence(TransferFunctionSpec::identity(), 100000, 1);
  EXPECT_LT(id.statistic, 0.01);
  EXPECT_EQ(id.frames, 98u);
  EXPECT_LT(eval::empirical_independence(centered_hamming(), 100000, 2).statistic, 0.02);
  EXPECT_GT(eval::empirical_independence(one_sided_band(), 100000, 3).statistic, 0.1);
  EXPECT_MERLIN_ERROR(eval::empirical_independence(TransferFunctionSpec::identity(), 9999), ErrorCode::invalid_argument);
}

TEST(EmpiricalIndependence, AgreesWithAnalyticVerdict) {
  for (const auto& spec : {TransferFunctionSpec::identity(), centered_hamming(), one_sided_band(),
                           TransferFunctionSpec::separable(1.5, Window::hann, Window::rectangular)}) {
    const bool analytic = eval::check_transfer_independence(spec).verdict == eval::Verdict::independent;
    const bool empirical = eval::empirical_independence(spec, 100000, 4).statistic < eval::kEmpiricalThreshold;
    EXPECT_EQ(analytic, empirical);
  }
}

TEST(FullLikelihood, IdentityReducesToSeparableForm) {
  const FloatGrid r(2, 2, 1.0f), b(2, 2, 1.0f);
  EXPECT_NEAR(eval::full_likelihood(refl(r), b, TransferFunctionSpec::identity()), 4.0, 1e-12);

  RngStream rng(6, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t w = 1 + rng.uniform_index(8), h = 1 + rng.uniform_index(8);
    FloatGrid rv(w, h), bv(w, h);
    std::vector<double> r_log, b_log;
    double direct = 0;
    for (std::size_t i = 0; i < rv.size(); ++i) {
      rv.data[i] = static_cast<float>(0.1 + 5.0 * rng.uniform());
      bv.data[i] = static_cast<float>(rng.normal());
      r_log.push_back(std::log(static_cast<double>(rv.data[i])));
      b_log.push_back(std::log(std::abs(static_cast<double>(bv.data[i]))));
      direct += 0.5 * r_log.back() + static_cast<double>(bv.data[i]) * bv.data[i] / rv.data[i];
    }
    const double full = eval::full_likelihood(refl(rv), bv, TransferFunctionSpec::identity());
    EXPECT_NEAR(full, direct, 1e-8 * std::max(1.0, std::abs(direct)));
    EXPECT_NEAR(full, loss::merlin_loss(r_log, b_log), 1e-8 * std::max(1.0, std::abs(direct)));
  }
}

// Independent path: spatial kernel by a direct inverse DFT of the sampled response,
// covariance built entry by entry, solved with full-pivot LU.
TEST(FullLikelihood, MatchesDenseLuOracleOnHamming) {
  const std::size_t w = 8, h = 8, k = w * h;
  const auto spec = centered_hamming();
  const auto resp = sim::materialize_response(spec, w, h);
  std::vector<double> kernel(k, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::complex<double> acc{};
      for (std::size_t ky = 0; ky < h; ++ky) {
        for (std::size_t kx = 0; kx < w; ++kx) {
          const double ph = 2.0 * M_PI * (static_cast<double>(kx * x) / w + static_cast<double>(ky * y) / h);
          acc += resp(kx, ky) * std::polar(1.0, ph);
        }
      }
      EXPECT_LT(std::abs(acc.imag()) / k, 1e-12);
      kernel[y * w + x] = acc.real() / static_cast<double>(k);
    }
  }
  RngStream rng(7, 0);
  FloatGrid r(w, h), b(w, h);
  for (std::size_t i = 0; i < k; ++i) {
    r.data[i] = static_cast<float>(0.5 + 4.0 * rng.uniform());
    b.data[i] = static_cast<float>(rng.normal());
  }
  Eigen::MatrixXd hm(k, k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t q = 0; q < k; ++q) {
      const std::size_t dx = (p % w + w - q % w) % w, dy = (p / w + h - q / w) % h;
      hm(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) = kernel[dy * w + dx];
    }
  }
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(k); ++i) {
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(k); ++j) {
      for (Eigen::Index l = 0; l < static_cast<Eigen::Index>(k); ++l) {
        cov(i, j) += hm(i, l) * r.data[static_cast<std::size_t>(l)] * hm(j, l);
      }
    }
  }
  Eigen::VectorXd bv(k);
  double oracle = 0;
  for (std::size_t i = 0; i < k; ++i) {
    bv(static_cast<Eigen::Index>(i)) = b.data[i];
    oracle += 0.5 * std::log(static_cast<double>(r.data[i]));
  }
  oracle += bv.dot(cov.fullPivLu().solve(bv));
  const double value = eval::full_likelihood(refl(r), b, spec);
  EXPECT_NEAR(value, oracle, 1e-6 * std::abs(oracle));
}

TEST(FullLikelihood, Errors) {
  // A band-limited response zeroes frequencies, so the covariance is singular.
  const auto band = TransferFunctionSpec::separable(2.0, Window::rectangular, Window::rectangular);
  EXPECT_MERLIN_ERROR(eval::full_likelihood(refl(FloatGrid(8, 8, 1.0f)), FloatGrid(8, 8, 1.0f), band),
                      ErrorCode::singular);
  EXPECT_MERLIN_ERROR(
      eval::full_likelihood(refl(FloatGrid(8, 8, 1.0f)), FloatGrid(8, 8, 1.0f), one_sided_band()),
      ErrorCode::invalid_argument);
  EXPECT_MERLIN_ERROR(eval::full_likelihood(refl(FloatGrid(17, 16, 1.0f)), FloatGrid(17, 16, 1.0f),
                                            TransferFunctionSpec::identity()),
                      ErrorCode::invalid_argument);
  EXPECT_MERLIN_ERROR(eval::full_likelihood(refl(FloatGrid(2, 2, 1.0f)), FloatGrid(2, 3, 1.0f),
                                            TransferFunctionSpec::identity()),
                      ErrorCode::dimension_mismatch);
}

TEST(Protocol, NoisyBaselineAndReproducibility) {
  ReflectivityImage truth{FloatGrid(32, 32), false};
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 32; ++x) truth.values(x, y) = static_cast<float>(10.0 + 3.0 * x);
  }
  const auto spec = TransferFunctionSpec::identity();
  const auto oracle = [&](const ComplexImage&) { return truth; };
  const auto a = eval::psnr_protocol(truth, spec, oracle, eval::kNoisyInstances, 8);
  const auto b = eval::psnr_protocol(truth, spec, oracle, eval::kNoisyInstances, 8);
  EXPECT_EQ(a.noisy_db, b.noisy_db);
  EXPECT_EQ(a.noisy_db.size(), 20u);
  EXPECT_EQ(a.despeckled.mean, 99.0);
  EXPECT_EQ(a.despeckled.sigma, 0.0);
  EXPECT_LT(a.noisy.mean, 20.0);
  EXPECT_GT(a.noisy.sigma, 0.0);
  const auto sigma = stats::mean_sigma(a.noisy_db);
  EXPECT_EQ(sigma.mean, a.noisy.mean);
}

}  // namespace
}  // namespace merlin
