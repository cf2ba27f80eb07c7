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

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "merlin/error.hpp"
#include "merlin/image.hpp"
#include "merlin/rng.hpp"
#include "merlin/speckle_sim.hpp"
#include "merlin/stats.hpp"

namespace merlin::eval {

inline constexpr double kPsnrCap = 99.0;
inline constexpr double kEnlCap = 1e6;
inline constexpr std::size_t kMinEnlRegion = 100;

/// 10·log10(peak² / MSE) on amplitudes √r, capped at 99 dB.
inline double psnr_amplitude(const ReflectivityImage& ref, const ReflectivityImage& est, double peak) {
  require_same_shape(ref.values, est.values, "psnr_amplitude");
  require(peak > 0 && std::isfinite(peak), ErrorCode::invalid_argument, "PSNR peak must be > 0");
  require(ref.values.size() > 0, ErrorCode::invalid_argument, "PSNR of empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < ref.values.size(); ++i) {
    const double d = std::sqrt(std::max(0.0, static_cast<double>(ref.values.data[i]))) -
                     std::sqrt(std::max(0.0, static_cast<double>(est.values.data[i])));
    se += d * d;
  }
  const double mse = se / static_cast<double>(ref.values.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

/// Largest amplitude of the reference image; the PSNR peak used throughout.
inline double amplitude_peak(const ReflectivityImage& ref) {
  double p = 0.0;
  for (float v : ref.values.data) p = std::max(p, std::sqrt(std::max(0.0, static_cast<double>(v))));
  return p;
}

/// I_k / r̂_k.
inline FloatGrid residual_ratio(const FloatGrid& noisy_intensity, const ReflectivityImage& est) {
  require_same_shape(noisy_intensity, est.values, "residual_ratio");
  FloatGrid out(noisy_intensity.width, noisy_intensity.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = static_cast<float>(static_cast<double>(noisy_intensity.data[i]) / est.values.data[i]);
  }
  return out;
}

/// mean² / variance, capped at 1e6 for (near) constant regions.
template <typename T>
double enl(std::span<const T> region) {
  require(region.size() >= kMinEnlRegion, ErrorCode::invalid_argument, "ENL region needs at least 100 pixels");
  const double m = stats::mean(region);
  const double v = stats::variance(region);
  if (v <= 0.0) return kEnlCap;
  return std::min(kEnlCap, m * m / v);
}

struct Region {
  std::size_t x = 0, y = 0, width = 0, height = 0;
};

inline std::vector<float> extract(const FloatGrid& g, const Region& r) {
  require(r.x + r.width <= g.width && r.y + r.height <= g.height, ErrorCode::invalid_argument,
          "region outside image");
  std::vector<float> out;
  out.reserve(r.width * r.height);
  for (std::size_t y = r.y; y < r.y + r.height; ++y) {
    for (std::size_t x = r.x; x < r.x + r.width; ++x) out.push_back(g(x, y));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Independence of real and imaginary parts

enum class Verdict { independent, dependent };

inline const char* to_string(Verdict v) { return v == Verdict::independent ? "independent" : "dependent"; }

inline constexpr double kAnalyticTolerance = 1e-6;
inline constexpr double kEmpiricalThreshold = 0.05;
inline constexpr std::size_t kAnalyticGrid = 64;

struct TransferVerdict {
  Verdict verdict = Verdict::independent;
  sim::EvennessReport report;
};

/// Even gain and one common phase of h̄(ν)·h̄(−ν) over the support. Parametric
/// specs are sampled on a 64×64 grid; explicit grids are used as given.
inline TransferVerdict check_transfer_independence(const sim::TransferFunctionSpec& spec,
                                                   double tol = kAnalyticTolerance) {
  sim::validate(spec);
  TransferVerdict out;
  if (spec.kind == sim::TransferKind::identity) return out;
  const auto resp = spec.kind == sim::TransferKind::explicit_frequency_grid
                        ? *spec.response
                        : sim::materialize_response(spec, kAnalyticGrid, kAnalyticGrid);
  out.report = sim::evenness_report(resp, tol);
  out.verdict = out.report.independent ? Verdict::independent : Verdict::dependent;
  return out;
}

/// M·diag(r)·Nᵀ − N·diag(r)·Mᵀ
inline Eigen::MatrixXd spatial_residual(const Eigen::MatrixXd& m, const Eigen::MatrixXd& n, const Eigen::VectorXd& r) {
  const Eigen::MatrixXd a = m * r.asDiagonal() * n.transpose();
  return a - a.transpose();
}

struct SpatialVerdict {
  Verdict verdict = Verdict::independent;
  double max_residual = 0.0;
};

inline constexpr double kSpatialTolerance = 1e-6;

/// Tests the residual on every elementary vector r = e_i and on `trials` random positive r.
inline SpatialVerdict check_spatial_condition(const Eigen::MatrixXd& m, const Eigen::MatrixXd& n, int trials,
                                              std::uint64_t seed = 0, double tol = kSpatialTolerance) {
  require(m.rows() == m.cols() && n.rows() == n.cols() && m.rows() == n.rows(), ErrorCode::dimension_mismatch,
          "M and N must be square and of equal size");
  require(static_cast<std::size_t>(m.rows()) <= sim::kMaxDensePixels, ErrorCode::invalid_argument,
          "spatial check limited to 256 pixels");
  const Eigen::Index k = m.rows();
  SpatialVerdict out;
  auto track = [&](const Eigen::VectorXd& r) {
    out.max_residual = std::max(out.max_residual, spatial_residual(m, n, r).cwiseAbs().maxCoeff());
  };
  for (Eigen::Index i = 0; i < k; ++i) track(Eigen::VectorXd::Unit(k, i));
  RngStream rng(seed, 0x5350);
  for (int t = 0; t < trials; ++t) {
    Eigen::VectorXd r(k);
    for (Eigen::Index i = 0; i < k; ++i) r(i) = 0.01 + rng.uniform();
    track(r);
  }
  out.verdict = out.max_residual < tol ? Verdict::independent : Verdict::dependent;
  return out;
}

inline constexpr std::size_t kEmpiricalFrame = 32;

struct EmpiricalResult {
  double statistic = 0.0;      // max |corr| over the offsets below
  double same_pixel = 0.0;     // corr(ã[p], b̃[p])
  std::size_t frames = 0;
};

/// Simulates unit-reflectivity speckle through H on 32×32 frames until `draws`
/// (ã, b̃) sample pairs are collected, then reports the largest absolute correlation
/// between ã at p and b̃ at p + d for d ∈ {(0,0), (±1,0), (0,±1)} (circular offsets).
inline EmpiricalResult empirical_independence(const sim::TransferFunctionSpec& spec, std::size_t draws,
                                              std::uint64_t seed = 0) {
  require(draws >= 10000, ErrorCode::invalid_argument, "empirical_independence needs at least 1e4 draws");
  const std::size_t n = kEmpiricalFrame;
  const std::size_t frames = (draws + n * n - 1) / (n * n);
  const auto spec_n = spec.kind == sim::TransferKind::explicit_frequency_grid ? spec : sim::materialize(spec, n, n);
  ReflectivityImage r{FloatGrid(n, n, 1.0f), false};
  const int offsets[5][2] = {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  std::vector<std::vector<double>> as(5), bs(5);
  RngStream root(seed, 0x454d50);
  for (std::size_t f = 0; f < frames; ++f) {
    RngStream rng = root.split(f);
    const auto z = sim::simulate_slc(r, spec_n, rng);
    for (int o = 0; o < 5; ++o) {
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          const std::size_t xb = (x + n + static_cast<std::size_t>(offsets[o][0] + static_cast<int>(n))) % n;
          const std::size_t yb = (y + n + static_cast<std::size_t>(offsets[o][1] + static_cast<int>(n))) % n;
          as[static_cast<std::size_t>(o)].push_back(z.re(x, y));
          bs[static_cast<std::size_t>(o)].push_back(z.im(xb, yb));
        }
      }
    }
  }
  EmpiricalResult out;
  out.frames = frames;
  for (std::size_t o = 0; o < 5; ++o) {
    const double c = stats::correlation<double>(as[o], bs[o]);
    if (o == 0) out.same_pixel = c;
    out.statistic = std::max(out.statistic, std::abs(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full-covariance likelihood for tiny images with a real spatial operator.

/// Σ ½ log r_k + b̃ᵀ [H·diag(r)·Hᵀ]⁻¹ b̃, Cholesky solve.
inline double full_likelihood(const ReflectivityImage& r, const FloatGrid& b, const sim::TransferFunctionSpec& spec) {
  require_same_shape(r.values, b, "full_likelihood");
  const std::size_t k = b.size();
  require(k <= sim::kMaxDensePixels, ErrorCode::invalid_argument, "full likelihood limited to 256 pixels");
  const auto parts = sim::spatial_parts(spec, b.width, b.height);
  require(parts.imag.cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, parts.real.cwiseAbs().maxCoeff()),
          ErrorCode::invalid_argument, "full likelihood needs a real-valued spatial operator");
  Eigen::VectorXd rv(static_cast<Eigen::Index>(k)), bv(static_cast<Eigen::Index>(k));
  double log_term = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    require(r.values.data[i] > 0.0f, ErrorCode::invalid_argument, "reflectivity must be positive");
    rv(static_cast<Eigen::Index>(i)) = r.values.data[i];
    bv(static_cast<Eigen::Index>(i)) = b.data[i];
    log_term += 0.5 * std::log(static_cast<double>(r.values.data[i]));
  }
  const Eigen::MatrixXd& h = parts.real;
  const Eigen::MatrixXd cov = h * rv.asDiagonal() * h.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
  const double lmin = eig.eigenvalues().minCoeff(), lmax = eig.eigenvalues().maxCoeff();
  if (!(lmin > 1e-12 * lmax)) {
    throw Error(ErrorCode::singular, "covariance is singular (condition estimate " +
                                         std::to_string(lmin > 0 ? lmax / lmin : INFINITY) + ")");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::singular, "covariance Cholesky factorization failed");
  return log_term + bv.dot(llt.solve(bv));
}

// ---------------------------------------------------------------------------
// Multi-instance PSNR protocol

inline constexpr int kNoisyInstances = 20;

struct ProtocolResult {
  stats::MeanSigma despeckled;  // PSNR (dB)
  stats::MeanSigma noisy;       // PSNR of √I against √r̃
  std::vector<double> despeckled_db;
  std::vector<double> noisy_db;
};

/// Draws `instances` noisy SLCs of `truth` through `spec`, despeckles each and scores
/// amplitude PSNR against the effective reflectivity, peak = its max amplitude.
inline ProtocolResult psnr_protocol(const ReflectivityImage& truth, const sim::TransferFunctionSpec& spec,
                                    const std::function<ReflectivityImage(const ComplexImage&)>& estimator,
                                    int instances, std::uint64_t seed) {
  require(instances >= 1, ErrorCode::invalid_argument, "need at least one instance");
  const auto ref = sim::effective_reflectivity(truth, spec);
  const double peak = amplitude_peak(ref);
  ProtocolResult out;
  RngStream root(seed, 0x50534e52);
  for (int i = 0; i < instances; ++i) {
    RngStream rng = root.split(static_cast<std::uint64_t>(i));
    const auto z = sim::simulate_slc(truth, spec, rng);
    out.noisy_db.push_back(psnr_amplitude(ref, {sim::intensity_of(z), true}, peak));
    out.despeckled_db.push_back(psnr_amplitude(ref, estimator(z), peak));
  }
  out.despeckled = stats::mean_sigma(out.despeckled_db);
  out.noisy = stats::mean_sigma(out.noisy_db);
  return out;
}

}  // namespace merlin::eval
