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

#include "merlin/despeckle.hpp"
#include "merlin/speckle_sim.hpp"
#include "merlin/stats.hpp"
#include "test_util.hpp"

namespace merlin {
namespace {

// Zero-trunk network: log quantity in, the same log quantity out.
train::Checkpoint identity_checkpoint(const std::string& mode = "merlin", int levels = 2) {
  net::UNetConfig cfg;
  cfg.levels = levels;
  cfg.base_channels = 4;
  auto net = net::build_unet(cfg);
  train::Checkpoint c;
  c.mode = mode;
  c.unet = cfg;
  c.norm = {-12.0, 9.0};
  c.parameters = train::export_parameters(net);
  return c;
}

ComplexImage speckle(std::size_t w, std::size_t h, float r, std::uint64_t seed) {
  RngStream rng(seed, 5);
  return sim::simulate_slc({FloatGrid(w, h, r), false}, sim::TransferFunctionSpec::identity(), rng);
}

ReflectivityImage refl(const FloatGrid& g) { return {g, true}; }

TEST(Component, IdentityCheckpointReturnsPartSquared) {
  const auto z = speckle(32, 16, 7.0f, 1);
  const auto out = infer::despeckle_component(identity_checkpoint(), z.re);
  ASSERT_TRUE(out.values.same_shape(z.re));
  for (std::size_t i = 0; i < z.re.size(); ++i) {
    const double sq = static_cast<double>(z.re.data[i]) * z.re.data[i];
    EXPECT_NEAR(out.values.data[i], sq, 1e-4 * sq + 1e-30) << i;
  }
}

TEST(Component, DeterministicAndPositive) {
  auto ckpt = identity_checkpoint();
  auto net = train::instantiate(ckpt);
  net::initialize(net, RngStream(9, 9));
  ckpt.parameters = train::export_parameters(net);
  const auto z = speckle(16, 16, 2.0f, 2);
  const auto a = infer::despeckle_component(ckpt, z.im);
  const auto b = infer::despeckle_component(ckpt, z.im);
  EXPECT_EQ(a.values, b.values);
  FloatGrid zeros(16, 16, 0.0f);
  for (float v : infer::despeckle_component(ckpt, zeros).values.data) EXPECT_GT(v, 0.0f);
}

TEST(Component, RejectsInadmissibleSizeAndBadNormalization) {
  EXPECT_MERLIN_ERROR(infer::despeckle_component(identity_checkpoint(), FloatGrid(6, 8, 1.0f)),
                      ErrorCode::shape_mismatch);
  auto c = identity_checkpoint();
  c.norm = {1.0, 1.0};
  EXPECT_MERLIN_ERROR(infer::Despeckler{c}, ErrorCode::config);
}

TEST(Combine, Examples) {
  const FloatGrid x(3, 2, 5.0f);
  EXPECT_EQ(infer::combine_estimates(refl(x), refl(x)).values, x);
  EXPECT_EQ(infer::combine_estimates(refl(FloatGrid(2, 2, 2.0f)), refl(FloatGrid(2, 2, 4.0f))).values,
            FloatGrid(2, 2, 3.0f));
  EXPECT_NEAR(infer::combine_estimates(refl(FloatGrid(1, 1, 2.0f)), refl(FloatGrid(1, 1, 8.0f)), infer::Fusion::log)
                  .values.data[0],
              4.0, 1e-6);
  EXPECT_MERLIN_ERROR(infer::combine_estimates(refl(FloatGrid(2, 2)), refl(FloatGrid(2, 3))),
                      ErrorCode::dimension_mismatch);
}

TEST(Combine, Commutative) {
  const auto z = speckle(20, 20, 3.0f, 3);
  const auto a = refl(infer::square_of(z.re)), b = refl(infer::square_of(z.im));
  EXPECT_EQ(infer::combine_estimates(a, b).values, infer::combine_estimates(b, a).values);
}

TEST(Combine, HalvesEstimatorVariance) {
  const auto z = speckle(400, 250, 6.0f, 4);
  FloatGrid single(400, 250), a2(400, 250), b2(400, 250);
  for (std::size_t i = 0; i < z.size(); ++i) {
    a2.data[i] = 2.0f * z.re.data[i] * z.re.data[i];
    b2.data[i] = 2.0f * z.im.data[i] * z.im.data[i];
  }
  const auto combined = infer::combine_estimates(refl(a2), refl(b2));
  const double ratio = stats::variance<float>(combined.values.data) / stats::variance<float>(a2.data);
  EXPECT_NEAR(ratio, 0.5, 0.05);
}

TEST(Tiling, IdentityCheckpointTiledEqualsUntiled) {
  const auto ckpt = identity_checkpoint();
  infer::Despeckler d(ckpt);
  const auto z = speckle(100, 70, 4.0f, 5);
  const auto q = infer::square_of(z.re);
  FloatGrid direct(100, 70);
  // Pointwise network: any tile containing the pixel gives the same value.
  const auto whole = d.run(crop_reflect(q, 0, 0, 128, 128));
  for (std::size_t y = 0; y < 70; ++y) {
    for (std::size_t x = 0; x < 100; ++x) direct(x, y) = whole(x, y);
  }
  infer::TileOptions opt;
  opt.tile = 48;
  opt.margin = 16;
  EXPECT_EQ(infer::despeckle_tiled(d, q, opt), direct);
  opt.tile = 128;
  opt.margin = 32;
  EXPECT_EQ(infer::despeckle_tiled(d, q, opt), direct);
}

TEST(Tiling, ExactlyOneTileMatchesUntiledPath) {
  auto ckpt = identity_checkpoint();
  auto net = train::instantiate(ckpt);
  net::initialize(net, RngStream(4, 4));
  ckpt.parameters = train::export_parameters(net);
  infer::Despeckler d(ckpt);
  const auto q = infer::square_of(speckle(64, 64, 4.0f, 6).im);
  infer::TileOptions opt;
  opt.tile = 64;
  EXPECT_EQ(infer::despeckle_tiled(d, q, opt), d.run(q));
}

TEST(Tiling, OutputDimsAndOptionErrors) {
  const auto ckpt = identity_checkpoint();
  infer::Despeckler d(ckpt);
  const FloatGrid q(37, 91, 2.0f);
  infer::TileOptions opt;
  opt.tile = 64;
  opt.margin = 16;
  const auto out = infer::despeckle_tiled(d, q, opt);
  EXPECT_TRUE(out.same_shape(q));
  opt.margin = 8;
  EXPECT_MERLIN_ERROR(infer::despeckle_tiled(d, q, opt), ErrorCode::invalid_argument);
  opt.margin = 16;
  opt.tile = 30;
  EXPECT_MERLIN_ERROR(infer::despeckle_tiled(d, q, opt), ErrorCode::invalid_argument);
}

TEST(Image, IdentityCheckpointGivesMeanOfSquaredParts) {
  const auto z = speckle(80, 50, 9.0f, 7);
  infer::TileOptions opt;
  opt.tile = 64;
  opt.margin = 16;
  const auto out = infer::despeckle_image(identity_checkpoint(), z, opt);
  ASSERT_TRUE(out.values.same_shape(z.re));
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double expected = 0.5 * (static_cast<double>(z.re.data[i]) * z.re.data[i] +
                                   static_cast<double>(z.im.data[i]) * z.im.data[i]);
    EXPECT_NEAR(out.values.data[i], expected, 1e-4 * expected + 1e-30) << i;
  }
  for (float v : out.values.data) EXPECT_GT(v, 0.0f);
}

TEST(Image, SupervisedCheckpointUsesIntensity) {
  const auto z = speckle(32, 32, 2.0f, 8);
  infer::TileOptions opt;
  opt.tile = 32;
  opt.margin = 16;
  const auto out = infer::despeckle_image(identity_checkpoint("supervised"), z, opt);
  const auto intensity = sim::intensity_of(z);
  for (std::size_t i = 0; i < z.size(); ++i) {
    EXPECT_NEAR(out.values.data[i], intensity.data[i], 1e-4 * intensity.data[i] + 1e-30);
  }
}

// A trained network has a receptive field wider than one pixel, so tiling changes
// the context each pixel sees. Compare two tilings at the default margin across the
// seams of the finer one.
TEST(Image, SeamsBoundedOnTrainedCheckpoint) {
  train::TrainConfig cfg;
  cfg.patch_size = 32;
  cfg.stride = 16;
  cfg.batch_size = 8;
  cfg.epochs = 12;
  cfg.lr_schedule = {{0, 2e-3}};
  cfg.unet.levels = 2;
  cfg.unet.base_channels = 8;
  const auto ckpt = train::train({speckle(96, 96, 20.0f, 9), speckle(96, 96, 20.0f, 10)}, cfg);

  const auto z = speckle(160, 160, 20.0f, 11);
  infer::TileOptions a, b;
  a.tile = 96;
  b.tile = 128;
  const auto ra = infer::despeckle_image(ckpt, z, a);
  const auto rb = infer::despeckle_image(ckpt, z, b);
  // Seams of tiling `a` sit at multiples of its 32-px core.
  double worst = 0;
  for (std::size_t s = 32; s < 160; s += 32) {
    for (std::size_t y = 0; y < 160; ++y) {
      for (std::size_t x : {s - 1, s}) {
        const double u = ra.values(x, y), v = rb.values(x, y);
        worst = std::max(worst, std::abs(u - v) / v);
      }
    }
  }
  EXPECT_LT(worst, 0.05);
}

}  // namespace
}  // namespace merlin
