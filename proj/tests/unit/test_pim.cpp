#include <gtest/gtest.h>

#include "clsr/pim.hpp"
#include "test_support.hpp"

namespace clsr {
namespace {

TEST(Pim, ChannelRule) {
  PimConfig p;
  EXPECT_EQ(p.channels(32), 3);
  EXPECT_EQ(p.channels(16), 1);
  EXPECT_EQ(p.channels(4), 1);
  p.channel_divisor = 4;
  EXPECT_EQ(p.channels(16), 4);
}

TEST(Pim, ZeroWeightsGiveZeroFeaturesAndBilinearSr) {
  ModelConfig cfg = testing::toy_config();
  ParamStore<float> store;
  auto rng = make_rng(0, "pim");
  Pim<float> pim(cfg, store, rng);
  testing::zero_params(store, "pim.");
  std::mt19937_64 data(1);
  const Image x = testing::random_image(3, 10, 12, data);
  const auto out = pim.forward(Var<float>::constant(x), true);
  ASSERT_EQ(out.stage_features.size(), cfg.backbone.blocks_per_stage.size());
  for (const auto& f : out.stage_features) {
    EXPECT_EQ(f.shape(), (Shape{1, 10, 12}));
    for (float v : f.value().storage()) EXPECT_EQ(v, 0.0f);
  }
  ASSERT_TRUE(out.has_sr());
  EXPECT_EQ(out.sr_context.value(), resize_bilinear(x, 20, 24));
  EXPECT_FALSE(pim.forward(Var<float>::constant(x), false).has_sr());
}

TEST(Pim, OneStageByHand) {
  ModelConfig cfg = testing::toy_config();
  cfg.backbone.blocks_per_stage = {1};
  ParamStore<double> store;
  auto rng = make_rng(0, "pim");
  Pim<double> pim(cfg, store, rng);
  ASSERT_EQ(pim.channels(), 1);
  testing::zero_params(store, "pim.");
  auto set = [&](const char* name, std::size_t i, double v) { store.get(name).node()->value[i] = v; };
  // Centre taps only, so every pixel is an independent 1x1 computation.
  set("pim.shallow.weight", 4, 0.5);
  set("pim.shallow.weight", 13, -1.0);
  set("pim.shallow.weight", 22, 2.0);
  set("pim.shallow.bias", 0, 0.1);
  set("pim.stage0.block0.conv1.weight", 4, 1.5);
  set("pim.stage0.block0.conv1.bias", 0, -0.2);
  set("pim.stage0.block0.conv2.weight", 4, -0.5);
  set("pim.stage0.block0.conv2.bias", 0, 0.05);
  std::mt19937_64 data(2);
  const Tensor<double> x = testing::random_tensor<double>({3, 6, 6}, data);
  const auto out = pim.forward(Var<double>::constant(x), false);
  ASSERT_EQ(out.stage_features.size(), 1u);
  for (int y = 0; y < 6; ++y)
    for (int xx = 0; xx < 6; ++xx) {
      const double s = 0.5 * x.at(0, y, xx) - 1.0 * x.at(1, y, xx) + 2.0 * x.at(2, y, xx) + 0.1;
      const double expected = s + (-0.5) * std::max(0.0, 1.5 * s - 0.2) + 0.05;
      EXPECT_NEAR(out.stage_features[0].value().at(0, y, xx), expected, 1e-14);
    }
}

TEST(CropFuse, ZeroFeatureIsIdentity) {
  std::mt19937_64 data(3);
  const auto z = Var<float>::constant(testing::random_tensor<float>({4, 5, 5}, data, -1, 1));
  const auto p = Var<float>::constant(Tensor<float>({1, 12, 12}));
  EXPECT_EQ(crop_fuse(z, p, {2, 3, 5, 5}).value(), z.value());
}

TEST(CropFuse, OnesLandInLeadingChannel) {
  const auto z = Var<float>::constant(Tensor<float>({4, 3, 3}));
  const auto p = Var<float>::constant(Tensor<float>({1, 6, 6}, 1.0f));
  const Image out = crop_fuse(z, p, {1, 1, 3, 3}).value();
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 9; ++i) EXPECT_EQ(out[static_cast<std::size_t>(c) * 9 + i], c == 0 ? 1.0f : 0.0f);
}

TEST(CropFuse, DifferenceIsTheCrop) {
  std::mt19937_64 data(4);
  for (int t = 0; t < 10; ++t) {
    const auto z = Var<double>::constant(testing::random_tensor<double>({6, 4, 5}, data, -1, 1));
    const auto p = Var<double>::constant(testing::random_tensor<double>({2, 9, 9}, data, -1, 1));
    const RoiBox w{t - 3, 2 * t - 6, 4, 5};
    const Tensor<double> out = crop_fuse(z, p, w).value();
    const Tensor<double> crop = reflect_window(p.value(), w);
    for (int c = 0; c < 6; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x) {
          const double d = out.at(c, y, x) - z.value().at(c, y, x);
          EXPECT_NEAR(d, c < 2 ? crop.at(c, y, x) : 0.0, 1e-15);
        }
  }
}

TEST(CropFuse, ShapeChecks) {
  const auto z = Var<float>::constant(Tensor<float>({2, 3, 3}));
  EXPECT_THROW(crop_fuse(z, Var<float>::constant(Tensor<float>({1, 6, 6})), {0, 0, 4, 3}), ShapeError);
  EXPECT_THROW(crop_fuse(z, Var<float>::constant(Tensor<float>({3, 6, 6})), {0, 0, 3, 3}), ShapeError);
}

}  // namespace
}  // namespace clsr
