#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "clsr/error.hpp"
#include "clsr/image.hpp"
#include "test_support.hpp"

namespace clsr {
namespace {

// Direct 2-D evaluation of the Keys cubic (a = -0.5), widened by the shrink
// factor, normalised per output pixel, edge-replicated taps.
double keys(double x) {
  const double a = -0.5;
  x = std::fabs(x);
  if (x < 1) return (a + 2) * x * x * x - (a + 3) * x * x + 1;
  if (x < 2) return a * x * x * x - 5 * a * x * x + 8 * a * x - 4 * a;
  return 0;
}

double bicubic_oracle(const Image& img, int c, int oy, int ox, int out_h, int out_w) {
  const int h = img.height(), w = img.width();
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  const double ky = std::max(sy, 1.0), kx = std::max(sx, 1.0);
  const double cy = (oy + 0.5) * sy - 0.5, cx = (ox + 0.5) * sx - 0.5;
  double num = 0, wy_sum = 0, wx_sum = 0;
  for (int y = -3 * h; y < 4 * h; ++y) wy_sum += keys((y - cy) / ky);
  for (int x = -3 * w; x < 4 * w; ++x) wx_sum += keys((x - cx) / kx);
  for (int y = -3 * h; y < 4 * h; ++y) {
    const double wy = keys((y - cy) / ky);
    if (wy == 0) continue;
    for (int x = -3 * w; x < 4 * w; ++x) {
      const double wx = keys((x - cx) / kx);
      if (wx == 0) continue;
      num += wy * wx * img.at(c, std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1));
    }
  }
  return num / (wy_sum * wx_sum);
}

TEST(Png, ByteConvention) {
  Image img = Image::chw(3, 1, 3);
  for (int c = 0; c < 3; ++c) {
    img.at(c, 0, 0) = 1.0f;
    img.at(c, 0, 1) = 0.0f;
    img.at(c, 0, 2) = 128.0f / 255.0f;
  }
  const Image back = decode_png(encode_png(img));
  EXPECT_EQ(back.at(0, 0, 0), 1.0f);
  EXPECT_EQ(back.at(1, 0, 1), 0.0f);
  EXPECT_NEAR(back.at(2, 0, 2), 0.50196, 1e-5);
  EXPECT_EQ(back, img);
}

TEST(Png, FileRoundTripAndErrors) {
  std::mt19937_64 rng(1);
  const Image img = decode_png(encode_png(testing::random_image(3, 5, 7, rng)));
  const auto path = std::filesystem::temp_directory_path() / "clsr_png_roundtrip.png";
  save_png(img, path);
  EXPECT_EQ(load_png(path), img);
  std::filesystem::remove(path);
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
  EXPECT_THROW(decode_png(junk), DecodeError);
  EXPECT_THROW(load_png("/nonexistent/x.png"), Error);
}

TEST(Bicubic, ConstantStaysConstant) {
  const Image img = Image::chw(3, 10, 14, 0.3f);
  for (auto [h, w] : {std::pair{5, 7}, {20, 28}, {3, 11}}) {
    const Image out = resize_bicubic(img, h, w);
    for (float v : out.storage()) EXPECT_NEAR(v, 0.3f, 1e-6);
  }
}

TEST(Bicubic, IdentitySize) {
  std::mt19937_64 rng(2);
  const Image img = testing::random_image(3, 9, 6, rng);
  EXPECT_EQ(resize_bicubic(img, 9, 6), img);
}

TEST(Bicubic, RampMatchesOracle) {
  Image ramp = Image::chw(1, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) ramp.at(0, y, x) = static_cast<float>((y * 8 + x) / 63.0);
  const Image out = resize_bicubic(ramp, 2, 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) EXPECT_NEAR(out.at(0, y, x), bicubic_oracle(ramp, 0, y, x, 2, 2), 1e-6);
}

TEST(Bicubic, RandomMatchesOracle) {
  std::mt19937_64 rng(3);
  const Image img = testing::random_image(2, 12, 16, rng);
  for (auto [h, w] : {std::pair{3, 4}, {24, 32}, {7, 5}}) {
    const Image out = resize_bicubic(img, h, w);
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double ref = std::clamp(bicubic_oracle(img, c, y, x, h, w), 0.0, 1.0);
          EXPECT_NEAR(out.at(c, y, x), ref, 1e-6);
        }
  }
}

TEST(Crop, FullAndCentral) {
  Image img = Image::chw(1, 4, 4);
  for (int i = 0; i < 16; ++i) img[static_cast<std::size_t>(i)] = static_cast<float>(i);
  EXPECT_EQ(crop(img, {0, 0, 4, 4}), img);
  const Image mid = crop(img, {1, 1, 2, 2});
  EXPECT_EQ(mid.storage(), (std::vector<float>{5, 6, 9, 10}));
  EXPECT_THROW(crop(img, {3, 3, 2, 2}), BoundsError);
  EXPECT_THROW(crop(img, {-1, 0, 2, 2}), BoundsError);
  EXPECT_THROW(crop(img, {0, 0, 0, 2}), BoundsError);
}

TEST(Crop, HrScalesBox) {
  const Image hr = Image::chw(3, 100, 120, 0.5f);
  const Image out = crop_hr(hr, {0, 0, 24, 24}, 4);
  EXPECT_EQ(out.height(), 96);
  EXPECT_EQ(out.width(), 96);
  EXPECT_EQ((RoiBox{0, 0, 24, 24}.scaled(4)), (RoiBox{0, 0, 96, 96}));
}

TEST(PadFromContext, ZeroPadIsCrop) {
  std::mt19937_64 rng(4);
  const Image img = testing::random_image(3, 20, 20, rng);
  const RoiBox box{5, 6, 7, 8};
  const PaddedPatch p = pad_from_context(img, box, 0);
  EXPECT_EQ(p.inner, (RoiBox{0, 0, 7, 8}));
  EXPECT_EQ(p.patch, crop(img, box));
}

TEST(PadFromContext, InteriorUsesTrueContext) {
  std::mt19937_64 rng(5);
  const Image img = testing::random_image(3, 40, 40, rng);
  const RoiBox box{10, 12, 8, 8};
  const PaddedPatch p = pad_from_context(img, box, 8);
  EXPECT_EQ(p.patch.height(), 24);
  EXPECT_EQ(p.patch.width(), 24);
  EXPECT_EQ(p.patch, crop(img, {2, 4, 24, 24}));
  EXPECT_EQ(crop(p.patch, p.inner), crop(img, box));
}

TEST(PadFromContext, CornerReflects) {
  std::mt19937_64 rng(6);
  const Image img = testing::random_image(1, 10, 10, rng);
  const PaddedPatch p = pad_from_context(img, {0, 0, 4, 4}, 2);
  EXPECT_EQ(p.outer, (RoiBox{-2, -2, 8, 8}));
  for (int x = 0; x < 8; ++x) {
    // Row -1 mirrors row 1, row -2 mirrors row 2.
    EXPECT_EQ(p.patch.at(0, 1, x), p.patch.at(0, 3, x));
    EXPECT_EQ(p.patch.at(0, 0, x), p.patch.at(0, 4, x));
  }
  for (int y = 0; y < 8; ++y) {
    EXPECT_EQ(p.patch.at(0, y, 1), p.patch.at(0, y, 3));
    EXPECT_EQ(p.patch.at(0, y, 0), p.patch.at(0, y, 4));
  }
  EXPECT_EQ(crop(p.patch, p.inner), crop(img, {0, 0, 4, 4}));
}

TEST(PadFromContext, AlignmentExtendsBottomRight) {
  EXPECT_EQ(padded_window({3, 3, 5, 7}, 1, 2), (RoiBox{2, 2, 8, 10}));
  EXPECT_EQ(padded_window({3, 3, 5, 7}, 0, 1), (RoiBox{3, 3, 5, 7}));
  EXPECT_THROW(padded_window({0, 0, 4, 4}, -1), ConfigError);
}

TEST(ReflectIndex, Mirrors) {
  EXPECT_EQ(reflect_index(-1, 5), 1);
  EXPECT_EQ(reflect_index(5, 5), 3);
  EXPECT_EQ(reflect_index(-9, 5), 1);
  EXPECT_EQ(reflect_index(13, 5), 3);
  EXPECT_EQ(reflect_index(7, 1), 0);
}

TEST(Bilinear, ConstantAndHalving) {
  const Image c = Image::chw(2, 6, 6, 0.5f);
  const Image small = resize_bilinear(c, 3, 3);
  for (float v : small.storage()) EXPECT_EQ(v, 0.5f);
  Image img = Image::chw(1, 2, 2);
  img.storage() = {0, 1, 2, 3};
  EXPECT_FLOAT_EQ(resize_bilinear(img, 1, 1)[0], 1.5f);
}

}  // namespace
}  // namespace clsr
