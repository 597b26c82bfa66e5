#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fermask/error.hpp"
#include "fermask/face_pipeline.hpp"
#include "fermask/synthetic.hpp"
#include "test_support.hpp"

using namespace fermask;
namespace ft = fermask::testing;

namespace {

// Landmarks spread over the rectangle [x0,x1] x [y0,y1], touching all four sides.
LandmarkSet box_landmarks(double x0, double y0, double x1, double y1) {
  LandmarkSet lm;
  lm.source_image_id = "box";
  for (int i = 0; i < kLandmarkCount; ++i) {
    const double t = i / double(kLandmarkCount - 1);
    lm.points[i] = {x0 + (x1 - x0) * t, y0 + (y1 - y0) * std::fmod(t * 7, 1.0)};
  }
  lm.points[0] = {x0, y0};
  lm.points[1] = {x1, y1};
  return lm;
}

}  // namespace

TEST(Crop, BoxArithmetic) {
  const LandmarkSet lm = box_landmarks(20, 30, 60, 80);
  const Box b = crop_box(lm, CropConfig{});
  // x in [16,64], y in [12.5,82.5] before squaring; width padded to 70.
  EXPECT_DOUBLE_EQ(b.x0, 5);
  EXPECT_DOUBLE_EQ(b.x1, 75);
  EXPECT_DOUBLE_EQ(b.y0, 12.5);
  EXPECT_DOUBLE_EQ(b.y1, 82.5);
}

TEST(Crop, FullFrameZeroMarginsIsIdentity) {
  const Image img = ft::noise_image(64, 64, 5);
  CropConfig cfg{0, 0, 0, 64};
  const Image out = crop_face(img, box_landmarks(0, 0, 64, 64), cfg);
  EXPECT_EQ(out, img);
}

TEST(Crop, LeftEdgeOvershootIsBlackStrip) {
  Image img(100, 100, 3, 180);
  CropConfig cfg{0, 0.10, 0, 60};
  const Image out = crop_face(img, box_landmarks(0, 10, 50, 60), cfg);
  for (int y = 0; y < 60; ++y) {
    for (int x = 0; x < 60; ++x) {
      const std::uint8_t want = x < 5 ? 0 : 180;
      ASSERT_EQ(out.at(x, y)[0], want) << x << "," << y;
    }
  }
}

TEST(Crop, LandmarksFollowTheCrop) {
  const LandmarkSet lm = place_face(70, 60, 30, 0, "f");
  CropConfig cfg;
  cfg.output_size = 112;
  const Box b = crop_box(lm, cfg);
  const LandmarkSet c = crop_landmarks(lm, cfg);
  const double s = 112 / b.width();
  EXPECT_NEAR(c.landmark(9).x, (lm.landmark(9).x - b.x0) * s, 1e-9);
  EXPECT_NEAR(c.landmark(9).y, (lm.landmark(9).y - b.y0) * s, 1e-9);
}

TEST(Crop, InvalidConfigRejected) {
  EXPECT_THROW(validate(CropConfig{-0.1, 0, 0, 224}), ValidationError);
  EXPECT_THROW(validate(CropConfig{0, 0, 0, 4}), ValidationError);
}

TEST(Augment, CollapsedRangesAreIdentity) {
  const Image img = ft::noise_image(40, 30, 9);
  AugmentConfig cfg{0, 0, 0, 0, 77};
  const AugmentResult r = geo_augment(img, cfg, "k");
  EXPECT_EQ(r.image, img);
  EXPECT_EQ(r.applied, (GeoParams{0, 0, 0}));
}

TEST(Augment, IntegerShiftMovesColumns) {
  const Image img = ft::noise_image(32, 20, 4);
  const Image out = apply_geo(img, {0, 5, 0});
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 32; ++x) {
      for (int c = 0; c < 3; ++c) {
        ASSERT_EQ(out.at(x, y)[c], x < 5 ? 0 : img.at(x - 5, y)[c]) << x << "," << y;
      }
    }
  }
}

TEST(Augment, RotatedPointLandsAtClosedFormPosition) {
  Image img(41, 41, 3, 0);
  const int qx = 30, qy = 20;
  std::fill_n(img.at(qx, qy), 3, 255);
  const double th = 20 * std::numbers::pi / 180;
  const Image out = apply_geo(img, {20, 0, 0});
  double sx = 0, sy = 0, m = 0;
  for (int y = 0; y < 41; ++y) {
    for (int x = 0; x < 41; ++x) {
      const double v = out.at(x, y)[0];
      sx += v * (x + 0.5);
      sy += v * (y + 0.5);
      m += v;
    }
  }
  ASSERT_GT(m, 0);
  const double dx = qx + 0.5 - 20.5, dy = qy + 0.5 - 20.5;
  const double ex = 20.5 + std::cos(th) * dx - std::sin(th) * dy;
  const double ey = 20.5 + std::sin(th) * dx + std::cos(th) * dy;
  EXPECT_NEAR(sx / m, ex, 1.0);
  EXPECT_NEAR(sy / m, ey, 1.0);
}

TEST(Augment, DrawsArePerKeyAndInRange) {
  AugmentConfig cfg;
  cfg.seed = 12;
  const GeoParams a = draw_geo_params(cfg, "img-a");
  const GeoParams b = draw_geo_params(cfg, "img-b");
  EXPECT_EQ(draw_geo_params(cfg, "img-a"), a);
  EXPECT_FALSE(a == b);
  for (int i = 0; i < 500; ++i) {
    const GeoParams p = draw_geo_params(cfg, "k" + std::to_string(i));
    ASSERT_GE(p.theta_deg, -20);
    ASSERT_LE(p.theta_deg, 20);
    ASSERT_GE(p.tx, -5);
    ASSERT_LE(p.tx, 5);
    ASSERT_GE(p.ty, -5);
    ASSERT_LE(p.ty, 5);
  }
  cfg.seed = 13;
  EXPECT_FALSE(draw_geo_params(cfg, "img-a") == a);
  EXPECT_THROW(validate(AugmentConfig{5, -5, 0, 0, 0}), ValidationError);
}

TEST(Resize, SameSizeIsIdentity) {
  const Image img = ft::noise_image(20, 20, 8);
  EXPECT_EQ(resize_bilinear(img, 20, 20), img);
  EXPECT_EQ(resize_bilinear(img, 10, 7).width, 10);
}
