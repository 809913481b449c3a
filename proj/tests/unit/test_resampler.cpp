#include <gtest/gtest.h>

#include "geomatch/resampler.hpp"

namespace geomatch {
namespace {

// I(u, v) = 2u + 3v + 1 (plus a channel offset): bilinear interpolation is
// exact on it.
Image ramp(int h, int w, int c = 1) {
  Image img(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) img.at(y, x, k) = 2 * x + 3 * y + 1 + 10 * k;
  return img;
}

TEST(Sample, BilinearIsExactOnRamp) {
  const Image img = ramp(5, 6, 2);
  EXPECT_NEAR(sample(img, 1.25, 2.5, 0), 2 * 1.25 + 3 * 2.5 + 1, 1e-12);
  EXPECT_NEAR(sample(img, 3.75, 0.5, 1), 2 * 3.75 + 3 * 0.5 + 11, 1e-12);
}

TEST(Sample, IntegerCoordinatesReturnPixels) {
  const Image img = ramp(4, 4);
  EXPECT_EQ(sample(img, 2, 3, 0), img.at(3, 2, 0));
  // Within the snapping tolerance of an integer.
  EXPECT_EQ(sample(img, 2 + 1e-12, 3 - 1e-12, 0), img.at(3, 2, 0));
}

TEST(Sample, OutsideReadsZero) {
  const Image img(3, 3, 1, 1.0);
  EXPECT_EQ(sample(img, -1, 0, 0), 0);
  EXPECT_EQ(sample(img, 5, 5, 0), 0);
  // Half a pixel outside the border: half weight on the zero tap.
  EXPECT_DOUBLE_EQ(sample(img, -0.5, 1, 0), 0.5);
}

TEST(Sample, NearestRounds) {
  const Image img = ramp(4, 4);
  EXPECT_EQ(sample(img, 1.4, 2.6, 0, Interpolation::kNearest), img.at(3, 1, 0));
}

TEST(Warp, IdentityReproducesImage) {
  const Image img = ramp(7, 9, 3);
  EXPECT_EQ(warp(img, AffineParams::identity(), 7, 9), img);
  EXPECT_EQ(warp(img, TpsParams::identity(), 7, 9), img);
}

TEST(Warp, IntegerShift) {
  const Image img = ramp(8, 8);
  // Shift by one pixel to the right in normalized units: 2 / W.
  const Image out = warp(img, AffineParams::translation(2.0 / 8, 0), 8, 8);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 7; ++x) EXPECT_EQ(out.at(y, x, 0), img.at(y, x + 1, 0));
    EXPECT_EQ(out.at(y, 7, 0), 0);
  }
}

TEST(Warp, RampUnderAffineIsAffine) {
  // Sampling a linear ramp through an affine map stays linear in pixels.
  const Image img = ramp(16, 16);
  const AffineParams a{0.5, 0.1, -0.1, 0.5, 0.05, 0.0};
  const Image out = warp(img, a, 16, 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      const Point src = normalized_to_pixel(a.apply(pixel_to_normalized(x, y, 16, 16)), 16, 16);
      EXPECT_NEAR(out.at(y, x, 0), 2 * src.x + 3 * src.y + 1, 1e-10);
    }
  }
}

TEST(Resize, DownAndUpKeepRampInterior) {
  const Image img = ramp(8, 8);
  const Image small = resize(img, 4, 4);
  // Output pixel u samples input u * 2 + 0.5.
  EXPECT_NEAR(small.at(1, 2, 0), 2 * 4.5 + 3 * 2.5 + 1, 1e-12);
  EXPECT_EQ(resize(img, 8, 8), img);
}

}  // namespace
}  // namespace geomatch
