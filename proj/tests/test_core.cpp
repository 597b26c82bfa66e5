#include <gtest/gtest.h>

#include <cstdlib>
#include <set>

#include "fermask/error.hpp"
#include "fermask/image.hpp"
#include "fermask/rng.hpp"
#include "test_support.hpp"

using namespace fermask;
namespace ft = fermask::testing;

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(CounterRng, StreamsAreKeyedAndReproducible) {
  CounterRng a(1, "x"), b(1, "x"), c(1, "y"), d(2, "x");
  const auto va = a.next_u64();
  EXPECT_EQ(va, b.next_u64());
  EXPECT_NE(va, c.next_u64());
  EXPECT_NE(va, d.next_u64());
}

TEST(CounterRng, RangesAndRoughUniformity) {
  CounterRng r(7, "u");
  std::vector<int> hist(6, 0);
  for (int i = 0; i < 60000; ++i) {
    const double u = r.next_unit();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = r.uniform_int(-2, 3);
    ASSERT_GE(k, -2);
    ASSERT_LE(k, 3);
    ++hist[k + 2];
  }
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
  EXPECT_EQ(r.uniform(4.0, 4.0), 4.0);
  EXPECT_EQ(r.uniform_int(9, 9), 9);
}

TEST(CounterRng, SeedFromEnvironment) {
  std::uint64_t s = 0;
  ::setenv("FERMASK_SEED", "1234", 1);
  EXPECT_TRUE(seed_from_env(&s));
  EXPECT_EQ(s, 1234u);
  ::setenv("FERMASK_SEED", "abc", 1);
  EXPECT_THROW(seed_from_env(&s), ValidationError);
  ::unsetenv("FERMASK_SEED");
  EXPECT_FALSE(seed_from_env(&s));
}

TEST(Png, RoundTripRgbAndRgba) {
  ft::TempDir dir("png");
  const Image rgb = ft::noise_image(13, 7, 1);
  write_png(rgb, dir / "a.png");
  EXPECT_EQ(read_png(dir / "a.png"), rgb);
  Image rgba(5, 4, 4, 9);
  rgba.data[3] = 0;
  EXPECT_EQ(decode_png(encode_png(rgba)), rgba);
  EXPECT_EQ(to_rgb(rgba).channels, 3);
  EXPECT_THROW(read_png(dir / "missing.png"), Error);
  ft::spit(dir / "junk.png", "not a png");
  EXPECT_THROW(read_png(dir / "junk.png"), Error);
}

TEST(Bilinear, PixelCentersAreExact) {
  const Image img = ft::noise_image(6, 5, 2);
  double px[4];
  ASSERT_TRUE(sample_bilinear(img, 3.5, 2.5, px));
  for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(px[c], img.at(3, 2)[c]);
  ASSERT_TRUE(sample_bilinear(img, 4.0, 2.5, px));
  EXPECT_DOUBLE_EQ(px[0], (img.at(3, 2)[0] + img.at(4, 2)[0]) / 2.0);
  EXPECT_FALSE(sample_bilinear(img, -0.01, 1, px));
  EXPECT_TRUE(sample_bilinear(img, 6.0, 5.0, px));
  for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(px[c], img.at(5, 4)[c]);
}
