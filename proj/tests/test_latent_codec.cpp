#include <gtest/gtest.h>

#include <cmath>

#include "dittryon/image.hpp"
#include "dittryon/latent_codec.hpp"
#include "dittryon/rng.hpp"

using namespace dittryon;

namespace {

ImageGrid random_image(std::uint64_t seed, std::size_t c, std::size_t h, std::size_t w) {
  Rng rng(seed);
  ImageGrid img(c, h, w);
  for (auto& v : img.values) v = rng.uniform();
  return img;
}

double max_abs(const ImageGrid& a, const ImageGrid& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

}  // namespace

TEST(Codec, ZeroImageGivesZeroTokens) {
  const LatentCodec codec(4, 1234);
  const auto lat = codec.encode(ImageGrid(3, 16, 16));
  for (double v : lat.data.values()) EXPECT_EQ(v, 0.0);
}

TEST(Codec, SingleChannelShape) {
  const LatentCodec codec(4, 1234);
  const auto lat = codec.encode(ImageGrid(1, 16, 16), LatentOrigin::pose);
  EXPECT_EQ(lat.token_count(), 16u);
  EXPECT_EQ(lat.dim(), 16u);
  EXPECT_EQ(lat.origin, LatentOrigin::pose);
}

TEST(Codec, RoundTripOnSeededImages) {
  const LatentCodec codec(4, 1234);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto img = random_image(s, s % 2 ? 1 : 3, 16, 24);
    const auto back = codec.decode(codec.encode(img), img.channels, img.height, img.width);
    EXPECT_LT(max_abs(img, back), 1e-10);
  }
}

TEST(Codec, NormPreserved) {
  const LatentCodec codec(4, 77);
  const auto img = random_image(3, 3, 16, 16);
  double ni = 0.0;
  for (double v : img.values) ni += v * v;
  EXPECT_NEAR(l2_norm(codec.encode(img).data), std::sqrt(ni), 1e-10);
}

TEST(Codec, ProjectionIsOrthogonalAndSeeded) {
  const LatentCodec a(4, 1), b(4, 1), c(4, 2);
  const Tensor& q = a.projection(3);
  ASSERT_EQ(q.rows(), 48u);
  for (std::size_t i = 0; i < 48; ++i) {
    for (std::size_t j = 0; j < 48; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 48; ++k) dot += q.at(k, i) * q.at(k, j);
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-12);
    }
  }
  EXPECT_TRUE(bit_equal(q, b.projection(3)));
  EXPECT_FALSE(bit_equal(q, c.projection(3)));
}

TEST(Codec, ZeroTokensDecodeToZeroImage) {
  const LatentCodec codec(4, 1234);
  const auto img = codec.decode(LatentTokens{Tensor({16, 48})}, 3, 16, 16);
  for (double v : img.values) EXPECT_EQ(v, 0.0);
}

TEST(Codec, DecodeDoesNotClamp) {
  const LatentCodec codec(4, 1234);
  ImageGrid img(3, 16, 16, 2.0);
  const auto back = codec.decode(codec.encode(img), 3, 16, 16);
  EXPECT_NEAR(back.values[0], 2.0, 1e-10);
  EXPECT_EQ(back.clamped().values[0], 1.0);
}

TEST(Codec, ShapeErrors) {
  const LatentCodec codec(4, 1234);
  EXPECT_THROW(codec.encode(ImageGrid(3, 15, 16)), DimensionError);
  EXPECT_THROW(codec.encode(ImageGrid(2, 16, 16)), DimensionError);
  const auto lat = codec.encode(ImageGrid(3, 16, 16));
  EXPECT_THROW(codec.decode(lat, 1, 16, 16), DimensionError);
  EXPECT_THROW(codec.decode(lat, 3, 16, 20), DimensionError);
}

TEST(Codec, CheckerboardMaskPoolsToBinary) {
  ImageGrid mask(1, 16, 16);
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t x = 0; x < 16; ++x) mask.at(y, x, 0) = ((y / 4) + (x / 4)) % 2 == 0 ? 1.0 : 0.0;
  }
  const Tensor m = pool_mask(mask, 4);
  ASSERT_EQ(m.shape(), (Shape{16, 1}));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(m[i], ((i / 4) + (i % 4)) % 2 == 0 ? 1.0 : 0.0);
}

TEST(Codec, PartialMaskPoolsToFraction) {
  ImageGrid mask(1, 4, 4);
  mask.at(0, 0, 0) = 1.0;
  mask.at(3, 3, 0) = 1.0;
  EXPECT_EQ(pool_mask(mask, 4)[0], 2.0 / 16.0);
}

TEST(Pnm, RoundTripOnEightBitGrid) {
  const auto img = quantize8(random_image(5, 3, 8, 12));
  EXPECT_EQ(decode_pnm(encode_pnm(img)), img);
  const auto gray = quantize8(random_image(6, 1, 8, 8));
  const auto bytes = encode_pnm(gray);
  EXPECT_EQ(bytes[1], '5');
  EXPECT_EQ(decode_pnm(bytes), gray);
}

TEST(Pnm, MalformedInputIsIoError) {
  EXPECT_THROW(decode_pnm({'P', '3', '\n'}), IoError);
  auto bytes = encode_pnm(ImageGrid(3, 4, 4));
  bytes.resize(bytes.size() - 5);
  EXPECT_THROW(decode_pnm(bytes), IoError);
}
