#include "dittryon/latent_codec.hpp"

#include <Eigen/QR>

#include "dittryon/rng.hpp"

namespace dittryon {

Tensor seeded_orthogonal(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd g(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) g(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (std::size_t j = 0; j < n; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = q(i, j);
  }
  return out;
}

LatentCodec::LatentCodec(std::size_t patch_size, std::uint64_t seed) : patch_(patch_size), seed_(seed) {
  if (patch_size == 0) throw ConfigError("patch size must be positive");
  for (std::size_t c : {1u, 3u}) q_.emplace(c, seeded_orthogonal(latent_dim(c), Rng::derive(seed, c)));
}

const Tensor& LatentCodec::projection(std::size_t channels) const {
  auto it = q_.find(channels);
  if (it == q_.end()) throw DimensionError("codec supports 1 or 3 channels, got " + std::to_string(channels));
  return it->second;
}

void LatentCodec::check_grid(std::size_t height, std::size_t width) const {
  if (height == 0 || width == 0 || height % patch_ != 0 || width % patch_ != 0) {
    throw DimensionError("image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by patch size " + std::to_string(patch_));
  }
}

LatentTokens LatentCodec::encode(const ImageGrid& img, LatentOrigin origin) const {
  check_grid(img.height, img.width);
  const Tensor& q = projection(img.channels);
  const std::size_t d = latent_dim(img.channels);
  const std::size_t gh = img.height / patch_, gw = img.width / patch_;
  Tensor tokens({gh * gw, d});
  std::vector<double> flat(d);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      std::size_t k = 0;
      for (std::size_t dy = 0; dy < patch_; ++dy) {
        for (std::size_t dx = 0; dx < patch_; ++dx) {
          for (std::size_t c = 0; c < img.channels; ++c) flat[k++] = img.at(py * patch_ + dy, px * patch_ + dx, c);
        }
      }
      const std::size_t tok = py * gw + px;
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += flat[i] * q.at(i, j);
        tokens.at(tok, j) = s;
      }
    }
  }
  return LatentTokens{std::move(tokens), origin};
}

ImageGrid LatentCodec::decode(const LatentTokens& lat, std::size_t channels, std::size_t height,
                              std::size_t width) const {
  check_grid(height, width);
  const Tensor& q = projection(channels);
  const std::size_t d = latent_dim(channels);
  const std::size_t gh = height / patch_, gw = width / patch_;
  if (lat.data.rank() != 2 || lat.dim() != d || lat.token_count() != gh * gw) {
    throw DimensionError("latent " + shape_str(lat.data.shape()) + " does not match a " + std::to_string(height) +
                         "x" + std::to_string(width) + "x" + std::to_string(channels) + " image");
  }
  ImageGrid img(channels, height, width);
  std::vector<double> flat(d);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      const std::size_t tok = py * gw + px;
      for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += lat.data.at(tok, j) * q.at(i, j);
        flat[i] = s;
      }
      std::size_t k = 0;
      for (std::size_t dy = 0; dy < patch_; ++dy) {
        for (std::size_t dx = 0; dx < patch_; ++dx) {
          for (std::size_t c = 0; c < channels; ++c) img.at(py * patch_ + dy, px * patch_ + dx, c) = flat[k++];
        }
      }
    }
  }
  return img;
}

Tensor pool_mask(const ImageGrid& mask, std::size_t patch_size) {
  if (mask.channels != 1) throw DimensionError("mask must be single-channel");
  if (mask.height % patch_size != 0 || mask.width % patch_size != 0) {
    throw DimensionError("mask is not divisible by patch size");
  }
  const std::size_t gh = mask.height / patch_size, gw = mask.width / patch_size;
  Tensor out({gh * gw, 1});
  const double area = static_cast<double>(patch_size * patch_size);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      double s = 0.0;
      for (std::size_t dy = 0; dy < patch_size; ++dy) {
        for (std::size_t dx = 0; dx < patch_size; ++dx) s += mask.at(py * patch_size + dy, px * patch_size + dx, 0);
      }
      out.at(py * gw + px, 0) = s / area;
    }
  }
  return out;
}

}  // namespace dittryon
