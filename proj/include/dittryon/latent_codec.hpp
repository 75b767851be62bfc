#pragma once

#include <cstdint>
#include <map>

#include "dittryon/image.hpp"
#include "dittryon/tensor.hpp"

namespace dittryon {

enum class LatentOrigin { model, garment, mask_image, pose };

/// Patch tokens in latent space: (token_count x dim), row-major over the patch grid.
struct LatentTokens {
  Tensor data;
  LatentOrigin origin = LatentOrigin::model;

  std::size_t token_count() const { return data.dim(0); }
  std::size_t dim() const { return data.dim(1); }
};

/// Frozen stand-in for a pretrained VAE: each p x p x C patch is flattened
/// (HWC order) and multiplied by a fixed orthogonal matrix, so decoding is the
/// exact transpose.
class LatentCodec {
 public:
  LatentCodec(std::size_t patch_size, std::uint64_t seed);

  std::size_t patch_size() const { return patch_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t latent_dim(std::size_t channels) const { return patch_ * patch_ * channels; }

  LatentTokens encode(const ImageGrid& img, LatentOrigin origin = LatentOrigin::model) const;

  /// Inverse of encode. Values are not clamped; call ImageGrid::clamped() when
  /// emitting an image.
  ImageGrid decode(const LatentTokens& lat, std::size_t channels, std::size_t height, std::size_t width) const;

  /// The orthogonal projection used for `channels`-channel images.
  const Tensor& projection(std::size_t channels) const;

 private:
  void check_grid(std::size_t height, std::size_t width) const;

  std::size_t patch_;
  std::uint64_t seed_;
  std::map<std::size_t, Tensor> q_;  // keyed by channel count (1 and 3)
};

/// Orthogonal n x n matrix from the QR factorization of a seeded Gaussian
/// matrix, with column signs fixed so R has a positive diagonal.
Tensor seeded_orthogonal(std::size_t n, std::uint64_t seed);

/// Averages a single-channel mask over each patch: (token_count x 1).
Tensor pool_mask(const ImageGrid& mask, std::size_t patch_size);

}  // namespace dittryon
