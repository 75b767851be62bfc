#pragma once

#include <cstddef>
#include <cstdint>

namespace dittryon {

/// Architecture hyperparameters shared by garment-net, try-on net and adapter.
struct ModelConfig {
  std::size_t image_size = 16;  // square images, multiple of patch_size
  std::size_t patch_size = 4;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t depth = 4;
  std::size_t ff_mult = 2;
  std::size_t vocab_size = 64;
  std::size_t max_text_len = 40;
  std::size_t sem_dim = 32;
  double adapter_lambda = 1.0;
  double time_scale = 100.0;  // sinusoid argument is t * time_scale
  double ln_eps = 1e-6;
  std::uint64_t codec_seed = 1234;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t latent_dim() const { return patch_size * patch_size * 3; }
  std::size_t pose_dim() const { return patch_size * patch_size; }
  /// Per-token width of the assembled try-on input: [z_t; m; z_masked; z_pose].
  std::size_t zeta_dim() const { return 2 * latent_dim() + 1 + pose_dim(); }
  std::size_t head_dim() const { return width / heads; }
  std::size_t ff_hidden() const { return ff_mult * width; }

  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

}  // namespace dittryon
