#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dittryon/autodiff.hpp"
#include "dittryon/image.hpp"
#include "dittryon/model_config.hpp"
#include "dittryon/params.hpp"
#include "dittryon/rng.hpp"

namespace dittryon {

/// High-order garment semantics: (n_sem x sem_dim).
struct SemanticTokens {
  Tensor tokens;
  std::string source;
};

/// Frozen low-frequency encoder standing in for a pretrained vision backbone.
///
/// For each pyramid level s the image is split into s x s cells; each cell
/// contributes one token made of its four quadrant mean colors (centered at
/// 0.5) mixed by a fixed seeded matrix. The map is affine in the pixels.
class SemanticEncoder {
 public:
  SemanticEncoder(std::size_t image_size, std::size_t sem_dim, std::uint64_t seed,
                  std::vector<std::size_t> levels = {1, 2, 4});

  /// Rebuilds the encoder from a "semenc" checkpoint section.
  static SemanticEncoder from_params(const ParamStore& store, std::size_t image_size);
  void export_params(ParamStore& store) const;

  SemanticTokens encode(const ImageGrid& img, std::string source = {}) const;

  /// Mean over tokens, (sem_dim): the image-level embedding used by metrics.
  std::vector<double> embed(const ImageGrid& img) const;

  /// Encoder restricted to its coarsest level (a single global token).
  SemanticEncoder global_only() const;

  std::size_t token_count() const;
  std::size_t sem_dim() const { return sem_dim_; }
  std::size_t image_size() const { return image_size_; }

 private:
  SemanticEncoder() = default;

  std::size_t image_size_ = 0;
  std::size_t sem_dim_ = 0;
  std::vector<std::size_t> levels_;
  std::vector<Tensor> mix_;  // one (12 x sem_dim) matrix per level
};

/// Z = Attn(Q, K_j, V_j) + lambda * Attn(Q, K_i, V_i), each attention with its
/// own softmax. `lambda` is rank-0; a negative value is a ConfigError.
Var decoupled_attention(const Var& q, const Var& k_joint, const Var& v_joint, const Var& k_image, const Var& v_image,
                        const Var& lambda, std::size_t heads);

/// Projects semantic tokens to model width with "gsadapter/proj.*".
Var project_semantic(const BoundParams& p, const Tensor& semantic_tokens);

/// gsadapter/proj.{w,b} and gsadapter/block<i>/{k,v}.w. V_i starts at zero so
/// the adapter term is inactive until trained.
void init_adapter_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);

}  // namespace dittryon
