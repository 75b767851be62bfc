#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dittryon/gs_adapter.hpp"
#include "dittryon/image.hpp"
#include "dittryon/synth_data.hpp"
#include "dittryon/tensor.hpp"

namespace dittryon {

/// Windowed SSIM with a 7x7 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, averaged over every full window position and channel.
double ssim(const ImageGrid& a, const ImageGrid& b);

/// Normalized 7x7 Gaussian window, row-major.
std::vector<double> ssim_window();

/// ||mu_A - mu_B||^2 + Tr(S_A + S_B - 2 (S_A S_B)^(1/2)) for feature sets given
/// as (n x f) matrices, n >= 2 each.
double frechet_distance(const Tensor& a, const Tensor& b);

/// Unbiased MMD^2 with kernel (x.y / f + 1)^3.
double kernel_mmd(const Tensor& a, const Tensor& b);

/// KID convention: MMD^2 scaled by 100.
inline double kid_score(const Tensor& a, const Tensor& b) { return 100.0 * kernel_mmd(a, b); }

/// Frozen random convolution stack standing in for a learned perceptual
/// network. Distance = sum over layers of the mean squared difference of
/// channel-normalized feature maps.
class PerceptualExtractor {
 public:
  explicit PerceptualExtractor(std::uint64_t seed);

  std::vector<Tensor> features(const ImageGrid& img) const;  // per layer (positions x channels)
  double distance(const ImageGrid& a, const ImageGrid& b) const;

 private:
  struct Conv {
    std::size_t in, out, stride;
    Tensor weight;  // (out x in*9)
    Tensor bias;    // (out)
  };
  std::vector<Conv> layers_;
};

/// Cosine similarity of the pooled semantic embeddings.
double embed_similarity(const SemanticEncoder& enc, const ImageGrid& a, const ImageGrid& b);

/// Per text line, normalized cross-correlation between generated and reference
/// pixels inside the pose-warped line box intersected with the mask; mean over
/// lines, clamped to [0, 1]. Lines whose reference region is flat are skipped;
/// ContractError if the spec has no glyphs or no line is measurable.
double glyph_fidelity(const ImageGrid& generated, const ImageGrid& reference, const GarmentSpec& spec,
                      std::size_t pose, const ImageGrid& mask);

/// Feature matrix (n x sem_dim) of pooled semantic embeddings.
Tensor semantic_features(const SemanticEncoder& enc, const std::vector<ImageGrid>& images);

struct MetricReport {
  std::string setting;  // "paired" or "unpaired"
  std::size_t n = 0;
  std::string config_hash;
  std::optional<double> ssim, perceptual, embed_sim, frechet, mmd, glyph_fidelity;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  /// Paired reports carry ssim/perceptual/embed_sim, unpaired frechet/mmd.
  void check_shape() const;
};

}  // namespace dittryon
