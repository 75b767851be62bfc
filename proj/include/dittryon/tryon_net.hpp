#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dittryon/autodiff.hpp"
#include "dittryon/errors.hpp"
#include "dittryon/flow.hpp"
#include "dittryon/garment_net.hpp"
#include "dittryon/gs_adapter.hpp"
#include "dittryon/image.hpp"
#include "dittryon/latent_codec.hpp"
#include "dittryon/model_config.hpp"
#include "dittryon/optim.hpp"
#include "dittryon/params.hpp"

namespace dittryon {

/// Conditioning half of the try-on input, aligned on one patch grid. The noisy
/// latent z_t fills the leading slot at every denoising step.
struct TryOnInput {
  LatentTokens model;   // latents of the person image (the denoising target)
  Tensor mask_patch;    // (tokens x 1), mask averaged per patch
  LatentTokens masked;  // latents of (1 - m) * person
  LatentTokens pose;    // latents of the pose map
  ImageGrid masked_image;

  /// Per-token [z_t; m; z_masked; z_pose].
  Tensor zeta(const Tensor& z_t) const;
};

/// Builds the masked person image in pixel space and encodes all parts.
/// `mask` and `pose` are single-channel; the mask must be binary.
TryOnInput assemble_input(const LatentCodec& codec, const ImageGrid& person, const ImageGrid& mask,
                          const ImageGrid& pose);

/// Which conditioning paths a model variant uses.
struct Variant {
  bool garment_net = true;
  bool adapter = true;
  bool global_semantics = false;  // semantic encoder reduced to its global token

  bool operator==(const Variant&) const = default;
};

struct Conditioning {
  TokenIds caption;
  std::optional<GarmentFeatures> garment;
  std::optional<SemanticTokens> semantic;
};

/// "tryonnet" initialized from a pre-fit garment stack: blocks, timestep MLP,
/// positions and head are copied, the z_t rows of the input projection take the
/// garment input projection and all other input rows start at zero. Also adds
/// fresh adapter parameters.
void init_tryon_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);

/// Velocity prediction (tokens x latent_dim). `lambda` > 0 requires semantic
/// tokens; garment features, when present, must cover every block.
Var tryon_forward(const BoundParams& p, const Var& zeta, const Conditioning& cond, double t, double lambda,
                  const ModelConfig& cfg);

struct LossBreakdown {
  double l_cfm = 0.0;
  double l_pres = 0.0;
  double l_total = 0.0;
  double lambda_pres = 0.0;
};

struct TrainExample {
  TryOnInput input;
  Conditioning cond;
  bool glyph = false;  // member of the text-preservation sub-batch
};

/// One element of a sampled batch.
struct NoisedExample {
  const TrainExample* example = nullptr;
  double t = 0.0;
  Tensor eps;
};

struct LossTerms {
  Var l_cfm, l_pres, l_total;
  LossBreakdown values;
};

/// l_cfm + lambda_pres * l_pres; a negative lambda_pres is a ConfigError.
Var combine_losses(const Var& l_cfm, const Var& l_pres, double lambda_pres);

/// l_total = l_cfm + lambda_pres * l_pres. The preservation term compares the
/// predicted clean latents z_t - t v of the current and baseline weights on the
/// glyph-bearing members of the batch; it is 0 when lambda_pres is 0 or no
/// member carries glyphs.
LossTerms total_loss(const BoundParams& current, const BoundParams& baseline, const std::vector<NoisedExample>& batch,
                     double lambda_pres, double lambda, const ModelConfig& cfg);

struct TrainOptions {
  std::size_t batch = 8;
  double lambda_pres = 0.1;
  Variant variant;
};

/// Draws the batch for `batch_seed`: indices, times and noise.
std::vector<NoisedExample> sample_batch(const std::vector<TrainExample>& data, std::size_t batch,
                                        std::uint64_t batch_seed);

/// Sections updated by training for a variant.
std::vector<std::string> trainable_sections(const Variant& v);

/// Raised when a step produces a non-finite value; carries the batch seed.
class NonFiniteStep : public NumericError {
 public:
  NonFiniteStep(const std::string& what, std::uint64_t batch_seed) : NumericError(what), batch_seed(batch_seed) {}
  std::uint64_t batch_seed;
};

/// One optimizer step on the batch drawn from `batch_seed`. `baseline` holds the
/// snapshot of the trainable sections.
LossBreakdown train_step(ParamStore& params, const ParamStore& baseline, Optimizer& opt,
                         const std::vector<TrainExample>& data, const TrainOptions& opts, const ModelConfig& cfg,
                         std::uint64_t batch_seed);

struct GenerateRequest {
  ImageGrid garment;
  ImageGrid person;
  ImageGrid mask;
  ImageGrid pose;
  TokenIds caption;
  std::size_t steps = 20;
  std::uint64_t seed = 0;
};

/// Frozen pieces shared by training and sampling.
struct FrozenModules {
  LatentCodec codec;
  SemanticEncoder encoder;
};

Conditioning make_conditioning(const ParamStore& params, const FrozenModules& frozen, const ImageGrid& garment,
                               const TokenIds& caption, const Variant& variant, const ModelConfig& cfg);

/// Samples z0 with the Euler integrator and composites the decoded result into
/// the masked region: m * decode + (1 - m) * person.
ImageGrid generate(const ParamStore& params, const FrozenModules& frozen, const Variant& variant,
                   const ModelConfig& cfg, const GenerateRequest& req, const TrajectoryObserver& observer = {});

/// Adapter strength actually used by a variant.
inline double variant_lambda(const Variant& v, const ModelConfig& cfg) { return v.adapter ? cfg.adapter_lambda : 0.0; }

}  // namespace dittryon
