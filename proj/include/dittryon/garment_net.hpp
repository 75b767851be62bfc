#pragma once

#include <optional>
#include <vector>

#include "dittryon/autodiff.hpp"
#include "dittryon/latent_codec.hpp"
#include "dittryon/model_config.hpp"
#include "dittryon/optim.hpp"
#include "dittryon/params.hpp"
#include "dittryon/rng.hpp"

namespace dittryon {

using TokenIds = std::vector<std::size_t>;

/// Caption embedding: rows of "textembed/table" plus "textembed/pos".
/// An empty caption yields no text stream.
std::optional<Var> embed_text(const BoundParams& p, const TokenIds& tokens, const ModelConfig& cfg);
void init_text_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);

/// Per-layer garment features, each (n_garment x width).
struct GarmentFeatures {
  std::vector<Tensor> per_layer;

  std::size_t layer_count() const { return per_layer.size(); }
};

void init_garment_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);

/// Number of "<section>/block<i>" stacks present in `store`.
std::size_t stored_depth(const ParamStore& store, const std::string& section);

/// Post-block image-token outputs of the garment stack for latent input `z`.
std::vector<Var> garment_layers(const BoundParams& p, const Var& z, double t, const std::optional<Var>& text,
                                const ModelConfig& cfg);

/// Velocity head on top of the garment stack, used only for the pre-fit.
Var garment_velocity(const BoundParams& p, const Var& z_t, double t, const std::optional<Var>& text,
                     const ModelConfig& cfg);

/// Features of the frozen garment stack on clean garment latents (t = 0).
/// Throws ConfigError if the stored depth differs from cfg.depth.
GarmentFeatures garment_forward(const ParamStore& store, const LatentTokens& z_g, const TokenIds& caption,
                                const ModelConfig& cfg);

struct GarmentExample {
  LatentTokens latent;
  TokenIds caption;
};

struct PrefitOptions {
  std::size_t steps = 300;
  std::size_t batch = 8;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
};

struct PrefitResult {
  double first_loss = 0.0;
  double last_loss = 0.0;
};

/// Fits "garmentnet" and "textembed" as a rectified-flow denoiser of garment
/// latents conditioned on their captions.
PrefitResult prefit_garment_net(ParamStore& store, const std::vector<GarmentExample>& data, const ModelConfig& cfg,
                                const PrefitOptions& opts);

}  // namespace dittryon
