#pragma once

#include <optional>
#include <string>

#include "dittryon/autodiff.hpp"
#include "dittryon/model_config.hpp"
#include "dittryon/params.hpp"
#include "dittryon/rng.hpp"

namespace dittryon {

/// Projection weights of one MM-DiT block, bound from "<prefix>/...".
struct BlockWeights {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
  Var mod_w, mod_b;  // silu(t_embed) -> 6 x width: shift/scale/gate for attention and feed-forward
  Var ff_w1, ff_b1, ff_w2, ff_b2;
  std::size_t heads = 1;

  static BlockWeights bind(const BoundParams& p, const std::string& prefix, std::size_t heads);
};

/// Per-block adapter projections K_i/V_i applied to the projected semantic tokens.
struct AdapterBlockWeights {
  Var wk, wv;

  static AdapterBlockWeights bind(const BoundParams& p, const std::string& prefix);
};

/// Semantic conditioning for one block.
struct AdapterInput {
  Var semantic;  // (n_sem x width), already projected to model width
  AdapterBlockWeights weights;
  Var lambda;  // rank-0
};

/// Token streams entering a block. `garment` and `text` may be absent.
struct TokenStreams {
  Var tryon;
  std::optional<Var> garment;
  std::optional<Var> text;
  Var t_embed;  // (1 x width)
};

struct BlockOutput {
  Var tryon;
  std::optional<Var> text;
};

/// Sinusoid over log-spaced frequencies: [sin(t s f_i) ..., cos(t s f_i) ...], (1 x d).
Tensor timestep_sinusoid(double t, std::size_t d, double time_scale);

/// Sinusoid followed by the learned two-layer projection "<prefix>/t.*".
Var timestep_embed(const BoundParams& p, const std::string& prefix, double t, const ModelConfig& cfg);

/// softmax(Q K^T / sqrt(head_dim)) V per head; heads concatenated along columns.
Var multihead_attention(const Var& q, const Var& k, const Var& v, std::size_t heads);

/// Output of joint attention, split back into its streams (after W_out).
struct JointAttentionOut {
  Var image;  // try-on rows, then garment rows when `garment_queries`
  std::optional<Var> text;
};

/// Joint attention over concat(image, text) with Q, K, V concatenated row-wise.
/// With an adapter, image rows receive Attn(Q,K_j,V_j) + lambda Attn(Q,K_i,V_i)
/// before the output projection. `garment_queries = false` skips the query rows
/// of the garment stream, whose outputs a try-on block discards.
JointAttentionOut joint_attention(const Var& modulated_image, std::size_t garment_rows,
                                  const std::optional<Var>& modulated_text, const BlockWeights& w,
                                  const AdapterInput* adapter, bool garment_queries = true);

/// One MM-DiT block. Image stream = concat(try-on, garment). Returns the try-on
/// slice and the updated text stream.
BlockOutput block_forward(const TokenStreams& streams, const BlockWeights& w, const AdapterInput* adapter,
                          double ln_eps);

/// Attention sublayer only (residual included, before the feed-forward), for
/// tests of the lambda-affine refinement.
Var block_attention_residual(const TokenStreams& streams, const BlockWeights& w, const AdapterInput* adapter,
                             double ln_eps);

/// Adds freshly initialized block parameters under `prefix`. Modulation
/// weights start at zero so every gate is closed.
void init_block_params(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
void init_timestep_params(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);

/// Linear layer helper: x @ w + b.
Var linear(const Var& x, const Var& w, const Var& b);
Tensor xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out);

}  // namespace dittryon
