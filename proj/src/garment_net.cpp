#include "dittryon/garment_net.hpp"

#include <string>

#include "dittryon/flow.hpp"
#include "dittryon/mm_dit.hpp"

namespace dittryon {

std::optional<Var> embed_text(const BoundParams& p, const TokenIds& tokens, const ModelConfig& cfg) {
  if (tokens.empty()) return std::nullopt;
  if (tokens.size() > cfg.max_text_len) {
    throw ContractError("caption has " + std::to_string(tokens.size()) + " tokens, limit is " +
                        std::to_string(cfg.max_text_len));
  }
  for (std::size_t id : tokens) {
    if (id >= cfg.vocab_size) throw RangeError("token id " + std::to_string(id) + " outside vocabulary");
  }
  std::vector<std::size_t> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  return ops::add(ops::gather_rows(p("textembed/table"), tokens), ops::gather_rows(p("textembed/pos"), positions));
}

void init_text_params(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  store.set("textembed/table", rng.normal_tensor({cfg.vocab_size, cfg.width}, 0.5));
  store.set("textembed/pos", rng.normal_tensor({cfg.max_text_len, cfg.width}, 0.1));
}

void init_garment_params(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  store.set("garmentnet/in.w", xavier(rng, cfg.latent_dim(), cfg.width));
  store.set("garmentnet/in.b", Tensor({cfg.width}));
  store.set("garmentnet/pos", rng.normal_tensor({cfg.tokens(), cfg.width}, 0.1));
  init_timestep_params(store, "garmentnet", cfg, rng);
  for (std::size_t i = 0; i < cfg.depth; ++i) init_block_params(store, "garmentnet/block" + std::to_string(i), cfg, rng);
  store.set("garmentnet/out.w", xavier(rng, cfg.width, cfg.latent_dim()));
  store.set("garmentnet/out.b", Tensor({cfg.latent_dim()}));
}

std::size_t stored_depth(const ParamStore& store, const std::string& section) {
  std::size_t d = 0;
  while (store.contains(section + "/block" + std::to_string(d) + "/attn.wq")) ++d;
  return d;
}

std::vector<Var> garment_layers(const BoundParams& p, const Var& z, double t, const std::optional<Var>& text,
                                const ModelConfig& cfg) {
  Var x = ops::add(linear(z, p("garmentnet/in.w"), p("garmentnet/in.b")), p("garmentnet/pos"));
  const Var te = timestep_embed(p, "garmentnet", t, cfg);
  std::optional<Var> txt = text;
  std::vector<Var> layers;
  layers.reserve(cfg.depth);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const BlockWeights w = BlockWeights::bind(p, "garmentnet/block" + std::to_string(i), cfg.heads);
    BlockOutput o = block_forward(TokenStreams{x, std::nullopt, txt, te}, w, nullptr, cfg.ln_eps);
    x = o.tryon;
    txt = o.text;
    layers.push_back(x);
  }
  return layers;
}

Var garment_velocity(const BoundParams& p, const Var& z_t, double t, const std::optional<Var>& text,
                     const ModelConfig& cfg) {
  const Var h = garment_layers(p, z_t, t, text, cfg).back();
  return linear(ops::layer_norm(h, cfg.ln_eps), p("garmentnet/out.w"), p("garmentnet/out.b"));
}

GarmentFeatures garment_forward(const ParamStore& store, const LatentTokens& z_g, const TokenIds& caption,
                                const ModelConfig& cfg) {
  const std::size_t depth = stored_depth(store, "garmentnet");
  if (depth != cfg.depth) {
    throw ConfigError("garment-net has " + std::to_string(depth) + " blocks, try-on net expects " +
                      std::to_string(cfg.depth));
  }
  if (z_g.dim() != cfg.latent_dim() || z_g.token_count() != cfg.tokens()) {
    throw DimensionError("garment latents " + shape_str(z_g.data.shape()) + " do not match the model grid");
  }
  Tape tape;
  ParamStore used = store.section("garmentnet");
  used.merge(store.section("textembed"));
  const BoundParams p(tape, used, {});
  const auto layers = garment_layers(p, tape.constant(z_g.data), 0.0, embed_text(p, caption, cfg), cfg);
  GarmentFeatures gf;
  for (const Var& v : layers) gf.per_layer.push_back(v.value());
  return gf;
}

PrefitResult prefit_garment_net(ParamStore& store, const std::vector<GarmentExample>& data, const ModelConfig& cfg,
                                const PrefitOptions& opts) {
  if (data.empty()) throw ConfigError("garment pre-fit needs at least one garment");
  if (opts.batch == 0) throw ConfigError("pre-fit batch must be positive");
  Optimizer opt(opts.optimizer);
  PrefitResult res;
  const std::vector<std::string> trainable{"garmentnet", "textembed"};
  for (std::size_t step = 0; step < opts.steps; ++step) {
    Rng rng(Rng::derive(opts.seed, step));
    ParamStore used = store.section("garmentnet");
    used.merge(store.section("textembed"));
    Tape tape;
    const BoundParams p(tape, used, trainable);
    Var total;
    for (std::size_t b = 0; b < opts.batch; ++b) {
      const GarmentExample& ex = data[rng.below(data.size())];
      const double t = rng.uniform();
      const Tensor eps = rng.normal_tensor(ex.latent.data.shape());
      const FlowSample s = rf_interpolate(ex.latent.data, eps, t);
      const Var v = garment_velocity(p, tape.constant(s.z_t), t, embed_text(p, ex.caption, cfg), cfg);
      const Var l = cfm_loss(v, s.u_target);
      total = b == 0 ? l : ops::add(total, l);
    }
    const Var loss = ops::scale(total, 1.0 / static_cast<double>(opts.batch));
    const double value = loss.value().item();
    if (step == 0) res.first_loss = value;
    res.last_loss = value;
    opt.step(store, p.gradients(tape.backward(loss)));
  }
  return res;
}

}  // namespace dittryon
