#include "dittryon/tryon_net.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "dittryon/mm_dit.hpp"

namespace dittryon {

Tensor TryOnInput::zeta(const Tensor& z_t) const {
  const std::size_t n = model.token_count(), d = model.dim(), dp = pose.dim();
  if (z_t.shape() != model.data.shape()) throw DimensionError("z_t shape " + shape_str(z_t.shape()) + " != latent grid");
  Tensor out({n, 2 * d + 1 + dp});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < d; ++j) out.at(i, c++) = z_t.at(i, j);
    out.at(i, c++) = mask_patch.at(i, 0);
    for (std::size_t j = 0; j < d; ++j) out.at(i, c++) = masked.data.at(i, j);
    for (std::size_t j = 0; j < dp; ++j) out.at(i, c++) = pose.data.at(i, j);
  }
  return out;
}

TryOnInput assemble_input(const LatentCodec& codec, const ImageGrid& person, const ImageGrid& mask,
                          const ImageGrid& pose) {
  if (person.channels != 3 || mask.channels != 1 || pose.channels != 1) {
    throw DimensionError("person must be RGB, mask and pose single-channel");
  }
  if (mask.height != person.height || mask.width != person.width || pose.height != person.height ||
      pose.width != person.width) {
    throw DimensionError("person, mask and pose sizes differ");
  }
  for (double v : mask.values) {
    if (v != 0.0 && v != 1.0) throw ContractError("mask must be binary");
  }
  TryOnInput in;
  in.masked_image = person;
  for (std::size_t y = 0; y < person.height; ++y) {
    for (std::size_t x = 0; x < person.width; ++x) {
      const double keep = 1.0 - mask.at(y, x, 0);
      for (std::size_t c = 0; c < 3; ++c) in.masked_image.at(y, x, c) = keep * person.at(y, x, c);
    }
  }
  in.model = codec.encode(person, LatentOrigin::model);
  in.masked = codec.encode(in.masked_image, LatentOrigin::mask_image);
  in.pose = codec.encode(pose, LatentOrigin::pose);
  in.mask_patch = pool_mask(mask, codec.patch_size());
  return in;
}

void init_tryon_params(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  if (stored_depth(store, "garmentnet") != cfg.depth) {
    throw ContractError("try-on init needs a garment-net of depth " + std::to_string(cfg.depth));
  }
  for (const auto& [name, t] : store.section("garmentnet")) {
    const std::string rest = name.substr(std::string("garmentnet/").size());
    if (rest == "in.w") continue;
    store.set("tryonnet/" + rest, t);
  }
  const Tensor& gin = store.get("garmentnet/in.w");
  Tensor in_w({cfg.zeta_dim(), cfg.width});
  for (std::size_t i = 0; i < cfg.latent_dim(); ++i) {
    for (std::size_t j = 0; j < cfg.width; ++j) in_w.at(i, j) = gin.at(i, j);
  }
  store.set("tryonnet/in.w", std::move(in_w));
  store.set("tryonnet/seg.garment", Tensor({cfg.width}));
  init_adapter_params(store, cfg, rng);
}

Var tryon_forward(const BoundParams& p, const Var& zeta, const Conditioning& cond, double t, double lambda,
                  const ModelConfig& cfg) {
  if (zeta.shape() != Shape{cfg.tokens(), cfg.zeta_dim()}) {
    throw DimensionError("try-on input " + shape_str(zeta.shape()) + " does not match the model grid");
  }
  if (lambda < 0.0) throw ConfigError("adapter lambda must be >= 0");
  if (lambda > 0.0 && !cond.semantic) throw ContractError("semantic tokens are required when lambda > 0");
  if (cond.garment && cond.garment->layer_count() != cfg.depth) {
    throw ConfigError("garment features cover " + std::to_string(cond.garment->layer_count()) + " layers, net has " +
                      std::to_string(cfg.depth));
  }
  Tape& tape = p.tape();
  Var x = ops::add(linear(zeta, p("tryonnet/in.w"), p("tryonnet/in.b")), p("tryonnet/pos"));
  const Var te = timestep_embed(p, "tryonnet", t, cfg);
  std::optional<Var> text = embed_text(p, cond.caption, cfg);
  std::optional<Var> semantic;
  Var lam;
  if (lambda > 0.0) {
    semantic = project_semantic(p, cond.semantic->tokens);
    lam = tape.constant(Tensor::scalar(lambda));
  }
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::string idx = std::to_string(i);
    std::optional<Var> garment;
    if (cond.garment) garment = ops::add_row(tape.constant(cond.garment->per_layer[i]), p("tryonnet/seg.garment"));
    const BlockWeights w = BlockWeights::bind(p, "tryonnet/block" + idx, cfg.heads);
    AdapterInput adapter;
    if (semantic) adapter = AdapterInput{*semantic, AdapterBlockWeights::bind(p, "gsadapter/block" + idx), lam};
    BlockOutput o = block_forward(TokenStreams{x, garment, text, te}, w, semantic ? &adapter : nullptr, cfg.ln_eps);
    x = o.tryon;
    text = o.text;
  }
  return linear(ops::layer_norm(x, cfg.ln_eps), p("tryonnet/out.w"), p("tryonnet/out.b"));
}

Var combine_losses(const Var& l_cfm, const Var& l_pres, double lambda_pres) {
  if (lambda_pres < 0.0) throw ConfigError("lambda_pres must be >= 0");
  return ops::add(l_cfm, ops::scale(l_pres, lambda_pres));
}

LossTerms total_loss(const BoundParams& current, const BoundParams& baseline, const std::vector<NoisedExample>& batch,
                     double lambda_pres, double lambda, const ModelConfig& cfg) {
  if (lambda_pres < 0.0) throw ConfigError("lambda_pres must be >= 0");
  if (batch.empty()) throw ContractError("empty batch");
  Tape& tape = current.tape();
  Var cfm_sum, pres_sum;
  std::size_t n_pres = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const NoisedExample& item = batch[b];
    const TrainExample& ex = *item.example;
    const FlowSample s = rf_interpolate(ex.input.model.data, item.eps, item.t);
    const Var zeta = tape.constant(ex.input.zeta(s.z_t));
    const Var v = tryon_forward(current, zeta, ex.cond, item.t, lambda, cfg);
    const Var l = cfm_loss(v, s.u_target);
    cfm_sum = b == 0 ? l : ops::add(cfm_sum, l);
    if (lambda_pres > 0.0 && ex.glyph) {
      const Var z_t = tape.constant(s.z_t);
      const Var x_hat = ops::sub(z_t, ops::scale(v, item.t));
      const Var v_base = tryon_forward(baseline, zeta, ex.cond, item.t, lambda, cfg);
      const Var x_base = ops::sub(z_t, ops::scale(v_base, item.t));
      const Var lp = ops::mse(x_hat, x_base);
      pres_sum = n_pres == 0 ? lp : ops::add(pres_sum, lp);
      ++n_pres;
    }
  }
  LossTerms out;
  out.l_cfm = ops::scale(cfm_sum, 1.0 / static_cast<double>(batch.size()));
  out.l_pres = n_pres == 0 ? tape.constant(Tensor::scalar(0.0)) : ops::scale(pres_sum, 1.0 / static_cast<double>(n_pres));
  out.l_total = combine_losses(out.l_cfm, out.l_pres, lambda_pres);
  out.values = LossBreakdown{out.l_cfm.value().item(), out.l_pres.value().item(), out.l_total.value().item(),
                             lambda_pres};
  return out;
}

std::vector<NoisedExample> sample_batch(const std::vector<TrainExample>& data, std::size_t batch,
                                        std::uint64_t batch_seed) {
  if (data.empty()) throw ConfigError("training set is empty");
  if (batch == 0) throw ConfigError("batch size must be positive");
  Rng rng(batch_seed);
  std::vector<NoisedExample> out(batch);
  for (auto& item : out) {
    item.example = &data[rng.below(data.size())];
    item.t = rng.uniform();
    item.eps = rng.normal_tensor(item.example->input.model.data.shape());
  }
  return out;
}

std::vector<std::string> trainable_sections(const Variant& v) {
  std::vector<std::string> s{"tryonnet"};
  if (v.adapter) s.push_back("gsadapter");
  return s;
}

LossBreakdown train_step(ParamStore& params, const ParamStore& baseline, Optimizer& opt,
                         const std::vector<TrainExample>& data, const TrainOptions& opts, const ModelConfig& cfg,
                         std::uint64_t batch_seed) {
  const auto batch = sample_batch(data, opts.batch, batch_seed);
  const double lambda = variant_lambda(opts.variant, cfg);
  ParamStore cur = params.section("tryonnet");
  cur.merge(params.section("gsadapter"));
  cur.merge(params.section("textembed"));
  ParamStore base;
  if (opts.lambda_pres > 0.0) {
    base = baseline.section("tryonnet");
    base.merge(baseline.section("gsadapter"));
    base.merge(params.section("textembed"));
  }
  Tape tape;
  LossTerms terms;
  std::map<std::string, Tensor> grads;
  try {
    const BoundParams p(tape, cur, trainable_sections(opts.variant));
    const BoundParams b(tape, base, {});
    terms = total_loss(p, b, batch, opts.lambda_pres, lambda, cfg);
    if (!std::isfinite(terms.values.l_total)) throw NumericError("non-finite loss");
    grads = p.gradients(tape.backward(terms.l_total));
  } catch (const NumericError& e) {
    throw NonFiniteStep(std::string(e.what()) + " (batch seed " + std::to_string(batch_seed) + ")", batch_seed);
  }
  opt.step(params, grads);
  return terms.values;
}

Conditioning make_conditioning(const ParamStore& params, const FrozenModules& frozen, const ImageGrid& garment,
                               const TokenIds& caption, const Variant& variant, const ModelConfig& cfg) {
  Conditioning c;
  c.caption = caption;
  if (variant.garment_net) {
    c.garment = garment_forward(params, frozen.codec.encode(garment, LatentOrigin::garment), caption, cfg);
  }
  if (variant.adapter) {
    c.semantic = variant.global_semantics ? frozen.encoder.global_only().encode(garment) : frozen.encoder.encode(garment);
  }
  return c;
}

ImageGrid generate(const ParamStore& params, const FrozenModules& frozen, const Variant& variant,
                   const ModelConfig& cfg, const GenerateRequest& req, const TrajectoryObserver& observer) {
  const TryOnInput in = assemble_input(frozen.codec, req.person, req.mask, req.pose);
  const Conditioning cond = make_conditioning(params, frozen, req.garment, req.caption, variant, cfg);
  const double lambda = variant_lambda(variant, cfg);
  ParamStore used = params.section("tryonnet");
  used.merge(params.section("gsadapter"));
  used.merge(params.section("textembed"));
  const VelocityField field = [&](const Tensor& z, double t) {
    Tape tape;
    const BoundParams p(tape, used, {});
    return tryon_forward(p, tape.constant(in.zeta(z)), cond, t, lambda, cfg).value();
  };
  Rng rng(req.seed);
  const Tensor z0 = euler_sample(field, rng.normal_tensor(in.model.data.shape()), req.steps, observer);
  const ImageGrid decoded =
      frozen.codec.decode(LatentTokens{z0, LatentOrigin::model}, 3, req.person.height, req.person.width);
  ImageGrid out = req.person;
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      if (req.mask.at(y, x, 0) == 0.0) continue;
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = std::clamp(decoded.at(y, x, c), 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace dittryon
