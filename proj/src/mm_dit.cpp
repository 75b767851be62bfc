#include "dittryon/mm_dit.hpp"

#include <cmath>
#include <vector>

#include "dittryon/gs_adapter.hpp"

namespace dittryon {

void ModelConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size must be a positive multiple of patch_size");
  }
  if (width == 0 || heads == 0 || width % heads != 0) throw ConfigError("width must be divisible by heads");
  if (width % 2 != 0) throw ConfigError("width must be even for the timestep sinusoid");
  if (depth == 0) throw ConfigError("depth must be at least 1");
  if (ff_mult == 0) throw ConfigError("ff_mult must be at least 1");
  if (sem_dim == 0) throw ConfigError("sem_dim must be positive");
  if (adapter_lambda < 0.0) throw ConfigError("adapter lambda must be >= 0");
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
}

BlockWeights BlockWeights::bind(const BoundParams& p, const std::string& prefix, std::size_t heads) {
  BlockWeights w;
  w.wq = p(prefix + "/attn.wq");
  w.bq = p(prefix + "/attn.bq");
  w.wk = p(prefix + "/attn.wk");
  w.bk = p(prefix + "/attn.bk");
  w.wv = p(prefix + "/attn.wv");
  w.bv = p(prefix + "/attn.bv");
  w.wo = p(prefix + "/attn.wo");
  w.bo = p(prefix + "/attn.bo");
  w.mod_w = p(prefix + "/mod.w");
  w.mod_b = p(prefix + "/mod.b");
  w.ff_w1 = p(prefix + "/ff.w1");
  w.ff_b1 = p(prefix + "/ff.b1");
  w.ff_w2 = p(prefix + "/ff.w2");
  w.ff_b2 = p(prefix + "/ff.b2");
  w.heads = heads;
  return w;
}

AdapterBlockWeights AdapterBlockWeights::bind(const BoundParams& p, const std::string& prefix) {
  return AdapterBlockWeights{p(prefix + "/k.w"), p(prefix + "/v.w")};
}

Var linear(const Var& x, const Var& w, const Var& b) { return ops::add_row(ops::matmul(x, w), b); }

Tensor xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  return rng.normal_tensor({fan_in, fan_out}, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
}

Tensor timestep_sinusoid(double t, std::size_t d, double time_scale) {
  if (d == 0 || d % 2 != 0) throw ConfigError("timestep embedding width must be even, got " + std::to_string(d));
  const std::size_t half = d / 2;
  Tensor out({1, d});
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double arg = t * time_scale * freq;
    out.at(0, i) = std::sin(arg);
    out.at(0, half + i) = std::cos(arg);
  }
  return out;
}

Var timestep_embed(const BoundParams& p, const std::string& prefix, double t, const ModelConfig& cfg) {
  const Var s = p.tape().constant(timestep_sinusoid(t, cfg.width, cfg.time_scale));
  const Var h = ops::silu(linear(s, p(prefix + "/t.w1"), p(prefix + "/t.b1")));
  return linear(h, p(prefix + "/t.w2"), p(prefix + "/t.b2"));
}

Var multihead_attention(const Var& q, const Var& k, const Var& v, std::size_t heads) {
  const std::size_t width = q.shape()[1];
  if (k.shape()[1] != width || v.shape()[1] != width || k.shape()[0] != v.shape()[0]) {
    throw DimensionError("attention operands disagree: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()));
  }
  if (heads == 0 || width % heads != 0) throw DimensionError("width not divisible by head count");
  const std::size_t hd = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Var kt = ops::transpose(k);
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = heads == 1 ? q : ops::slice(q, 1, h * hd, (h + 1) * hd);
    const Var kth = heads == 1 ? kt : ops::slice(kt, 0, h * hd, (h + 1) * hd);
    const Var vh = heads == 1 ? v : ops::slice(v, 1, h * hd, (h + 1) * hd);
    const Var attn = ops::softmax(ops::scale(ops::matmul(qh, kth), scale));
    outs.push_back(ops::matmul(attn, vh));
  }
  return ops::concat(outs, 1);
}

JointAttentionOut joint_attention(const Var& modulated_image, std::size_t garment_rows,
                                  const std::optional<Var>& modulated_text, const BlockWeights& w,
                                  const AdapterInput* adapter, bool garment_queries) {
  const std::size_t width = modulated_image.shape()[1];
  if (modulated_text && modulated_text->shape()[1] != width) {
    throw DimensionError("text width " + std::to_string(modulated_text->shape()[1]) + " != image width " +
                         std::to_string(width));
  }
  if (w.wq.shape()[0] != width) throw DimensionError("block weights expect a different width");
  const std::size_t n_image = modulated_image.shape()[0];
  if (garment_rows >= n_image) throw ContractError("image stream has no try-on rows");
  const std::size_t n_query_image = garment_queries ? n_image : n_image - garment_rows;

  const Var joint = modulated_text ? ops::concat({modulated_image, *modulated_text}, 0) : modulated_image;
  const Var k = linear(joint, w.wk, w.bk);
  const Var v = linear(joint, w.wv, w.bv);

  const Var q_image =
      linear(n_query_image == n_image ? modulated_image : ops::slice(modulated_image, 0, 0, n_query_image), w.wq, w.bq);
  Var z_image;
  if (adapter) {
    const Var ki = ops::matmul(adapter->semantic, adapter->weights.wk);
    const Var vi = ops::matmul(adapter->semantic, adapter->weights.wv);
    z_image = decoupled_attention(q_image, k, v, ki, vi, adapter->lambda, w.heads);
  } else {
    z_image = multihead_attention(q_image, k, v, w.heads);
  }

  JointAttentionOut out;
  if (modulated_text) {
    const Var q_text = linear(*modulated_text, w.wq, w.bq);
    const Var z_text = multihead_attention(q_text, k, v, w.heads);
    const Var projected = linear(ops::concat({z_image, z_text}, 0), w.wo, w.bo);
    const std::size_t total = n_query_image + modulated_text->shape()[0];
    out.image = ops::slice(projected, 0, 0, n_query_image);
    out.text = ops::slice(projected, 0, n_query_image, total);
  } else {
    out.image = linear(z_image, w.wo, w.bo);
  }
  return out;
}

namespace {

struct Modulation {
  Var shift1, scale1, gate1, shift2, scale2, gate2;
};

Modulation modulation(const Var& t_embed, const BlockWeights& w) {
  const std::size_t width = t_embed.shape()[1];
  const Var mod = linear(ops::silu(t_embed), w.mod_w, w.mod_b);
  const Var one = t_embed.tape().constant(Tensor::scalar(1.0));
  auto chunk = [&](std::size_t i) { return ops::slice(mod, 1, i * width, (i + 1) * width); };
  return Modulation{chunk(0), ops::add(chunk(1), one), chunk(2), chunk(3), ops::add(chunk(4), one), chunk(5)};
}

Var modulate(const Var& x, const Var& shift, const Var& scale_plus_one, double eps) {
  return ops::add_row(ops::mul_row(ops::layer_norm(x, eps), scale_plus_one), shift);
}

struct AttentionStage {
  Var residual;  // concat(try-on, text) after the gated attention residual
  std::size_t n_tryon = 0;
  bool has_text = false;
  Modulation mod;
};

AttentionStage attention_stage(const TokenStreams& s, const BlockWeights& w, const AdapterInput* adapter,
                               double ln_eps) {
  if (!s.tryon.valid() || s.tryon.shape()[0] == 0) throw ContractError("try-on stream is empty");
  const std::size_t width = s.tryon.shape()[1];
  if (s.garment && s.garment->shape()[1] != width) throw DimensionError("garment features have the wrong width");
  if (s.t_embed.shape() != Shape{1, width}) throw DimensionError("timestep embedding must be 1 x width");

  AttentionStage st;
  st.n_tryon = s.tryon.shape()[0];
  st.has_text = s.text.has_value();
  st.mod = modulation(s.t_embed, w);

  const std::size_t n_garment = s.garment ? s.garment->shape()[0] : 0;
  const Var image = s.garment ? ops::concat({s.tryon, *s.garment}, 0) : s.tryon;
  const Var image_h = modulate(image, st.mod.shift1, st.mod.scale1, ln_eps);
  std::optional<Var> text_h;
  if (s.text) text_h = modulate(*s.text, st.mod.shift1, st.mod.scale1, ln_eps);

  const JointAttentionOut jo = joint_attention(image_h, n_garment, text_h, w, adapter, /*garment_queries=*/false);
  const Var kept = s.text ? ops::concat({s.tryon, *s.text}, 0) : s.tryon;
  const Var attn_out = jo.text ? ops::concat({jo.image, *jo.text}, 0) : jo.image;
  st.residual = ops::add(kept, ops::mul_row(attn_out, st.mod.gate1));
  return st;
}

}  // namespace

Var block_attention_residual(const TokenStreams& streams, const BlockWeights& w, const AdapterInput* adapter,
                             double ln_eps) {
  return attention_stage(streams, w, adapter, ln_eps).residual;
}

BlockOutput block_forward(const TokenStreams& streams, const BlockWeights& w, const AdapterInput* adapter,
                          double ln_eps) {
  const AttentionStage st = attention_stage(streams, w, adapter, ln_eps);
  const Var h = modulate(st.residual, st.mod.shift2, st.mod.scale2, ln_eps);
  const Var ff = linear(ops::gelu(linear(h, w.ff_w1, w.ff_b1)), w.ff_w2, w.ff_b2);
  const Var x = ops::add(st.residual, ops::mul_row(ff, st.mod.gate2));

  BlockOutput out;
  if (st.has_text) {
    out.tryon = ops::slice(x, 0, 0, st.n_tryon);
    out.text = ops::slice(x, 0, st.n_tryon, x.shape()[0]);
  } else {
    out.tryon = x;
  }
  return out;
}

void init_block_params(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
  const std::size_t w = cfg.width, hidden = cfg.ff_hidden();
  for (const char* name : {"q", "k", "v", "o"}) {
    store.set(prefix + "/attn.w" + name, xavier(rng, w, w));
    store.set(prefix + "/attn.b" + name, Tensor({w}));
  }
  store.set(prefix + "/mod.w", Tensor({w, 6 * w}));
  store.set(prefix + "/mod.b", Tensor({6 * w}));
  store.set(prefix + "/ff.w1", xavier(rng, w, hidden));
  store.set(prefix + "/ff.b1", Tensor({hidden}));
  store.set(prefix + "/ff.w2", xavier(rng, hidden, w));
  store.set(prefix + "/ff.b2", Tensor({w}));
}

void init_timestep_params(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
  const std::size_t w = cfg.width;
  store.set(prefix + "/t.w1", xavier(rng, w, w));
  store.set(prefix + "/t.b1", Tensor({w}));
  store.set(prefix + "/t.w2", xavier(rng, w, w));
  store.set(prefix + "/t.b2", Tensor({w}));
}

}  // namespace dittryon
