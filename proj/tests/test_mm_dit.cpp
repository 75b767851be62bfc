#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "dittryon/gs_adapter.hpp"
#include "dittryon/mm_dit.hpp"

using namespace dittryon;

namespace {

using Mat = Eigen::MatrixXd;

ModelConfig small_config(std::size_t width = 8, std::size_t heads = 2) {
  ModelConfig cfg;
  cfg.width = width;
  cfg.heads = heads;
  cfg.depth = 1;
  return cfg;
}

// Block parameters with open gates (modulation weights are zero after init).
ParamStore block_store(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  init_block_params(store, "b", cfg, rng);
  store.set("b/mod.w", rng.normal_tensor({cfg.width, 6 * cfg.width}, 0.3));
  store.set("b/mod.b", rng.normal_tensor({6 * cfg.width}, 0.3));
  for (const char* n : {"attn.bq", "attn.bk", "attn.bv", "attn.bo", "ff.b1", "ff.b2"}) {
    const std::string name = std::string("b/") + n;
    store.set(name, rng.normal_tensor(store.get(name).shape(), 0.1));
  }
  store.set("a/k.w", rng.normal_tensor({cfg.width, cfg.width}, 0.4));
  store.set("a/v.w", rng.normal_tensor({cfg.width, cfg.width}, 0.4));
  return store;
}

Mat to_mat(const Tensor& t) {
  const std::size_t r = t.rank() == 1 ? 1 : t.dim(0), c = t.rank() == 1 ? t.dim(0) : t.dim(1);
  Mat m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = t.values()[i * c + j];
  return m;
}

Mat ref_ln(const Mat& x, double eps) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    out.row(r) = (x.row(r).array() - mu) / std::sqrt(var + eps);
  }
  return out;
}

Mat ref_attention(const Mat& q, const Mat& k, const Mat& v, std::size_t heads) {
  const Eigen::Index hd = q.cols() / static_cast<Eigen::Index>(heads);
  Mat out(q.rows(), q.cols());
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * hd;
    Mat s = q.middleCols(c0, hd) * k.middleCols(c0, hd).transpose() / std::sqrt(static_cast<double>(hd));
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double m = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - m).exp();
      s.row(r) /= s.row(r).sum();
    }
    out.middleCols(c0, hd) = s * v.middleCols(c0, hd);
  }
  return out;
}

// Plain MM-DiT block on concat(image, text) written directly with Eigen.
Mat ref_block(const ParamStore& s, const Mat& x, const Mat& temb, std::size_t heads, double eps) {
  auto P = [&](const char* n) { return to_mat(s.get(std::string("b/") + n)); };
  auto lin = [](const Mat& a, const Mat& w, const Mat& b) -> Mat { return (a * w).rowwise() + b.row(0); };
  const Mat st = temb.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
  const Mat mod = lin(st, P("mod.w"), P("mod.b"));
  const Eigen::Index d = x.cols();
  auto chunk = [&](int i) -> Eigen::RowVectorXd { return mod.middleCols(i * d, d).row(0); };
  auto modulate = [&](const Mat& a, int shift, int scale) -> Mat {
    Mat h = ref_ln(a, eps);
    h = h.array().rowwise() * (chunk(scale).array() + 1.0);
    return h.rowwise() + chunk(shift);
  };
  const Mat h = modulate(x, 0, 1);
  const Mat attn = ref_attention(lin(h, P("attn.wq"), P("attn.bq")), lin(h, P("attn.wk"), P("attn.bk")),
                                 lin(h, P("attn.wv"), P("attn.bv")), heads);
  Mat r = x + (lin(attn, P("attn.wo"), P("attn.bo")).array().rowwise() * chunk(2).array()).matrix();
  const Mat h2 = modulate(r, 3, 4);
  const Mat f1 = lin(h2, P("ff.w1"), P("ff.b1"))
                     .unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
  return r + (lin(f1, P("ff.w2"), P("ff.b2")).array().rowwise() * chunk(5).array()).matrix();
}

double max_diff(const Tensor& a, const Mat& b) { return (to_mat(a) - b).cwiseAbs().maxCoeff(); }

struct Inputs {
  Tensor tryon, garment, text, temb, semantic;
};

Inputs random_inputs(const ModelConfig& cfg, std::uint64_t seed, std::size_t n_tryon = 4, std::size_t n_garment = 3,
                     std::size_t n_text = 2) {
  Rng rng(seed);
  return Inputs{rng.normal_tensor({n_tryon, cfg.width}), rng.normal_tensor({n_garment, cfg.width}),
                rng.normal_tensor({n_text, cfg.width}), rng.normal_tensor({1, cfg.width}),
                rng.normal_tensor({5, cfg.width})};
}

}  // namespace

TEST(TimestepEmbed, SinusoidAtZero) {
  const Tensor s = timestep_sinusoid(0.0, 8, 100.0);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(s.at(0, i), 0.0);
    EXPECT_EQ(s.at(0, 4 + i), 1.0);
  }
  EXPECT_THROW(timestep_sinusoid(0.5, 7, 100.0), ConfigError);
}

TEST(TimestepEmbed, DeterministicAndLipschitz) {
  const ModelConfig cfg = small_config();
  ParamStore store;
  Rng rng(1);
  init_timestep_params(store, "m", cfg, rng);
  auto embed = [&](double t) {
    Tape tape;
    const BoundParams p(tape, store, {});
    return timestep_embed(p, "m", t, cfg).value();
  };
  EXPECT_TRUE(bit_equal(embed(0.37), embed(0.37)));
  for (double t : {0.0, 0.25, 0.9}) EXPECT_LT(max_abs_diff(embed(t), embed(t + 1e-9)), 1e-6);
}

TEST(JointAttention, SingleTokenIsValueProjection) {
  const ModelConfig cfg = small_config();
  const ParamStore store = block_store(cfg, 2);
  Rng rng(3);
  const Tensor x = rng.normal_tensor({1, cfg.width});
  Tape tape;
  const BoundParams p(tape, store, {});
  const BlockWeights w = BlockWeights::bind(p, "b", cfg.heads);
  const JointAttentionOut out = joint_attention(tape.constant(x), 0, std::nullopt, w, nullptr);
  auto P = [&](const char* n) { return to_mat(store.get(std::string("b/") + n)); };
  const Mat v = (to_mat(x) * P("attn.wv")).rowwise() + P("attn.bv").row(0);
  const Mat expect = (v * P("attn.wo")).rowwise() + P("attn.bo").row(0);
  EXPECT_LT(max_diff(out.image.value(), expect), 1e-12);
  EXPECT_FALSE(out.text.has_value());
}

TEST(JointAttention, WidthMismatchIsShapeError) {
  const ModelConfig cfg = small_config();
  const ParamStore store = block_store(cfg, 2);
  Tape tape;
  const BoundParams p(tape, store, {});
  const BlockWeights w = BlockWeights::bind(p, "b", cfg.heads);
  const Var img = tape.constant(Tensor({2, cfg.width}));
  EXPECT_THROW(joint_attention(img, 0, tape.constant(Tensor({2, cfg.width + 2})), w, nullptr), DimensionError);
  EXPECT_THROW(joint_attention(tape.constant(Tensor({2, 6})), 0, std::nullopt, w, nullptr), DimensionError);
}

TEST(JointAttention, TextPermutationEquivariance) {
  const ModelConfig cfg = small_config();
  const ParamStore store = block_store(cfg, 4);
  const Inputs in = random_inputs(cfg, 5, 4, 1, 3);
  Tensor permuted = in.text;
  const std::size_t perm[3] = {2, 0, 1};
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < cfg.width; ++c) permuted.at(r, c) = in.text.at(perm[r], c);

  auto run = [&](const Tensor& text) {
    Tape tape;
    const BoundParams p(tape, store, {});
    const BlockWeights w = BlockWeights::bind(p, "b", cfg.heads);
    const JointAttentionOut o = joint_attention(tape.constant(in.tryon), 0, tape.constant(text), w, nullptr);
    return std::make_pair(o.image.value(), o.text->value());
  };
  const auto [img_a, txt_a] = run(in.text);
  const auto [img_b, txt_b] = run(permuted);
  EXPECT_LT(max_abs_diff(img_a, img_b), 1e-12);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < cfg.width; ++c) EXPECT_NEAR(txt_b.at(r, c), txt_a.at(perm[r], c), 1e-12);
}

TEST(JointAttention, GradientWrtQueries) {
  const ModelConfig cfg = small_config();
  Rng rng(6);
  const Tensor k = rng.normal_tensor({5, cfg.width}), v = rng.normal_tensor({5, cfg.width});
  const Tensor q = rng.normal_tensor({3, cfg.width}), up = rng.normal_tensor({3, cfg.width});
  const double err = grad_check(
      [&](Tape& t, const Var& x) {
        return ops::sum(ops::mul(multihead_attention(x, t.constant(k), t.constant(v), cfg.heads), t.constant(up)));
      },
      q);
  EXPECT_LT(err, 1e-4);
}

TEST(Attention, WeightsSumToOneAndShiftInvariant) {
  Rng rng(7);
  const Tensor logits = rng.normal_tensor({6, 9}, 3.0);
  Tensor shifted = logits;
  for (auto& v : shifted.data()) v += 17.5;
  Tape tape;
  const Tensor a = ops::softmax(tape.constant(logits)).value();
  const Tensor b = ops::softmax(tape.constant(shifted)).value();
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) s += a.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_LT(max_abs_diff(a, b), 1e-9);
}

TEST(Block, PlainBlockMatchesReference) {
  const ModelConfig cfg = small_config();
  const ParamStore store = block_store(cfg, 8);
  const Inputs in = random_inputs(cfg, 9);
  Tape tape;
  const BoundParams p(tape, store, {});
  const BlockWeights w = BlockWeights::bind(p, "b", cfg.heads);
  const BlockOutput out =
      block_forward(TokenStreams{tape.constant(in.tryon), std::nullopt, tape.constant(in.text), tape.constant(in.temb)},
                    w, nullptr, cfg.ln_eps);

  Mat x(6, cfg.width);
  x << to_mat(in.tryon), to_mat(in.text);
  const Mat ref = ref_block(store, x, to_mat(in.temb), cfg.heads, cfg.ln_eps);
  EXPECT_LT(max_diff(out.tryon.value(), ref.topRows(4)), 1e-12);
  ASSERT_TRUE(out.text.has_value());
  EXPECT_LT(max_diff(out.text->value(), ref.bottomRows(2)), 1e-12);
  // Text tokens are carried forward and updated.
  EXPECT_GT(max_abs_diff(out.text->value(), in.text), 1e-3);
}

TEST(Block, LambdaZeroCollapsesAdapter) {
  const ModelConfig cfg = small_config();
  const ParamStore store = block_store(cfg, 10);
  const Inputs in = random_inputs(cfg, 11);
  auto run = [&](bool with_adapter, std::optional<Tensor> garment) {
    Tape tape;
    const BoundParams p(tape, store, {});
    const BlockWeights w = BlockWeights::bind(p, "b", cfg.heads);
    AdapterInput ai{tape.constant(in.semantic), AdapterBlockWeights::bind(p, "a"), tape.constant(Tensor::scalar(0.0))};
    std::optional<Var> g;
    if (garment) g = tape.constant(*garment);
    return block_forward(TokenStreams{tape.constant(in.tryon), g, tape.constant(in.text), tape.constant(in.temb)}, w,
                         with_adapter ? &ai : nullptr, cfg.ln_eps)
        .tryon.value();
  };
  EXPECT_LT(max_abs_diff(run(true, in.garment), run(false, in.garment)), 1e-12);
  EXPECT_LT(max_abs_diff(run(true, std::nullopt), run(false, std::nullopt)), 1e-12);
  // Garment tokens do change the try-on output.
  EXPECT_GT(max_abs_diff(run(false, in.garment), run(false, std::nullopt)), 1e-6);
}

TEST(Block, EmptyTryonIsContractError) {
  const ModelConfig cfg = small_config();
  const ParamStore store = block_store(cfg, 12);
  Tape tape;
  const BoundParams p(tape, store, {});
  const BlockWeights w = BlockWeights::bind(p, "b", cfg.heads);
  const Var t = tape.constant(Tensor({1, cfg.width}));
  EXPECT_THROW(block_forward(TokenStreams{Var{}, std::nullopt, std::nullopt, t}, w,
                             nullptr, cfg.ln_eps),
               ContractError);
  EXPECT_THROW(block_forward(TokenStreams{tape.constant(Tensor({2, cfg.width})), tape.constant(Tensor({2, 6})),
                                          std::nullopt, t},
                             w, nullptr, cfg.ln_eps),
               DimensionError);
}

TEST(Block, TwoTokenLossGradientCheck) {
  const ModelConfig cfg = small_config();
  const ParamStore store = block_store(cfg, 13);
  const Inputs in = random_inputs(cfg, 14, 2, 1, 1);
  const Tensor target = Rng(15).normal_tensor({2, cfg.width});
  const double err = grad_check(
      [&](Tape& tape, const Var& x) {
        const BoundParams p(tape, store, {});
        const BlockWeights w = BlockWeights::bind(p, "b", cfg.heads);
        AdapterInput ai{tape.constant(in.semantic), AdapterBlockWeights::bind(p, "a"),
                        tape.constant(Tensor::scalar(0.7))};
        const BlockOutput o = block_forward(
            TokenStreams{x, tape.constant(in.garment), tape.constant(in.text), tape.constant(in.temb)}, w, &ai,
            cfg.ln_eps);
        return ops::mse(o.tryon, tape.constant(target));
      },
      in.tryon);
  EXPECT_LT(err, 1e-4);
}

TEST(Block, AttentionResidualIsAffineInLambda) {
  const ModelConfig cfg = small_config();
  const ParamStore store = block_store(cfg, 16);
  const Inputs in = random_inputs(cfg, 17);
  auto run = [&](double lambda) {
    Tape tape;
    const BoundParams p(tape, store, {});
    const BlockWeights w = BlockWeights::bind(p, "b", cfg.heads);
    AdapterInput ai{tape.constant(in.semantic), AdapterBlockWeights::bind(p, "a"),
                    tape.constant(Tensor::scalar(lambda))};
    return block_attention_residual(
               TokenStreams{tape.constant(in.tryon), tape.constant(in.garment), tape.constant(in.text),
                            tape.constant(in.temb)},
               w, &ai, cfg.ln_eps)
        .value();
  };
  for (auto [l1, l2] : {std::pair{0.0, 1.0}, std::pair{0.3, 2.5}, std::pair{1.0, 4.0}}) {
    const Tensor a = run(l1), b = run(l2), m = run(0.5 * (l1 + l2));
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] + b[i] - 2.0 * m[i]));
    EXPECT_LT(worst, 1e-9);
  }
  // The feed-forward after the residual is not affine, so check the adapter really contributes.
  EXPECT_GT(max_abs_diff(run(0.0), run(1.0)), 1e-6);
}

TEST(Block, GarmentEntersOnlyThroughJointAttention) {
  const ModelConfig cfg = small_config();
  ParamStore store = block_store(cfg, 18);
  const Inputs in = random_inputs(cfg, 19);

  auto grads = [&](const ParamStore& s) {
    Tape tape;
    const BoundParams p(tape, s, {});
    const BlockWeights w = BlockWeights::bind(p, "b", cfg.heads);
    const Var garment = tape.leaf(in.garment, true);
    const Var semantic = tape.leaf(in.semantic, true);
    const Var tryon = tape.leaf(in.tryon, true);
    AdapterInput ai{semantic, AdapterBlockWeights::bind(p, "a"), tape.constant(Tensor::scalar(0.0))};
    const BlockOutput o = block_forward(
        TokenStreams{tryon, garment, tape.constant(in.text), tape.constant(in.temb)}, w, &ai, cfg.ln_eps);
    const GradientMap g = tape.backward(ops::sum(ops::mul(o.tryon, o.tryon)));
    return std::array<double, 3>{l2_norm(g[garment]), l2_norm(g[semantic]), l2_norm(g[tryon])};
  };
  const auto open = grads(store);
  EXPECT_GT(open[0], 1e-6);
  EXPECT_EQ(open[1], 0.0);

  // Remove the joint-attention output path: garment gradient vanishes, try-on keeps its residual path.
  store.set("b/attn.wo", Tensor({cfg.width, cfg.width}));
  const auto cut = grads(store);
  EXPECT_EQ(cut[0], 0.0);
  EXPECT_EQ(cut[1], 0.0);
  EXPECT_GT(cut[2], 1e-6);
}
