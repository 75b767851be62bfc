#include "dittryon/gs_adapter.hpp"

#include <cmath>

#include "dittryon/mm_dit.hpp"

namespace dittryon {

namespace {
constexpr std::size_t kCellFeatures = 12;  // 4 quadrants x 3 channels
}

SemanticEncoder::SemanticEncoder(std::size_t image_size, std::size_t sem_dim, std::uint64_t seed,
                                 std::vector<std::size_t> levels)
    : image_size_(image_size), sem_dim_(sem_dim), levels_(std::move(levels)) {
  if (sem_dim == 0 || levels_.empty()) throw ConfigError("semantic encoder needs sem_dim > 0 and levels");
  for (std::size_t s : levels_) {
    if (s == 0 || image_size % (2 * s) != 0) {
      throw ConfigError("image size " + std::to_string(image_size) + " cannot be split into " + std::to_string(s) +
                        "x" + std::to_string(s) + " cells with quadrants");
    }
    Rng rng(Rng::derive(seed, 0x5e3 + s));
    mix_.push_back(rng.normal_tensor({kCellFeatures, sem_dim}, 1.0 / std::sqrt(static_cast<double>(kCellFeatures))));
  }
}

SemanticEncoder SemanticEncoder::from_params(const ParamStore& store, std::size_t image_size) {
  SemanticEncoder enc;
  enc.image_size_ = image_size;
  for (const auto& [name, t] : store.section("semenc")) {
    const std::string prefix = "semenc/mix.l";
    if (name.rfind(prefix, 0) != 0) continue;
    enc.levels_.push_back(std::stoul(name.substr(prefix.size())));
    enc.mix_.push_back(t);
    enc.sem_dim_ = t.dim(1);
  }
  if (enc.levels_.empty()) throw CheckpointError("checkpoint has no semenc section");
  return enc;
}

void SemanticEncoder::export_params(ParamStore& store) const {
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    store.set("semenc/mix.l" + std::to_string(levels_[i]), mix_[i]);
  }
}

std::size_t SemanticEncoder::token_count() const {
  std::size_t n = 0;
  for (std::size_t s : levels_) n += s * s;
  return n;
}

SemanticTokens SemanticEncoder::encode(const ImageGrid& img, std::string source) const {
  if (img.channels != 3 || img.height != image_size_ || img.width != image_size_) {
    throw DimensionError("semantic encoder expects a " + std::to_string(image_size_) + "x" +
                         std::to_string(image_size_) + " RGB image");
  }
  Tensor tokens({token_count(), sem_dim_});
  std::size_t tok = 0;
  double feat[kCellFeatures];
  for (std::size_t li = 0; li < levels_.size(); ++li) {
    const std::size_t cells = levels_[li];
    const std::size_t cell = image_size_ / cells, half = cell / 2;
    const double area = static_cast<double>(half * half);
    for (std::size_t cy = 0; cy < cells; ++cy) {
      for (std::size_t cx = 0; cx < cells; ++cx, ++tok) {
        std::size_t f = 0;
        for (std::size_t qy = 0; qy < 2; ++qy) {
          for (std::size_t qx = 0; qx < 2; ++qx) {
            for (std::size_t c = 0; c < 3; ++c) {
              double s = 0.0;
              for (std::size_t y = 0; y < half; ++y) {
                for (std::size_t x = 0; x < half; ++x) s += img.at(cy * cell + qy * half + y, cx * cell + qx * half + x, c);
              }
              feat[f++] = s / area - 0.5;
            }
          }
        }
        const Tensor& m = mix_[li];
        for (std::size_t j = 0; j < sem_dim_; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < kCellFeatures; ++i) s += feat[i] * m.at(i, j);
          tokens.at(tok, j) = s;
        }
      }
    }
  }
  return SemanticTokens{std::move(tokens), std::move(source)};
}

std::vector<double> SemanticEncoder::embed(const ImageGrid& img) const {
  const Tensor t = encode(img).tokens;
  std::vector<double> out(sem_dim_, 0.0);
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < sem_dim_; ++j) out[j] += t.at(i, j);
  }
  for (auto& v : out) v /= static_cast<double>(t.dim(0));
  return out;
}

SemanticEncoder SemanticEncoder::global_only() const {
  SemanticEncoder enc;
  enc.image_size_ = image_size_;
  enc.sem_dim_ = sem_dim_;
  enc.levels_ = {levels_.front()};
  enc.mix_ = {mix_.front()};
  return enc;
}

Var decoupled_attention(const Var& q, const Var& k_joint, const Var& v_joint, const Var& k_image, const Var& v_image,
                        const Var& lambda, std::size_t heads) {
  if (lambda.value().numel() != 1 || lambda.value().rank() != 0) throw DimensionError("lambda must be a scalar");
  if (lambda.value()[0] < 0.0) throw ConfigError("adapter lambda must be >= 0");
  const Var joint = multihead_attention(q, k_joint, v_joint, heads);
  const Var image = multihead_attention(q, k_image, v_image, heads);
  return ops::add(joint, ops::mul(lambda, image));
}

Var project_semantic(const BoundParams& p, const Tensor& semantic_tokens) {
  return linear(p.tape().constant(semantic_tokens), p("gsadapter/proj.w"), p("gsadapter/proj.b"));
}

void init_adapter_params(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  store.set("gsadapter/proj.w", xavier(rng, cfg.sem_dim, cfg.width));
  store.set("gsadapter/proj.b", Tensor({cfg.width}));
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::string prefix = "gsadapter/block" + std::to_string(i);
    store.set(prefix + "/k.w", xavier(rng, cfg.width, cfg.width));
    store.set(prefix + "/v.w", Tensor({cfg.width, cfg.width}));
  }
}

}  // namespace dittryon
