#include "dittryon/optim.hpp"

#include <cmath>

namespace dittryon {

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
  if (cfg_.lr < 0.0) throw ConfigError("learning rate must be >= 0");
  if (cfg_.clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (cfg_.momentum < 0.0 || cfg_.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
}

double global_norm(const std::map<std::string, Tensor>& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.values()) s += v * v;
  }
  return std::sqrt(s);
}

void Optimizer::step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
  ++t_;
  double factor = 1.0;
  if (cfg_.clip_norm > 0.0) {
    const double norm = global_norm(grads);
    if (norm > cfg_.clip_norm) factor = cfg_.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Tensor& w = params.get_mut(name);
    if (w.shape() != g.shape()) throw DimensionError("gradient shape mismatch for " + name);
    auto mit = m_.try_emplace(name, Tensor(g.shape())).first;
    auto wv = w.data();
    auto gv = g.values();
    auto mv = mit->second.data();
    if (cfg_.kind == OptimizerKind::sgd_momentum) {
      for (std::size_t i = 0; i < wv.size(); ++i) {
        mv[i] = cfg_.momentum * mv[i] + factor * gv[i];
        wv[i] -= cfg_.lr * mv[i];
      }
      continue;
    }
    auto vv = v_.try_emplace(name, Tensor(g.shape())).first->second.data();
    for (std::size_t i = 0; i < wv.size(); ++i) {
      const double gi = factor * gv[i];
      mv[i] = cfg_.beta1 * mv[i] + (1.0 - cfg_.beta1) * gi;
      vv[i] = cfg_.beta2 * vv[i] + (1.0 - cfg_.beta2) * gi * gi;
      wv[i] -= cfg_.lr * (mv[i] / bc1) / (std::sqrt(vv[i] / bc2) + cfg_.eps);
    }
  }
}

}  // namespace dittryon
