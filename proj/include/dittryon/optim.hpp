#pragma once

#include <map>
#include <string>

#include "dittryon/params.hpp"

namespace dittryon {

enum class OptimizerKind { adam, sgd_momentum };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;
  double clip_norm = 1.0;  // global gradient norm cap; 0 disables
};

/// First-order optimizer over named parameters. Moment buffers are created on
/// the first step a parameter receives a gradient.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  /// Updates every parameter named in `grads`; others are untouched.
  void step(ParamStore& params, const std::map<std::string, Tensor>& grads);

  std::size_t steps() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

double global_norm(const std::map<std::string, Tensor>& grads);

}  // namespace dittryon
