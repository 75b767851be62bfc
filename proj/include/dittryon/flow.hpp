#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <vector>

#include "dittryon/autodiff.hpp"
#include "dittryon/tensor.hpp"

namespace dittryon {

/// Discrete variance schedule: beta, alpha = 1 - beta, alpha_bar = running product.
/// Index t runs 1..T; alpha_bar(0) is 1.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  std::size_t steps() const { return beta.size(); }
  double alpha_bar_at(std::size_t t) const;
};

/// Linear beta ramp from beta_min to beta_max over T steps.
NoiseSchedule make_schedule(std::size_t steps, double beta_min, double beta_max);

/// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps, t in [1, T].
Tensor forward_sample_vp(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule);

/// A point on the straight path from data (t = 0) to noise (t = 1).
struct FlowSample {
  Tensor z_t;
  double t = 0.0;
  Tensor u_target;  // eps - z0, constant along the path
};

FlowSample rf_interpolate(const Tensor& z0, const Tensor& eps, double t);

/// Mean squared error between predicted and target velocity.
double cfm_loss(const Tensor& v_pred, const FlowSample& sample);
Var cfm_loss(const Var& v_pred, const Tensor& u_target);

/// Velocity field v(z, t); conditioning is captured by the callable.
using VelocityField = std::function<Tensor(const Tensor& z, double t)>;
using TrajectoryObserver = std::function<void(std::size_t step, double t, const Tensor& z)>;

/// Integrates dz/dt = v from t = 1 to t = 0 with N uniform Euler steps and
/// returns the predicted z0. Throws NumericError naming the step on NaN/Inf.
Tensor euler_sample(const VelocityField& field, const Tensor& z_start, std::size_t steps,
                    const TrajectoryObserver& observer = {});

/// Observer writing one JSON object per step: {"step", "t", "rms"}.
TrajectoryObserver jsonl_trajectory(std::ostream& out);

}  // namespace dittryon
