#include "dittryon/flow.hpp"

#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

namespace dittryon {

double NoiseSchedule::alpha_bar_at(std::size_t t) const {
  if (t == 0) return 1.0;
  if (t > steps()) throw RangeError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  return alpha_bar[t - 1];
}

NoiseSchedule make_schedule(std::size_t steps, double beta_min, double beta_max) {
  if (steps < 1) throw ConfigError("schedule needs at least one step");
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
    throw ConfigError("schedule requires 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  double running = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    s.beta[i] = beta_min + (beta_max - beta_min) * frac;
    s.alpha[i] = 1.0 - s.beta[i];
    running *= s.alpha[i];
    s.alpha_bar[i] = running;
  }
  return s;
}

Tensor forward_sample_vp(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps()) {
    throw RangeError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(schedule.steps()) + "]");
  }
  if (z0.shape() != eps.shape()) throw DimensionError("noise shape differs from z0");
  const double ab = schedule.alpha_bar_at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < z0.numel(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

FlowSample rf_interpolate(const Tensor& z0, const Tensor& eps, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw RangeError("rectified-flow time must lie in [0, 1]");
  if (z0.shape() != eps.shape()) throw DimensionError("noise shape differs from z0");
  FlowSample s{Tensor(z0.shape()), t, Tensor(z0.shape())};
  for (std::size_t i = 0; i < z0.numel(); ++i) {
    s.z_t[i] = (1.0 - t) * z0[i] + t * eps[i];
    s.u_target[i] = eps[i] - z0[i];
  }
  return s;
}

double cfm_loss(const Tensor& v_pred, const FlowSample& sample) {
  if (v_pred.shape() != sample.u_target.shape()) {
    throw DimensionError("velocity " + shape_str(v_pred.shape()) + " vs target " + shape_str(sample.u_target.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < v_pred.numel(); ++i) {
    const double d = v_pred[i] - sample.u_target[i];
    s += d * d;
  }
  return s / static_cast<double>(v_pred.numel());
}

Var cfm_loss(const Var& v_pred, const Tensor& u_target) {
  return ops::mse(v_pred, v_pred.tape().constant(u_target));
}

Tensor euler_sample(const VelocityField& field, const Tensor& z_start, std::size_t steps,
                    const TrajectoryObserver& observer) {
  if (steps < 1) throw ConfigError("sampler needs at least one step");
  const double dt = 1.0 / static_cast<double>(steps);
  Tensor z = z_start;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = 1.0 - static_cast<double>(k) * dt;
    const Tensor v = field(z, t);
    if (v.shape() != z.shape()) throw DimensionError("velocity field changed the latent shape");
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] -= dt * v[i];
    if (!z.all_finite()) throw NumericError("non-finite latent at sampler step " + std::to_string(k));
    if (observer) observer(k, t - dt, z);
  }
  return z;
}

TrajectoryObserver jsonl_trajectory(std::ostream& out) {
  return [&out](std::size_t step, double t, const Tensor& z) {
    const double rms = l2_norm(z) / std::sqrt(static_cast<double>(z.numel()));
    out << nlohmann::json{{"step", step}, {"t", t}, {"rms", rms}}.dump() << '\n';
  };
}

}  // namespace dittryon
