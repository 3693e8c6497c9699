#pragma once

#include "gcmpc/linalg.hpp"
#include "gcmpc/tire_models.hpp"
#include "gcmpc/vehicle_models.hpp"

#include <algorithm>
#include <cmath>

namespace gcmpc {

enum class RearPeakSource {
  Mean,   ///< peak of the mean envelope force
  Earliest,  ///< earliest peak over the admissible tires
};

struct EnvelopeOptions
{
  bool yaw_limit_gravity{true};
  RearPeakSource rear_peak{RearPeakSource::Mean};
};

/// Handling-envelope constraints M x + N u <= o over the augmented state.
struct EnvelopeConstraints
{
  Mat6 M;
  Vec6 N;
  Vec6 o;
  double r_max{};
  double alpha_r_peak{};
  double F_yf_max{};
};

/**
 * Maximum sustainable yaw rate. With `with_gravity` the bound is
 * (mu g / v_x) (ab + max(a,b)^2) / (min(a,b)(a+b)); without it the g factor is dropped.
 */
[[nodiscard]] inline double max_yaw_rate(const VehicleParams& vp, double mu, double v_x,
                                         bool with_gravity = true)
{
  require_positive_speed(v_x);
  const double a = vp.dist_front;
  const double b = vp.dist_rear;
  const double geometry =
    (a * b + std::max(a, b) * std::max(a, b)) / (std::min(a, b) * (a + b));
  const double g = with_gravity ? vp.gravity : 1.0;
  return mu * g / v_x * geometry;
}

[[nodiscard]] inline double rear_peak_slip(const ForceEnvelope& env_r, RearPeakSource source)
{
  return source == RearPeakSource::Mean ? env_r.peak_slip() : env_r.earliest_peak_slip();
}

/// Bound vector for the given limits, rows ordered slip+, slip-, yaw+, yaw-, force+, force-.
[[nodiscard]] inline Vec6 constraint_bounds(double v_x, double alpha_r_peak, double r_max,
                                            double force_max)
{
  const double slip = v_x * std::tan(alpha_r_peak);
  Vec6 o;
  o << slip, slip, r_max, r_max, force_max, force_max;
  return o;
}

[[nodiscard]] inline EnvelopeConstraints build_constraints(const VehicleParams& vp,
                                                           const ForceEnvelope& /*env_f*/,
                                                           const ForceEnvelope& env_r, double mu,
                                                           double v_x,
                                                           const EnvelopeOptions& opts = {})
{
  require_positive_speed(v_x);
  const double b = vp.dist_rear;
  EnvelopeConstraints c;
  c.M.setZero();
  c.M(0, 3) = 1.0;
  c.M(0, 4) = -b;
  c.M(1, 3) = -1.0;
  c.M(1, 4) = b;
  c.M(2, 4) = 1.0;
  c.M(3, 4) = -1.0;
  c.N.setZero();
  c.N(4) = 1.0;
  c.N(5) = -1.0;
  c.alpha_r_peak = rear_peak_slip(env_r, opts.rear_peak);
  c.r_max = max_yaw_rate(vp, mu, v_x, opts.yaw_limit_gravity);
  c.F_yf_max = mu * normal_loads(vp).front;
  c.o = constraint_bounds(v_x, c.alpha_r_peak, c.r_max, c.F_yf_max);
  return c;
}

}  // namespace gcmpc
