#pragma once

#include "gcmpc/linalg.hpp"
#include "gcmpc/tire_models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gcmpc {

struct VehicleParams
{
  double mass{};         ///< kg
  double yaw_inertia{};  ///< kg m^2
  double dist_front{};   ///< CG to front axle [m]
  double dist_rear{};    ///< CG to rear axle [m]
  TireUncertaintySet front{};
  TireUncertaintySet rear{};
  double gravity{9.81};

  [[nodiscard]] double wheelbase() const { return dist_front + dist_rear; }

  void validate() const
  {
    if (!(mass > 0.0) || !(yaw_inertia > 0.0) || !(dist_front > 0.0) || !(dist_rear > 0.0)) {
      throw std::invalid_argument("vehicle: mass, inertia and axle distances must be positive");
    }
    if (!(gravity > 0.0)) { throw std::invalid_argument("vehicle: gravity must be positive"); }
    front.validate();
    rear.validate();
  }
};

struct NormalLoads
{
  double front{};
  double rear{};
};

/// Static axle loads from the wheelbase split.
[[nodiscard]] inline NormalLoads normal_loads(double mass, double dist_front, double dist_rear,
                                              double gravity = 9.81)
{
  const double w = mass * gravity / (dist_front + dist_rear);
  return {w * dist_rear, w * dist_front};
}

[[nodiscard]] inline NormalLoads normal_loads(const VehicleParams& vp)
{
  return normal_loads(vp.mass, vp.dist_front, vp.dist_rear, vp.gravity);
}

/**
 * Compact-car parameters used throughout the examples and tests: 1231 kg, 2034.5 kg m^2,
 * a = 1.07 m, b = 1.40 m, C_f = 100 kN/rad, C_r = 130 kN/rad, mu = 1, R_mu = 0.8,
 * with 20% / 10% / 10% relative uncertainty on (C, R_mu, mu).
 */
[[nodiscard]] inline VehicleParams reference_vehicle()
{
  VehicleParams vp;
  vp.mass = 1231.0;
  vp.yaw_inertia = 2034.5;
  vp.dist_front = 1.07;
  vp.dist_rear = 1.40;
  const auto loads = normal_loads(vp);
  vp.front = TireUncertaintySet{TireParams{100000.0, 0.8, 1.0, loads.front}, {0.2, 0.1, 0.1}};
  vp.rear = TireUncertaintySet{TireParams{130000.0, 0.8, 1.0, loads.rear}, {0.2, 0.1, 0.1}};
  return vp;
}

inline void require_positive_speed(double v_x)
{
  if (!(v_x > 0.0)) { throw std::invalid_argument("longitudinal speed must be positive"); }
}

struct LinearBicycle
{
  Mat2 A;
  Vec2 B;
};

/// Linear-tire bicycle, state (v_y, r), input road-wheel angle, nominal stiffnesses.
[[nodiscard]] inline LinearBicycle linear_bicycle(const VehicleParams& vp, double v_x)
{
  require_positive_speed(v_x);
  const double cf = vp.front.nominal.cornering_stiffness;
  const double cr = vp.rear.nominal.cornering_stiffness;
  const double m = vp.mass;
  const double iz = vp.yaw_inertia;
  const double a = vp.dist_front;
  const double b = vp.dist_rear;
  LinearBicycle out;
  out.A << -(cf + cr) / (m * v_x), -(a * cf - b * cr) / (m * v_x) - v_x,
           -(a * cf - b * cr) / (iz * v_x), -(a * a * cf + b * b * cr) / (iz * v_x);
  out.B << cf / m, a * cf / iz;
  return out;
}

struct AfiModel
{
  Mat2 A;
  Vec2 B;
  Vec2 c;
};

/**
 * Affine-force-input bicycle: front lateral force as input, rear force linearized
 * about alpha_r_hat using the mean envelope force and stiffness.
 *
 * The (r, v_y) entry is +b C / (I_z v_x): the rear force enters the yaw equation with
 * a minus sign and the rear slip with a minus sign on v_y, so both cancel.
 */
[[nodiscard]] inline AfiModel afi_matrices(const VehicleParams& vp, const ForceEnvelope& env_r,
                                           double v_x, double alpha_r_hat)
{
  require_positive_speed(v_x);
  const double m = vp.mass;
  const double iz = vp.yaw_inertia;
  const double a = vp.dist_front;
  const double b = vp.dist_rear;
  const double c_bar = env_r.mean_stiffness(alpha_r_hat);
  const double f_bar = env_r.mean_force(alpha_r_hat);
  AfiModel out;
  out.A << -c_bar / (m * v_x), b * c_bar / (m * v_x) - v_x,
           b * c_bar / (iz * v_x), -b * b * c_bar / (iz * v_x);
  out.B << 1.0 / m, a / iz;
  const double offset = f_bar + c_bar * alpha_r_hat;
  out.c << offset / m, -b * offset / iz;
  return out;
}

struct UncertainAfi
{
  Mat2 H;      ///< columns: rear-force channel, front-force channel
  Mat32 E_a;   ///< acts on (v_y, r)
  Vec3 E_b;    ///< acts on the front-force input
  Vec3 E_c;    ///< acts on the affine unit state
};

/// Relative front-force deviation dF/|F_bar|, with the small-slip limit dC(0)/C_bar(0).
[[nodiscard]] inline double relative_front_deviation(const ForceEnvelope& env_f, double alpha_f_hat)
{
  const double f = env_f.mean_force(alpha_f_hat);
  const double limit = env_f.stiffness_deviation(0.0) / env_f.mean_stiffness(0.0);
  if (std::abs(f) < 1e-9 * env_f.mean_stiffness(0.0) * std::max(env_f.max_slip(), 1e-3) ||
      std::abs(alpha_f_hat) < 1e-12) {
    return limit;
  }
  return env_f.force_deviation(alpha_f_hat) / std::abs(f);
}

/// Front slip in the monotone region with the largest relative force deviation.
[[nodiscard]] inline double worst_front_linearization_slip(const ForceEnvelope& env_f)
{
  double best_alpha = 0.0;
  double best = relative_front_deviation(env_f, 0.0);
  const double peak = env_f.peak_slip();
  for (double a : env_f.grid()) {
    if (a <= 0.0 || a > peak) { continue; }
    const double r = relative_front_deviation(env_f, a);
    if (r > best) {
      best = r;
      best_alpha = a;
    }
  }
  return best_alpha;
}

/**
 * Norm-bounded uncertainty blocks of the AFI model. Disturbance
 * w = Delta (E_a x + E_b u + E_c), Delta = [[g1, g2, 0], [0, 0, g3]].
 * E_b holds the relative front deviation so that E_b u is a force.
 */
[[nodiscard]] inline UncertainAfi uncertain_afi(const VehicleParams& vp, const ForceEnvelope& env_f,
                                                const ForceEnvelope& env_r, double v_x,
                                                double alpha_r_hat, double alpha_f_hat)
{
  require_positive_speed(v_x);
  const double m = vp.mass;
  const double iz = vp.yaw_inertia;
  const double a = vp.dist_front;
  const double b = vp.dist_rear;
  const double dc = env_r.stiffness_deviation(alpha_r_hat);
  const double df = env_r.force_deviation(alpha_r_hat);
  UncertainAfi out;
  out.H << 1.0 / m, 1.0 / m,
           -b / iz, a / iz;
  out.E_a << -dc / v_x, b * dc / v_x,
             0.0, 0.0,
             0.0, 0.0;
  out.E_b << 0.0, 0.0, relative_front_deviation(env_f, alpha_f_hat);
  out.E_c << dc * alpha_r_hat, df, 0.0;
  return out;
}

/// Operating point of a discretized model.
struct LinearizationPoint
{
  double v_x{};
  double alpha_r_hat{};
  double alpha_f_hat{};
};

/**
 * Discrete uncertain system x+ = F x + G u + H w, w = Delta (E_a x + E_b u), ||Delta|| <= 1,
 * with compile-time state/disturbance/output sizes and a scalar input.
 */
template <int NX, int NW, int NZ>
struct UncertainDiscreteSystem
{
  Eigen::Matrix<double, NX, NX> F;
  Eigen::Matrix<double, NX, 1> G;
  Eigen::Matrix<double, NX, NW> H;
  Eigen::Matrix<double, NZ, NX> E_a;
  Eigen::Matrix<double, NZ, 1> E_b;
};

/**
 * Six-state driver-reference plus AFI plant system,
 * x = [v_y_ref, r_ref, delta_ref, v_y, r, 1], u = F_yf.
 */
struct UncertainAffineSystem
{
  Mat6 Abar;
  Vec6 B;
  Mat62 H;
  Mat36 E_a;
  Vec3 E_b;
  Mat6 F;
  Vec6 G;
  Mat62 Hd;
  double sampling_time{};
  LinearizationPoint lin{};

  [[nodiscard]] UncertainDiscreteSystem<6, 2, 3> discrete() const { return {F, G, Hd, E_a, E_b}; }
};

template <int NX, int NW>
struct Discretization
{
  Eigen::Matrix<double, NX, NX> F;
  Eigen::Matrix<double, NX, 1> G;
  Eigen::Matrix<double, NX, NW> H;
};

/// Exact sampling of x' = A x + B u + H w with u, w held over each period.
template <int NX, int NW>
[[nodiscard]] Discretization<NX, NW> discretize(const Eigen::Matrix<double, NX, NX>& A,
                                                const Eigen::Matrix<double, NX, 1>& B,
                                                const Eigen::Matrix<double, NX, NW>& H, double Ts)
{
  if (!(Ts > 0.0)) { throw std::invalid_argument("discretize: sampling time must be positive"); }
  constexpr int NB = NX + 1 + NW;
  Eigen::Matrix<double, NB, NB> block = Eigen::Matrix<double, NB, NB>::Zero();
  block.template topLeftCorner<NX, NX>() = A;
  block.template block<NX, 1>(0, NX) = B;
  block.template block<NX, NW>(0, NX + 1) = H;
  const Eigen::Matrix<double, NB, NB> e = expm((Ts * block).eval());
  Discretization<NX, NW> out;
  out.F = e.template topLeftCorner<NX, NX>();
  out.G = e.template block<NX, 1>(0, NX);
  out.H = e.template block<NX, NW>(0, NX + 1);
  return out;
}

/**
 * Assembles the augmented system and samples it. The rows of delta_ref and of the
 * unit state are zero in continuous time so both stay constant across a sample.
 */
[[nodiscard]] inline UncertainAffineSystem augmented_system(const VehicleParams& vp,
                                                            const ForceEnvelope& env_f,
                                                            const ForceEnvelope& env_r, double v_x,
                                                            double alpha_r_hat, double alpha_f_hat,
                                                            double Ts)
{
  if (!(Ts > 0.0)) { throw std::invalid_argument("augmented_system: sampling time must be positive"); }
  const auto lin = linear_bicycle(vp, v_x);
  const auto afi = afi_matrices(vp, env_r, v_x, alpha_r_hat);
  const auto unc = uncertain_afi(vp, env_f, env_r, v_x, alpha_r_hat, alpha_f_hat);

  UncertainAffineSystem sys;
  sys.Abar.setZero();
  sys.Abar.block<2, 2>(0, 0) = lin.A;
  sys.Abar.block<2, 1>(0, 2) = lin.B;
  sys.Abar.block<2, 2>(3, 3) = afi.A;
  sys.Abar.block<2, 1>(3, 5) = afi.c;
  sys.B.setZero();
  sys.B.segment<2>(3) = afi.B;
  sys.H.setZero();
  sys.H.block<2, 2>(3, 0) = unc.H;
  sys.E_a.setZero();
  sys.E_a.block<3, 2>(0, 3) = unc.E_a;
  sys.E_a.col(5) = unc.E_c;
  sys.E_b = unc.E_b;

  const auto d = discretize<6, 2>(sys.Abar, sys.B, sys.H, Ts);
  sys.F = d.F;
  sys.G = d.G;
  sys.Hd = d.H;
  // Constant rows are exact identities of the exponential; pin them against round-off.
  sys.F.row(2) = Row6::Unit(2);
  sys.F.row(5) = Row6::Unit(5);
  sys.G(2) = sys.G(5) = 0.0;
  sys.Hd.row(2).setZero();
  sys.Hd.row(5).setZero();
  sys.sampling_time = Ts;
  sys.lin = {v_x, alpha_r_hat, alpha_f_hat};
  return sys;
}

}  // namespace gcmpc
