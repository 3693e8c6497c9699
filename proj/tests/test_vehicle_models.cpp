#include "gcmpc/oracles.hpp"
#include "gcmpc/vehicle_models.hpp"
#include "gcmpc/verify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace gcmpc;

namespace {

VehicleParams certain_vehicle()
{
  auto vp = reference_vehicle();
  vp.front.rel_bounds = {0.0, 0.0, 0.0};
  vp.rear.rel_bounds = {0.0, 0.0, 0.0};
  return vp;
}

/// Grid point of the default envelope closest to alpha, so envelope values are exact vertex extrema.
double on_grid(const ForceEnvelope& env, double alpha)
{
  double best = 0.0;
  for (double a : env.grid()) {
    if (std::abs(a - alpha) < std::abs(best - alpha)) { best = a; }
  }
  return best;
}

}  // namespace

TEST(NormalLoads, ReferenceVehicle)
{
  const auto l = normal_loads(reference_vehicle());
  EXPECT_NEAR(l.front, 1231.0 * 9.81 * 1.40 / 2.47, 1e-9);
  EXPECT_NEAR(l.front, 6844.76, 0.01);
  EXPECT_NEAR(l.rear, 5231.35, 0.01);
  EXPECT_NEAR(l.front + l.rear, 1231.0 * 9.81, 1e-9);
}

TEST(NormalLoads, EqualDistancesSplitEvenly)
{
  const auto l = normal_loads(1000.0, 1.2, 1.2, 9.81);
  EXPECT_DOUBLE_EQ(l.front, 1000.0 * 9.81 / 2.0);
  EXPECT_DOUBLE_EQ(l.rear, l.front);
}

TEST(LinearBicycle, ReferenceEntries)
{
  const auto vp = reference_vehicle();
  const auto m = linear_bicycle(vp, 10.0);
  EXPECT_NEAR(m.A(0, 0), -230000.0 / 12310.0, 1e-12);
  EXPECT_NEAR(m.A(0, 0), -18.684, 1e-3);
  EXPECT_NEAR(m.B(0), 100000.0 / 1231.0, 1e-12);
  EXPECT_NEAR(m.B(0), 81.24, 1e-2);
  EXPECT_NEAR(m.B(1), 1.07 * 100000.0 / 2034.5, 1e-12);
  EXPECT_NEAR(m.B(1), 52.59, 1e-2);
  EXPECT_NEAR(m.A(0, 1) + 10.0, -(1.07 * 100000.0 - 1.40 * 130000.0) / (1231.0 * 10.0), 1e-12);
}

TEST(LinearBicycle, RejectsNonPositiveSpeed)
{
  EXPECT_THROW((void)linear_bicycle(reference_vehicle(), 0.0), std::invalid_argument);
  EXPECT_THROW((void)linear_bicycle(reference_vehicle(), -3.0), std::invalid_argument);
}

TEST(Afi, ZeroSlipHasNoOffset)
{
  const auto vp = reference_vehicle();
  const auto env_r = force_envelope(vp.rear);
  const auto m = afi_matrices(vp, env_r, 10.0, 0.0);
  EXPECT_EQ(m.c(0), 0.0);
  EXPECT_EQ(m.c(1), 0.0);
  EXPECT_DOUBLE_EQ(m.B(0), 1.0 / 1231.0);
  EXPECT_DOUBLE_EQ(m.B(1), 1.07 / 2034.5);
}

TEST(Afi, HandEvaluationAtFivePercentSlip)
{
  const auto vp = reference_vehicle();
  const auto env_r = force_envelope(vp.rear);
  const double ar = 0.05;
  const double c = env_r.mean_stiffness(ar);
  const double f = env_r.mean_force(ar);
  const auto m = afi_matrices(vp, env_r, 10.0, ar);
  EXPECT_NEAR(m.A(0, 0), -c / (1231.0 * 10.0), 1e-12);
  EXPECT_NEAR(m.A(0, 1), 1.40 * c / (1231.0 * 10.0) - 10.0, 1e-12);
  EXPECT_NEAR(m.A(1, 0), 1.40 * c / (2034.5 * 10.0), 1e-12);
  EXPECT_NEAR(m.A(1, 1), -1.40 * 1.40 * c / (2034.5 * 10.0), 1e-12);
  EXPECT_NEAR(m.c(0), (f + c * ar) / 1231.0, 1e-12);
  EXPECT_NEAR(m.c(1), -1.40 * (f + c * ar) / 2034.5, 1e-12);
}

TEST(UncertainAfi, ZeroBoundsGiveZeroBlocks)
{
  const auto vp = certain_vehicle();
  const auto ef = force_envelope(vp.front);
  const auto er = force_envelope(vp.rear);
  const auto u = uncertain_afi(vp, ef, er, 10.0, 0.05, 0.02);
  EXPECT_TRUE(u.E_a.isZero(0.0));
  EXPECT_TRUE(u.E_b.isZero(0.0));
  EXPECT_TRUE(u.E_c.isZero(0.0));
}

TEST(UncertainAfi, ReferenceEntries)
{
  const auto vp = reference_vehicle();
  const auto ef = force_envelope(vp.front);
  const auto er = force_envelope(vp.rear);
  const double dc = er.stiffness_deviation(0.05);
  const auto u = uncertain_afi(vp, ef, er, 10.0, 0.05, 0.0);
  EXPECT_NEAR(u.E_a(0, 0), -dc / 10.0, 1e-12);
  EXPECT_NEAR(u.E_a(0, 1), 1.40 * dc / 10.0, 1e-12);
  EXPECT_NEAR(u.E_c(0), dc * 0.05, 1e-12);
  EXPECT_NEAR(u.E_c(1), er.force_deviation(0.05), 1e-12);
  EXPECT_EQ(u.E_c(2), 0.0);
  EXPECT_NEAR(u.E_b(2), ef.stiffness_deviation(0.0) / ef.mean_stiffness(0.0), 1e-15);

  const auto z = uncertain_afi(vp, ef, er, 10.0, 0.0, 0.0);
  EXPECT_EQ(z.E_c(0), 0.0);
}

TEST(UncertainAfi, RelativeFrontDeviationIsContinuousAtZero)
{
  const auto ef = force_envelope(reference_vehicle().front);
  const double limit = relative_front_deviation(ef, 0.0);
  const double near = relative_front_deviation(ef, ef.grid()[ef.grid().size() / 2 + 1]);
  EXPECT_NEAR(near, limit, 1e-3 * limit);
}

TEST(Discretize, NilpotentBlock)
{
  Mat6 A = Mat6::Zero();
  Vec6 B;
  B << 1, 2, 0, -1, 0.5, 0;
  Mat62 H = Mat62::Random();
  const auto d = discretize<6, 2>(A, B, H, 0.02);
  EXPECT_TRUE(d.F.isApprox(Mat6::Identity(), 1e-15));
  EXPECT_LT((d.G - 0.02 * B).norm(), 1e-15);
  EXPECT_LT((d.H - 0.02 * H).norm(), 1e-15);
}

TEST(Discretize, ScalarClosedForm)
{
  for (double a : {-3.0, -0.5, 0.7, 2.0}) {
    const double b = 1.5;
    const double ts = 0.02;
    const auto d = discretize<1, 1>(Eigen::Matrix<double, 1, 1>(a), Eigen::Matrix<double, 1, 1>(b),
                                    Eigen::Matrix<double, 1, 1>(0.0), ts);
    EXPECT_NEAR(d.F(0, 0), std::exp(a * ts), 1e-15);
    EXPECT_NEAR(d.G(0), (std::exp(a * ts) - 1.0) * b / a, 1e-15);
  }
}

TEST(Discretize, RandomStableMatricesMatchIntegration)
{
  const auto r = check_discretization(100, 21);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(AugmentedSystem, ReferenceStepMatchesIntegration)
{
  const auto vp = reference_vehicle();
  const auto ef = force_envelope(vp.front);
  const auto er = force_envelope(vp.rear);
  const auto sys = augmented_system(vp, ef, er, 10.0, 0.0, 0.0, 0.02);
  Eigen::MatrixXd BH(6, 3);
  BH << sys.B, sys.H;
  const auto ref = oracle::sample_by_integration(sys.Abar, BH, 0.02);
  EXPECT_LT((sys.F - ref.F).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((sys.G - ref.G.col(0)).cwiseAbs().maxCoeff(), 1e-9 * sys.G.cwiseAbs().maxCoeff());
  EXPECT_LT((sys.Hd - ref.G.rightCols(2)).cwiseAbs().maxCoeff(), 1e-9 * sys.Hd.cwiseAbs().maxCoeff());
}

TEST(AugmentedSystem, BlockStructure)
{
  const auto vp = reference_vehicle();
  const auto ef = force_envelope(vp.front);
  const auto er = force_envelope(vp.rear);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> v(3.0, 40.0), s(-0.08, 0.08), t(0.005, 0.1);
  for (int i = 0; i < 50; ++i) {
    const auto sys = augmented_system(vp, ef, er, v(rng), s(rng), s(rng), t(rng));
    EXPECT_TRUE(sys.Abar.row(2).isZero(0.0));
    EXPECT_TRUE(sys.Abar.row(5).isZero(0.0));
    EXPECT_EQ(sys.F.row(2), Row6(Row6::Unit(2)));
    EXPECT_EQ(sys.F.row(5), Row6(Row6::Unit(5)));
    EXPECT_TRUE(sys.E_a.leftCols(3).isZero(0.0));
  }
}

TEST(AugmentedSystem, RejectsNonPositiveSamplingTime)
{
  const auto vp = reference_vehicle();
  const auto ef = force_envelope(vp.front);
  const auto er = force_envelope(vp.rear);
  EXPECT_THROW((void)augmented_system(vp, ef, er, 10.0, 0.0, 0.0, 0.0), std::invalid_argument);
}

TEST(Afi, MatchesLinearBicycleWithoutUncertainty)
{
  const auto vp = certain_vehicle();
  const auto er = force_envelope(vp.rear);
  const double vx = 12.0;
  const auto lin = linear_bicycle(vp, vx);
  const auto afi = afi_matrices(vp, er, vx, 0.0);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (int i = 0; i < 100; ++i) {
    const Vec2 x(d(rng), d(rng));
    const double delta = 0.1 * d(rng);
    const double alpha_f = (x(0) + vp.dist_front * x(1)) / vx - delta;
    const double u = -vp.front.nominal.cornering_stiffness * alpha_f;
    const Vec2 f_lin = lin.A * x + lin.B * delta;
    const Vec2 f_afi = afi.A * x + afi.B * u + afi.c;
    EXPECT_LT((f_lin - f_afi).norm(), 1e-9 * (1.0 + f_lin.norm()));
  }
}

TEST(Afi, FirstOrderAgreementWithFialaRear)
{
  // The AFI rear force is the tangent of the Fiala curve at the linearization slip, so the
  // vector-field error must shrink quadratically with the distance from that slip.
  const auto vp = certain_vehicle();
  const auto er = force_envelope(vp.rear);
  const double vx = 10.0;
  const double b = vp.dist_rear;
  for (double target : {0.01, 0.03, 0.05}) {
    const double ar = on_grid(er, target);
    const auto afi = afi_matrices(vp, er, vx, ar);
    auto error = [&](double h) {
      const Vec2 x(vx * (ar + h), 0.0);  // r = 0, so alpha_r = v_y / v_x
      const double fr = fiala_force(vp.rear.nominal, x(0) / vx);
      const Vec2 exact(fr / vp.mass - vx * x(1), -b * fr / vp.yaw_inertia);
      const Vec2 model = afi.A * x + afi.c;
      return (exact - model).norm();
    };
    const double e1 = error(1e-3);
    const double e2 = error(5e-4);
    EXPECT_GT(e1 / e2, 3.5) << "alpha_r_hat " << ar;
    EXPECT_LT(e1 / e2, 4.5) << "alpha_r_hat " << ar;
  }
}

TEST(UncertainAfi, RearVerticesRealizedWithBoundedGammas)
{
  const auto vp = reference_vehicle();
  const auto ef = force_envelope(vp.front);
  const auto er = force_envelope(vp.rear);
  const double vx = 10.0;
  for (double target : {0.0, 0.02, 0.05, 0.07}) {
    const double ar = on_grid(er, target);
    const auto centre = afi_matrices(vp, er, vx, ar);
    const auto unc = uncertain_afi(vp, ef, er, vx, ar, 0.0);
    const double dc = er.stiffness_deviation(ar);
    const double df = er.force_deviation(ar);
    for (const auto& v : vp.rear.vertices()) {
      const double cv = fiala_stiffness(v, ar);
      const double fv = fiala_force(v, ar);
      const double g_c = dc > 0.0 ? (cv - er.mean_stiffness(ar)) / dc : 0.0;
      const double g_f = df > 0.0 ? (fv - er.mean_force(ar)) / df : 0.0;
      EXPECT_LE(std::abs(g_c), 1.0 + 1e-9);
      EXPECT_LE(std::abs(g_f), 1.0 + 1e-9);

      // Vertex model built directly from the vertex tire.
      Mat2 Av;
      Av << -cv / (vp.mass * vx), vp.dist_rear * cv / (vp.mass * vx) - vx,
        vp.dist_rear * cv / (vp.yaw_inertia * vx),
        -vp.dist_rear * vp.dist_rear * cv / (vp.yaw_inertia * vx);
      const double off = fv + cv * ar;
      const Vec2 cvec(off / vp.mass, -vp.dist_rear * off / vp.yaw_inertia);

      // Centred model plus H Delta E with Delta row 1 = (g_c, g_f, 0).
      const Eigen::Matrix<double, 1, 2> w_x = g_c * unc.E_a.row(0);
      const double w_1 = g_c * unc.E_c(0) + g_f * unc.E_c(1);
      const Mat2 A_pert = centre.A + unc.H.col(0) * w_x;
      const Vec2 c_pert = centre.c + unc.H.col(0) * w_1;
      EXPECT_LT((A_pert - Av).cwiseAbs().maxCoeff(), 1e-9 * Av.cwiseAbs().maxCoeff());
      EXPECT_LT((c_pert - cvec).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + cvec.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(UncertainAfi, FrontVerticesRealizedWithBoundedGamma)
{
  const auto vp = reference_vehicle();
  const auto ef = force_envelope(vp.front);
  for (double target : {0.01, 0.03, 0.06}) {
    const double af = on_grid(ef, target);
    const double rel = relative_front_deviation(ef, af);
    const double fbar = ef.mean_force(af);
    for (const auto& v : vp.front.vertices()) {
      // F_v = F_bar (1 + g rel) up to the sign of F_bar.
      const double g = (fiala_force(v, af) - fbar) / (rel * std::abs(fbar));
      EXPECT_LE(std::abs(g), 1.0 + 1e-9);
    }
  }
}
