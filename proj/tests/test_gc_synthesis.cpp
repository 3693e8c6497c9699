#include "gcmpc/controller.hpp"
#include "gcmpc/gc_synthesis.hpp"
#include "gcmpc/oracles.hpp"
#include "gcmpc/verify.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <random>

using namespace gcmpc;

namespace {

using Desk = UncertainDiscreteSystem<2, 1, 1>;

Desk certain(Desk s)
{
  s.H.setZero();
  s.E_a.setZero();
  s.E_b.setZero();
  return s;
}

double min_eig(const Mat2& m) { return Eigen::SelfAdjointEigenSolver<Mat2>(m).eigenvalues().minCoeff(); }

struct VehicleCase
{
  UncertainDiscreteSystem<6, 2, 3> sys;
  CostMatrices cost;
  ControllerConfig cfg;
};

VehicleCase vehicle_case(const VehicleParams& vp, double v_x, double alpha_r)
{
  VehicleCase c;
  const auto ef = force_envelope(vp.front);
  const auto er = force_envelope(vp.rear);
  c.sys = augmented_system(vp, ef, er, v_x, alpha_r, worst_front_linearization_slip(ef), c.cfg.sampling_time)
            .discrete();
  c.cost = build_cost(c.cfg);
  return c;
}

}  // namespace

TEST(Synthesis, NoUncertaintyReducesToRiccati)
{
  const auto d = desk_system();
  const auto sys = certain(d.sys);
  const auto g = synthesize(sys, d.Q, d.R, d.horizon);
  const Eigen::MatrixXd R = Eigen::MatrixXd::Constant(1, 1, d.R);
  const auto stat = oracle::riccati_stationary(sys.F, sys.G, d.Q, R);
  EXPECT_LT((g.K_stationary - stat.K).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((g.S.back() - stat.S).cwiseAbs().maxCoeff(), 1e-9 * stat.S.cwiseAbs().maxCoeff());
  Eigen::MatrixXd S = g.S.back();
  for (int k = d.horizon - 1; k >= 0; --k) {
    const auto step = oracle::riccati_step(sys.F, sys.G, d.Q, R, S);
    EXPECT_LT((g.K[k] - step.K).cwiseAbs().maxCoeff(), 1e-9) << "k " << k;
    EXPECT_LT((g.X[k + 1] - g.S[k + 1]).cwiseAbs().maxCoeff(), 1e-12);
    S = step.S;
  }
  EXPECT_LT((g.S[0] - S).cwiseAbs().maxCoeff(), 1e-9 * S.cwiseAbs().maxCoeff());
}

TEST(Synthesis, ZeroUncertaintyVehicleGainsMatchRiccati)
{
  const auto r = check_zero_uncertainty(20, 14);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Synthesis, CostDominatesNominal)
{
  Desk sys;
  sys.F = 0.5 * Mat2::Identity();
  sys.G << 1.0, 0.0;
  sys.H << 0.05, 0.05;
  sys.E_a << 0.1, 0.1;
  sys.E_b << 0.05;
  const Mat2 Q = Mat2::Identity();
  const auto robust = synthesize(sys, Q, 1.0, 10);
  const auto nominal = synthesize(certain(sys), Q, 1.0, 10);
  for (size_t k = 0; k < robust.S.size(); ++k) {
    EXPECT_GE(min_eig(robust.S[k] - nominal.S[k]), -1e-12) << "k " << k;
  }
  EXPECT_GT(robust.S[0].trace(), nominal.S[0].trace());
}

TEST(Synthesis, RecursionQuantitiesWellFormed)
{
  const auto d = desk_system();
  const auto g = synthesize(d.sys, d.Q, d.R, d.horizon);
  EXPECT_GT(g.epsilon, 0.0);
  ASSERT_EQ(g.S.size(), static_cast<size_t>(d.horizon + 1));
  for (const auto& S : g.S) {
    EXPECT_LT((S - S.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(min_eig(S), -1e-12);
  }
  for (double r : g.Rbar) { EXPECT_GT(r, 0.0); }
  // X = (S^-1 - eps H H')^-1 dominates S.
  for (int k = 1; k <= d.horizon; ++k) {
    EXPECT_GE(min_eig(g.X[k] - g.S[k]), -1e-12);
    const Mat2 Xinv = g.S[k].inverse() - g.epsilon * d.sys.H * d.sys.H.transpose();
    EXPECT_LT((g.X[k] * Xinv - Mat2::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(g.Rbar[k - 1],
                d.R + d.sys.E_b.squaredNorm() / g.epsilon + d.sys.G.dot(g.X[k] * d.sys.G), 1e-9);
  }
}

TEST(Synthesis, CostBoundHoldsUnderSampledDisturbances)
{
  const auto r = check_cost_bound(10000, 13);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Synthesis, ChosenEpsilonMinimizesTrace)
{
  const auto d = desk_system();
  const auto g = synthesize(d.sys, d.Q, d.R, d.horizon);
  for (double f : {0.5, 0.8, 1.25, 2.0}) {
    const auto other = gc_recursion(d.sys, d.Q, d.R, g.epsilon * f, d.horizon);
    if (other) { EXPECT_GE(other->S[0].trace(), g.S[0].trace() - 1e-9); }
  }
}

TEST(Synthesis, RejectsInvalidWeights)
{
  const auto d = desk_system();
  EXPECT_THROW((void)synthesize(d.sys, d.Q, 0.0, d.horizon), std::invalid_argument);
  EXPECT_THROW((void)synthesize(d.sys, Mat2(-Mat2::Identity()), d.R, d.horizon), std::invalid_argument);
}

TEST(Synthesis, NoFeasibleEpsilonIsReported)
{
  auto d = desk_system();
  d.sys.H << 50.0, 50.0;
  d.sys.E_a << 50.0, 50.0;
  SynthesisOptions o;
  o.eps_min = 1.0;
  o.eps_max = 10.0;
  o.eps_grid_points = 5;
  EXPECT_THROW((void)synthesize(d.sys, d.Q, d.R, d.horizon, o), SynthesisFailure);
}

TEST(Margins, HandUnrolledTable)
{
  const auto r = check_margin_recursion();
  EXPECT_TRUE(r.pass) << r.detail;
  const auto c = margin_recursion({0.5, 0.25}, 3);
  EXPECT_EQ(c[2][0], 0.5);
  const auto c6 = margin_recursion({0.3, 0.2, 0.1, 0.05, 0.01}, 6);
  for (int i = 0; i + 1 < 6; ++i) { EXPECT_EQ(c6[i + 1][i], 0.3); }
}

TEST(Margins, RejectsShortRho)
{
  EXPECT_THROW((void)margin_recursion({0.5}, 4), std::invalid_argument);
}

TEST(Margins, EmptyHistoryAndSingleStep)
{
  const auto d = desk_system();
  const auto g = synthesize(d.sys, d.Q, d.R, d.horizon);
  const auto mc = margin_coefficients(d.sys, g);
  const Eigen::Matrix<double, 1, 2> M_row(1.0, -0.5);
  const double N_entry = 0.3;
  const std::vector<Vec2> xs{Vec2(0.4, -0.2)};
  const std::vector<double> vs{0.7};
  EXPECT_EQ(robustness_margin(mc, g, d.sys, M_row, N_entry, xs, vs, 0), 0.0);
  const double phi0 = std::abs((d.sys.E_a - d.sys.E_b * g.K[0]).dot(xs[0]) + d.sys.E_b(0) * vs[0]);
  const Eigen::Matrix<double, 1, 2> a = M_row - N_entry * g.K[1];
  const double expected = (a * d.sys.H).cwiseAbs().sum() * phi0;
  EXPECT_NEAR(robustness_margin(mc, g, d.sys, M_row, N_entry, xs, vs, 1), expected, 1e-14);
  EXPECT_THROW((void)robustness_margin(mc, g, d.sys, M_row, N_entry, xs, vs, 2), std::invalid_argument);
}

TEST(Margins, WeightsReproduceMargin)
{
  const auto d = desk_system();
  const auto g = synthesize(d.sys, d.Q, d.R, d.horizon);
  const auto mc = margin_coefficients(d.sys, g);
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec2> xs;
  std::vector<double> vs;
  for (int j = 0; j < d.horizon; ++j) {
    xs.emplace_back(u(rng), u(rng));
    vs.push_back(u(rng));
  }
  const Eigen::Matrix<double, 1, 2> M_row(0.0, 1.0);
  for (int k = 1; k < d.horizon; ++k) {
    const auto beta = margin_weights(mc, Eigen::Matrix<double, 1, 2>(M_row - 0.2 * g.gain(k)), k);
    double sum = 0.0;
    for (int l = 0; l < k; ++l) { sum += beta[l] * disturbance_bound(mc, d.sys, xs[l], vs[l], l); }
    EXPECT_NEAR(robustness_margin(mc, g, d.sys, M_row, 0.2, xs, vs, k), sum, 1e-12 * (1.0 + sum));
  }
}

TEST(Margins, ScalingUncertaintyNeverShrinksMargins)
{
  // Fixed gains: E scaled by lambda scales every rho, c and margin up.
  const auto d = desk_system();
  const auto g = synthesize(d.sys, d.Q, d.R, d.horizon);
  const auto base = margin_coefficients(d.sys, g);
  std::vector<Vec2> xs(static_cast<size_t>(d.horizon), Vec2(0.3, -0.4));
  std::vector<double> vs(static_cast<size_t>(d.horizon), 0.2);
  const Eigen::Matrix<double, 1, 2> M_row(1.0, 0.5);
  for (double lambda : {1.0, 1.5, 3.0}) {
    auto big = d.sys;
    big.E_a *= lambda;
    big.E_b *= lambda;
    const auto mc = margin_coefficients(big, g);
    for (size_t i = 0; i < mc.rho.size(); ++i) { EXPECT_GE(mc.rho[i], base.rho[i] * (1.0 - 1e-12)); }
    for (size_t k = 0; k < mc.c.size(); ++k) {
      for (size_t i = 0; i < mc.c[k].size(); ++i) { EXPECT_GE(mc.c[k][i], base.c[k][i] * (1.0 - 1e-12)); }
    }
    for (int k = 0; k <= d.horizon; ++k) {
      EXPECT_GE(robustness_margin(mc, g, big, M_row, 0.0, xs, vs, k),
                robustness_margin(base, g, d.sys, M_row, 0.0, xs, vs, k) * (1.0 - 1e-12));
    }
  }
}

TEST(Margins, WiderVehicleUncertaintyRaisesPropagationNorms)
{
  auto narrow = reference_vehicle();
  auto wide = reference_vehicle();
  for (double& b : wide.rear.rel_bounds) { b *= 1.5; }
  for (double& b : wide.front.rel_bounds) { b *= 1.5; }
  const auto a = vehicle_case(narrow, 15.0, 0.0);
  const auto b = vehicle_case(wide, 15.0, 0.0);
  const auto opts = schedule_synthesis_options(a.cfg);
  const auto ga = synthesize(a.sys, a.cost.Q, a.cost.R, a.cfg.horizon, opts);
  const auto gb = synthesize(b.sys, b.cost.Q, b.cost.R, b.cfg.horizon, opts);
  const auto ma = margin_coefficients(a.sys, ga);
  const auto mb = margin_coefficients(b.sys, gb);
  EXPECT_GT(mb.rho[0], ma.rho[0]);
  EXPECT_GE(gb.S[0].trace(), ga.S[0].trace());
}

TEST(Margins, VanishExactlyWithoutUncertainty)
{
  const auto c = vehicle_case(nominal_vehicle(), 20.0, 0.02);
  const auto g = synthesize(c.sys, c.cost.Q, c.cost.R, c.cfg.horizon, schedule_synthesis_options(c.cfg));
  const auto mc = margin_coefficients(c.sys, g);
  for (double r : mc.rho) { EXPECT_EQ(r, 0.0); }
  const auto u = vehicle_case(reference_vehicle(), 20.0, 0.02);
  const auto gu = synthesize(u.sys, u.cost.Q, u.cost.R, u.cfg.horizon, schedule_synthesis_options(u.cfg));
  const auto mu = margin_coefficients(u.sys, gu);
  EXPECT_GT(mu.rho[0], 0.0);
}
