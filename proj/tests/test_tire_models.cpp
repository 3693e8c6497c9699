#include "gcmpc/oracles.hpp"
#include "gcmpc/tire_models.hpp"
#include "gcmpc/vehicle_models.hpp"
#include "gcmpc/verify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace gcmpc;

namespace {

TireParams rear_tire() { return reference_vehicle().rear.nominal; }

TireUncertaintySet random_set(std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> b(0.0, 0.3), R(0.3, 1.1);
  auto nominal = verify::random_tire(rng);
  nominal.friction_ratio = R(rng);  // keeps every vertex below R_mu = 1.5
  return {nominal, {b(rng), b(rng), b(rng)}};
}

}  // namespace

TEST(LinearTire, Examples)
{
  EXPECT_EQ(linear_force(100000.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(linear_force(100000.0, 0.01), -1000.0);
  EXPECT_DOUBLE_EQ(linear_force(100000.0, -0.01), 1000.0);
}

TEST(Fiala, ZeroSlipGivesZeroForce)
{
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) { EXPECT_EQ(fiala_force(verify::random_tire(rng), 0.0), 0.0); }
}

TEST(Fiala, SaturationBoundaryValue)
{
  const auto p = rear_tire();
  const double mu_fz = p.friction * p.normal_force;
  const double a_sl = std::atan(3.0 * mu_fz / p.cornering_stiffness);
  EXPECT_NEAR(fiala_force(p, a_sl), -p.friction_ratio * mu_fz, 1e-9 * mu_fz);
  EXPECT_NEAR(fiala_force(p, std::nextafter(a_sl, 1.0)), -p.friction_ratio * mu_fz, 1e-12 * mu_fz);
}

TEST(Fiala, QAndPeakSlipOfRearTire)
{
  const auto p = rear_tire();
  const auto pk = peak_characteristics(p);
  EXPECT_NEAR(pk.q, 15.0 / 7.0, 1e-15);
  EXPECT_NEAR(p.normal_force, 5231.35, 0.01);
  EXPECT_NEAR(pk.peak_slip, std::atan(15.0 / 7.0 * p.normal_force / p.cornering_stiffness), 1e-15);
  EXPECT_NEAR(pk.peak_slip, 0.0860, 2e-4);
}

TEST(Fiala, RearPeakForceMatchesNumericMaximum)
{
  const auto p = rear_tire();
  const auto pk = peak_characteristics(p);
  const auto scan = oracle::fiala_argmax(p, 1e-5);
  EXPECT_NEAR(scan.alpha, pk.peak_slip, 1e-5);
  const double refined = verify::refine_peak_force(p, scan.alpha - 1e-5, scan.alpha + 1e-5);
  EXPECT_NEAR(refined, pk.peak_force, 1e-9 * std::abs(pk.peak_force));
  EXPECT_NEAR(fiala_force(p, pk.peak_slip), pk.peak_force, 1e-9 * std::abs(pk.peak_force));
}

TEST(Fiala, PeakSlipIncreasesWithFrictionRatio)
{
  auto p = rear_tire();
  double last = 0.0;
  for (double r = 0.3; r < 1.0; r += 0.05) {
    p.friction_ratio = r;
    const double a = peak_characteristics(p).peak_slip;
    EXPECT_GT(a, last);
    last = a;
  }
}

TEST(Fiala, FrictionRatioAtOrAboveOnePointFiveIsRejected)
{
  auto p = rear_tire();
  p.friction_ratio = 1.6;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  EXPECT_THROW((void)peak_characteristics(p), std::invalid_argument);
}

TEST(Fiala, RandomFidelityProperties)
{
  const auto r = check_tire_fidelity(1000, 11);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Fiala, OddSymmetry)
{
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> a(-0.5, 0.5);
  for (int i = 0; i < 1000; ++i) {
    const auto p = verify::random_tire(rng);
    const double x = a(rng);
    EXPECT_EQ(fiala_force(p, -x), -fiala_force(p, x));
    EXPECT_EQ(fiala_stiffness(p, -x), fiala_stiffness(p, x));
  }
}

TEST(Fiala, SlopeAtOriginIsMinusStiffness)
{
  // The curvature term k1 |f| f biases a central difference by k1 C h relative, so the
  // reference tires use h = 1e-7 and random tires (small mu F_z) use h = 1e-9.
  for (const auto& p : {reference_vehicle().front.nominal, reference_vehicle().rear.nominal}) {
    const double h = 1e-7;
    const double fd = (fiala_force(p, h) - fiala_force(p, -h)) / (2.0 * h);
    EXPECT_NEAR(fd, -p.cornering_stiffness, 1e-6 * p.cornering_stiffness);
  }
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto p = verify::random_tire(rng);
    const double h = 1e-9;
    const double fd = (fiala_force(p, h) - fiala_force(p, -h)) / (2.0 * h);
    EXPECT_NEAR(fd, -p.cornering_stiffness, 1e-6 * p.cornering_stiffness);
    EXPECT_EQ(fiala_stiffness(p, 0.0), p.cornering_stiffness);
  }
}

TEST(Fiala, StiffnessMatchesDerivative)
{
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto p = verify::random_tire(rng);
    const double a = 0.9 * saturation_slip(p) * (i + 0.5) / 200.0;
    const double h = 1e-7;
    const double fd = -(fiala_force(p, a + h) - fiala_force(p, a - h)) / (2.0 * h);
    EXPECT_NEAR(fiala_stiffness(p, a), fd, 1e-5 * p.cornering_stiffness);
  }
}

TEST(Envelope, ZeroBoundsCollapse)
{
  auto set = reference_vehicle().front;
  set.rel_bounds = {0.0, 0.0, 0.0};
  const auto env = force_envelope(set);
  for (double a : env.grid()) {
    EXPECT_EQ(env.lower_force(a), env.upper_force(a));
    EXPECT_EQ(env.mean_force(a), env.upper_force(a));
    EXPECT_EQ(env.force_deviation(a), 0.0);
    EXPECT_EQ(env.mean_force(a), fiala_force(set.nominal, a));
  }
}

TEST(Envelope, ZeroAtOrigin)
{
  const auto env = force_envelope(reference_vehicle().rear);
  EXPECT_EQ(env.mean_force(0.0), 0.0);
  EXPECT_EQ(env.force_deviation(0.0), 0.0);
}

TEST(Envelope, StrictBandAtFivePercentSlip)
{
  const auto env = force_envelope(reference_vehicle().rear);
  EXPECT_LT(env.lower_force(0.05), env.upper_force(0.05));
  const auto v = reference_vehicle().rear.vertices();
  double lo = 1e300, hi = -1e300;
  for (const auto& p : v) {
    lo = std::min(lo, fiala_force(p, 0.05));
    hi = std::max(hi, fiala_force(p, 0.05));
  }
  EXPECT_NEAR(env.lower_force(0.05), lo, 1e-6 * std::abs(lo));
  EXPECT_NEAR(env.upper_force(0.05), hi, 1e-6 * std::abs(hi));
}

TEST(Envelope, OrderingAndVertexRealization)
{
  std::mt19937_64 rng(4);
  for (int s = 0; s < 30; ++s) {
    const auto set = random_set(rng);
    const auto env = force_envelope(set, symmetric_grid(0.25, 201));
    for (double a : env.grid()) {
      EXPECT_LE(env.lower_force(a), env.mean_force(a));
      EXPECT_LE(env.mean_force(a), env.upper_force(a));
      for (const auto& v : set.vertices()) {
        EXPECT_LE(std::abs(fiala_force(v, a) - env.mean_force(a)), env.force_deviation(a) + 1e-9);
      }
    }
  }
}

namespace {

/// Largest amount by which a 5^3 interior sample of the box leaves the vertex band at `a`.
double interior_excess(const TireUncertaintySet& set, const ForceEnvelope& env, double a)
{
  const double s[] = {-1.0, -0.5, 0.0, 0.5, 1.0};
  double worst = -std::numeric_limits<double>::infinity();
  for (double sc : s) {
    for (double sr : s) {
      for (double sm : s) {
        const double f = fiala_force(set.at(sc, sr, sm), a);
        worst = std::max({worst, f - env.upper_force(a), env.lower_force(a) - f});
      }
    }
  }
  return worst;
}

}  // namespace

TEST(Envelope, VerticesBoundInteriorSampleUpToPeak)
{
  for (const auto& set : {reference_vehicle().rear, reference_vehicle().front}) {
    const auto env = force_envelope(set, symmetric_grid(0.25, 401));
    for (double a : env.grid()) {
      if (std::abs(a) > env.peak_slip()) { continue; }
      EXPECT_LE(interior_excess(set, env, a), 1e-9 * std::abs(env.peak_force())) << "alpha " << a;
    }
  }
}

// Past the peak the force is not monotone in the cornering stiffness, so interior
// points can leave the vertex band. The gap stays small and outside the rear-slip bound.
TEST(Envelope, VertexBandGapPastPeakIsSmall)
{
  const auto set = reference_vehicle().rear;
  const auto env = force_envelope(set, symmetric_grid(0.25, 401));
  double gap = 0.0;
  for (double a : env.grid()) { gap = std::max(gap, interior_excess(set, env, a)); }
  EXPECT_GT(gap, 0.0);
  EXPECT_LT(gap, 0.01 * std::abs(env.peak_force()));
}

TEST(Envelope, StiffnessBoundsFromVertexDerivatives)
{
  const auto set = reference_vehicle().rear;
  const auto env = force_envelope(set);
  const auto g = env.grid();
  for (size_t i = g.size() / 2; i < g.size(); i += 37) {
    const double a = g[i];
    double lo = 1e300, hi = -1e300;
    for (const auto& v : set.vertices()) {
      lo = std::min(lo, fiala_stiffness(v, a));
      hi = std::max(hi, fiala_stiffness(v, a));
    }
    EXPECT_NEAR(env.mean_stiffness(a), 0.5 * (lo + hi), 1e-9 * set.nominal.cornering_stiffness);
    EXPECT_NEAR(env.stiffness_deviation(a), 0.5 * (hi - lo), 1e-9 * set.nominal.cornering_stiffness);
    EXPECT_GE(env.stiffness_deviation(a), 0.0);
  }
}

TEST(Envelope, MeanCurveOddSymmetry)
{
  const auto env = force_envelope(reference_vehicle().front);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> a(-0.3, 0.3);
  for (int i = 0; i < 500; ++i) {
    const double x = a(rng);
    EXPECT_EQ(env.mean_force(-x), -env.mean_force(x));
    EXPECT_EQ(env.force_deviation(-x), env.force_deviation(x));
  }
}

TEST(Envelope, EarliestPeakIsVertexMinimumAndBelowMeanPeak)
{
  const auto set = reference_vehicle().rear;
  const auto env = force_envelope(set);
  double m = 1e300;
  for (const auto& v : set.vertices()) { m = std::min(m, peak_characteristics(v).peak_slip); }
  EXPECT_EQ(env.earliest_peak_slip(), m);
  EXPECT_LT(env.earliest_peak_slip(), env.peak_slip());
  const double s[] = {-1.0, -0.6, -0.2, 0.2, 0.6, 1.0};
  for (double sc : s) {
    for (double sr : s) {
      for (double sm : s) { EXPECT_GE(peak_characteristics(set.at(sc, sr, sm)).peak_slip, m - 1e-15); }
    }
  }
}

TEST(InverseMeanForce, Examples)
{
  const auto env = force_envelope(reference_vehicle().front);
  EXPECT_NEAR(inverse_mean_force(env, 0.0).alpha, 0.0, 1e-12);
  const double small = 10.0;
  const double expected = -small / env.mean_stiffness(0.0);
  EXPECT_NEAR(inverse_mean_force(env, small).alpha, expected, 2e-3 * std::abs(expected));
  EXPECT_NEAR(inverse_mean_force(env, env.mean_force(0.05)).alpha, 0.05, 1e-9);
}

TEST(InverseMeanForce, OddSymmetryAndClamp)
{
  const auto env = force_envelope(reference_vehicle().front);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> f(-5000.0, 5000.0);
  for (int i = 0; i < 200; ++i) {
    const double x = f(rng);
    EXPECT_NEAR(inverse_mean_force(env, -x).alpha, -inverse_mean_force(env, x).alpha, 1e-11);
  }
  const auto c = inverse_mean_force(env, 1e5);
  EXPECT_TRUE(c.clamped);
  EXPECT_EQ(c.alpha, -env.peak_slip());
}
