#pragma once

#include "gcmpc/config.hpp"
#include "gcmpc/controller.hpp"
#include "gcmpc/gc_synthesis.hpp"
#include "gcmpc/oracles.hpp"
#include "gcmpc/tire_models.hpp"
#include "gcmpc/vehicle_models.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace gcmpc {

struct CheckResult
{
  std::string name;
  bool pass{};
  std::string detail;
  double seconds{};
};

namespace verify {

inline CheckResult timed(const std::string& name, const std::function<bool(std::ostringstream&)>& body)
{
  CheckResult r;
  r.name = name;
  std::ostringstream detail;
  detail.precision(3);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    r.pass = body(detail);
  } catch (const std::exception& e) {
    r.pass = false;
    detail << "exception: " << e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.detail = detail.str();
  return r;
}

inline TireParams random_tire(std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> C(3e4, 3e5), R(0.3, 1.45), mu(0.3, 1.5), Fz(1e3, 1e4);
  return TireParams{C(rng), R(rng), mu(rng), Fz(rng)};
}

/// Golden-section refinement of the most negative force on [lo, hi].
inline double refine_peak_force(const TireParams& p, double lo, double hi)
{
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::max(lo, 0.0);
  double b = hi;
  double c = b - g * (b - a);
  double d = a + g * (b - a);
  while (b - a > 1e-13) {
    if (fiala_force(p, c) < fiala_force(p, d)) {
      b = d;
    } else {
      a = c;
    }
    c = b - g * (b - a);
    d = a + g * (b - a);
  }
  return std::min({fiala_force(p, 0.5 * (a + b)), fiala_force(p, lo), fiala_force(p, hi)});
}

}  // namespace verify

/**
 * Fiala model on random parameter sets: value at the saturation boundary, slope at the
 * origin, and the closed-form peak against a 1e-5 rad scan.
 */
inline CheckResult check_tire_fidelity(int sets = 1000, std::uint64_t seed = 5)
{
  return verify::timed("tire model fidelity", [&](std::ostringstream& os) {
    std::mt19937_64 rng(seed);
    double worst_cont = 0.0, worst_slope = 0.0, worst_slip = 0.0, worst_force = 0.0;
    for (int s = 0; s < sets; ++s) {
      const TireParams p = verify::random_tire(rng);
      const double mu_fz = p.friction * p.normal_force;
      const double a_sl = std::atan(3.0 * mu_fz / p.cornering_stiffness);
      const double below = std::nextafter(a_sl, 0.0);
      worst_cont = std::max(worst_cont, std::abs(fiala_force(p, below) + p.friction_ratio * mu_fz) / mu_fz);
      // The alpha|alpha| term biases a central difference by C^2 h / (3 q mu F_z); h = 1e-9 keeps it below 1e-6.
      const double h = 1e-9;
      const double slope = (fiala_force(p, h) - fiala_force(p, -h)) / (2.0 * h);
      worst_slope = std::max({worst_slope, std::abs(slope + p.cornering_stiffness) / p.cornering_stiffness,
                              std::abs(fiala_stiffness(p, 0.0) - p.cornering_stiffness) / p.cornering_stiffness});
      const auto pk = peak_characteristics(p);
      const auto scan = oracle::fiala_argmax(p, 1e-5);
      worst_slip = std::max(worst_slip, std::abs(scan.alpha - pk.peak_slip));
      const double numeric = verify::refine_peak_force(p, scan.alpha - 1e-5, scan.alpha + 1e-5);
      worst_force = std::max(worst_force, std::abs(numeric - pk.peak_force) / std::abs(pk.peak_force));
    }
    os << "sets " << sets << ", boundary gap " << worst_cont << " (1e-9), slope error " << worst_slope
       << " (1e-6), peak slip error " << worst_slip << " rad (1e-5), peak force error " << worst_force << " (1e-9)";
    return worst_cont < 1e-9 && worst_slope < 1e-6 && worst_slip <= 1e-5 + 1e-12 && worst_force < 1e-9;
  });
}

/// Block-exponential sampling against adaptive RKF78 integration on random stable systems.
inline CheckResult check_discretization(int systems = 100, std::uint64_t seed = 6, double Ts = 0.02)
{
  return verify::timed("discretization oracle", [&](std::ostringstream& os) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> scale(0.5, 20.0);
    double worst = 0.0;
    for (int s = 0; s < systems; ++s) {
      Mat6 A;
      Vec6 B;
      Mat62 H;
      for (int i = 0; i < 36; ++i) { A(i) = nd(rng); }
      for (int i = 0; i < 6; ++i) { B(i) = nd(rng); }
      for (int i = 0; i < 12; ++i) { H(i) = nd(rng); }
      const double k = scale(rng);
      A *= k / std::max(1.0, spectral_norm(A));
      const double shift = A.eigenvalues().real().maxCoeff();
      A -= (std::max(shift, 0.0) + 0.1) * Mat6::Identity();
      const auto d = discretize<6, 2>(A, B, H, Ts);
      Eigen::MatrixXd BH(6, 3);
      BH << B, H;
      const auto ref = oracle::sample_by_integration(A, BH, Ts);
      worst = std::max({worst, (d.F - ref.F).cwiseAbs().maxCoeff(), (d.G - ref.G.col(0)).cwiseAbs().maxCoeff(),
                        (d.H - ref.G.rightCols(2)).cwiseAbs().maxCoeff()});
    }
    os << "systems " << systems << ", max entry error " << worst << " (1e-9)";
    return worst < 1e-9;
  });
}

/// The scalar and 2-state desk systems used for the Monte-Carlo cost bound.
struct DeskSystem
{
  UncertainDiscreteSystem<2, 1, 1> sys;
  Mat2 Q;
  double R{};
  int horizon{};
};

inline DeskSystem desk_system()
{
  DeskSystem d;
  d.sys.F << 1.0, 0.1, -0.2, 0.95;
  d.sys.G << 0.0, 0.1;
  d.sys.H << 0.05, 0.1;
  d.sys.E_a << 0.5, 0.3;
  d.sys.E_b << 0.4;
  d.Q = Mat2::Identity();
  d.R = 0.5;
  d.horizon = 10;
  return d;
}

/// Realized finite-horizon cost under u_k = -K_k x_k with w_k = gamma_k (E_a x_k + E_b u_k).
template <int NX, int NW, int NZ>
double realized_cost(const UncertainDiscreteSystem<NX, NW, NZ>& sys, const GcGains<NX>& g,
                     const Eigen::Matrix<double, NX, NX>& Q, double R, Eigen::Matrix<double, NX, 1> x,
                     const std::vector<Eigen::Matrix<double, NW, NZ>>& deltas)
{
  double cost = 0.0;
  for (int k = 0; k < g.horizon; ++k) {
    const double u = -g.K[k].dot(x);
    cost += x.dot(Q * x) + R * u * u;
    const Eigen::Matrix<double, NZ, 1> z = sys.E_a * x + sys.E_b * u;
    x = (sys.F * x + sys.G * u + sys.H * (deltas[static_cast<size_t>(k)] * z)).eval();
  }
  return cost + x.dot(g.S.back() * x);
}

/**
 * Guaranteed-cost bound: no admissible disturbance sequence makes the realized cost
 * exceed x0' S_0 x0. Sequences mix uniform draws in [-1, 1] with extreme +-1 ones.
 */
inline CheckResult check_cost_bound(int sequences = 10000, std::uint64_t seed = 3)
{
  return verify::timed("guaranteed-cost bound", [&](std::ostringstream& os) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    double worst_ratio = -std::numeric_limits<double>::infinity();
    double worst_excess = -std::numeric_limits<double>::infinity();
    auto run = [&](const auto& sys, const auto& Q, double R, int N, auto x0) {
      using Sys = std::decay_t<decltype(sys)>;
      const auto g = synthesize(sys, Q, R, N);
      const double bound = x0.dot(g.S[0] * x0);
      constexpr int NW = decltype(Sys::H)::ColsAtCompileTime;
      constexpr int NZ = decltype(Sys::E_a)::RowsAtCompileTime;
      std::vector<Eigen::Matrix<double, NW, NZ>> deltas(static_cast<size_t>(N));
      for (int s = 0; s < sequences; ++s) {
        const bool extreme = s % 2 == 1;
        for (auto& d : deltas) {
          for (int i = 0; i < d.size(); ++i) { d(i) = extreme ? (coin(rng) ? 1.0 : -1.0) : uni(rng); }
          const double n = spectral_norm(d);
          if (n > 1.0) { d /= n; }
        }
        const double c = realized_cost(sys, g, Q, R, x0, deltas);
        worst_ratio = std::max(worst_ratio, c / bound);
        worst_excess = std::max(worst_excess, c - bound);
      }
    };
    const auto d = desk_system();
    run(d.sys, d.Q, d.R, d.horizon, Vec2(1.0, -0.5));
    UncertainDiscreteSystem<1, 1, 1> scalar;
    scalar.F << 0.9;
    scalar.G << 1.0;
    scalar.H << 0.1;
    scalar.E_a << 1.0;
    scalar.E_b << 0.0;
    run(scalar, Eigen::Matrix<double, 1, 1>(Eigen::Matrix<double, 1, 1>::Identity()), 1.0, 10, Eigen::Matrix<double, 1, 1>(1.0));
    os << "sequences " << 2 * sequences << " over two systems, worst cost / bound " << worst_ratio
       << ", worst excess " << worst_excess << " (slack 1e-9)";
    return worst_excess <= 1e-9;
  });
}

/// c(k,i) for rho = (0.5, 0.25, 0.125) over 4 steps, unrolled by hand.
inline CheckResult check_margin_recursion()
{
  return verify::timed("margin recursion", [&](std::ostringstream& os) {
    const double r0 = 0.5, r1 = 0.25, r2 = 0.125;
    const double c10 = r0, c21 = r0, c32 = r0;
    const double c20 = r1 + r0 * c10;
    const double c31 = r1 + r0 * c21;
    const double c30 = r2 + r0 * c20 + r1 * c10;
    const std::vector<std::vector<double>> expect{{}, {c10}, {c20, c21}, {c30, c31, c32}};
    const auto c = margin_recursion({r0, r1, r2}, 4);
    bool exact = c == expect;
    // Zero uncertainty on the vehicle model gives identically zero margins.
    auto vp = reference_vehicle();
    vp.front.rel_bounds = {0.0, 0.0, 0.0};
    vp.rear.rel_bounds = {0.0, 0.0, 0.0};
    const auto ef = force_envelope(vp.front);
    const auto er = force_envelope(vp.rear);
    const auto sys = augmented_system(vp, ef, er, 15.0, 0.03, 0.02, 0.02);
    ControllerConfig cfg;
    const auto cost = build_cost(cfg);
    const auto g = synthesize(sys.discrete(), cost.Q, cost.R, cfg.horizon, schedule_synthesis_options(cfg));
    const auto mc = margin_coefficients(sys.discrete(), g);
    bool zero = true;
    for (double r : mc.rho) { zero = zero && r == 0.0; }
    for (const auto& row : mc.c) {
      for (double v : row) { zero = zero && v == 0.0; }
    }
    std::vector<Vec6> xs(static_cast<size_t>(cfg.horizon), Vec6::Constant(0.3));
    std::vector<double> vs(static_cast<size_t>(cfg.horizon), 100.0);
    for (int k = 0; k <= cfg.horizon; ++k) {
      zero = zero && robustness_margin(mc, g, sys.discrete(), Row6(Row6::Unit(4)), 0.0, xs, vs, k) == 0.0;
    }
    os << "hand table " << (exact ? "matches exactly" : "differs") << ", zero-uncertainty margins "
       << (zero ? "all zero" : "nonzero");
    return exact && zero;
  });
}

/// Reference vehicle with every uncertainty half-width set to zero.
inline VehicleParams nominal_vehicle(VehicleParams vp = reference_vehicle())
{
  vp.front.rel_bounds = {0.0, 0.0, 0.0};
  vp.rear.rel_bounds = {0.0, 0.0, 0.0};
  return vp;
}

/// Oracle rows mirroring the controller's envelope rows (state rows k >= 1, input rows k < N).
inline std::vector<oracle::MpcRow> mpc_rows(const EnvelopeConstraints& c, int N)
{
  std::vector<oracle::MpcRow> rows;
  for (int k = 0; k <= N; ++k) {
    for (int i = 0; i < 6; ++i) {
      const bool input = c.N(i) != 0.0;
      if ((!input && k == 0) || (input && k == N)) { continue; }
      rows.push_back({k, c.M.row(i), c.N(i), c.o(i)});
    }
  }
  return rows;
}

/**
 * Zero uncertainty: synthesized gains equal plain Riccati gains, margins vanish, and
 * the controller's command equals a nominal MPC solved in input space.
 */
inline CheckResult check_zero_uncertainty(int states = 100, std::uint64_t seed = 4)
{
  return verify::timed("zero-uncertainty reduction", [&](std::ostringstream& os) {
    const auto vp = nominal_vehicle();
    TireEnvelopes env{force_envelope(vp.front), force_envelope(vp.rear)};
    ControllerConfig cfg;
    cfg.grid.speeds = {15.0};
    cfg.grid.slips = {0.0};
    auto table = std::make_shared<ScheduledTable>(precompute_table(vp, env, cfg, 1));
    const auto& e = table->at(0, 0);
    const auto cost = build_cost(cfg);
    const int N = cfg.horizon;
    const Eigen::MatrixXd F = e.sys.F, G = e.sys.G, Q = cost.Q;
    const Eigen::MatrixXd R = Eigen::MatrixXd::Constant(1, 1, cost.R);

    // Gains: finite recursion from the same terminal matrix, and the stationary gain.
    double gain_err = 0.0;
    Eigen::MatrixXd S = e.gains.S[static_cast<size_t>(N)];
    for (int k = N - 1; k >= 0; --k) {
      const auto st = oracle::riccati_step(F, G, Q, R, S);
      const Row6 Kk = e.gains.K[static_cast<size_t>(k)];
      gain_err = std::max(gain_err, (st.K - Eigen::MatrixXd(Kk)).cwiseAbs().maxCoeff() /
                                      std::max(1.0, st.K.cwiseAbs().maxCoeff()));
      S = st.S;
    }
    const auto lqr = oracle::riccati_stationary(F, G, Q, R);
    const double kst_err = (lqr.K - Eigen::MatrixXd(e.gains.K_stationary)).cwiseAbs().maxCoeff() /
                           std::max(1.0, lqr.K.cwiseAbs().maxCoeff());
    double margin_max = 0.0;
    for (double r : e.margins.rho) { margin_max = std::max(margin_max, std::abs(r)); }

    GcmpcController ctl(table, vp, env, cfg);
    const auto rows = mpc_rows(e.constraints, N);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> vy(-1.0, 1.0), r(-0.6, 0.6), dref(-0.15, 0.15);
    double cmd_err = 0.0;
    int compared = 0, active = 0;
    for (int s = 0; s < states; ++s) {
      Vec6 x;
      x << vy(rng), r(rng), dref(rng), 0.5 * vy(rng), 0.5 * r(rng), 1.0;
      ctl.reset();
      const auto out = ctl.step(x, 15.0);
      const auto ref = oracle::nominal_mpc(F, G, Q, cost.R, e.gains.S[static_cast<size_t>(N)], N, x, rows);
      if (ref.status != oracle::QpStatus::Optimal || out.diag.fallback) {
        // Both sides must agree that the program is infeasible.
        if (!(ref.status != oracle::QpStatus::Optimal && out.diag.status == "infeasible")) {
          os << "status mismatch at state " << s << " (oracle "
             << (ref.status == oracle::QpStatus::Optimal ? "optimal" : "infeasible") << ", controller "
             << out.diag.status << "); ";
          cmd_err = std::numeric_limits<double>::infinity();
        }
        continue;
      }
      ++compared;
      if (!ref.active.empty()) { ++active; }
      cmd_err = std::max(cmd_err, std::abs(out.F_yf_cmd - ref.z(0)) / std::max(1.0, std::abs(ref.z(0))));
    }
    os << "gain error " << gain_err << ", stationary gain error " << kst_err << " (1e-6), max rho " << margin_max
       << ", command error " << cmd_err << " (1e-6) over " << compared << " states (" << active
       << " with active rows)";
    return gain_err < 1e-6 && kst_err < 1e-6 && margin_max == 0.0 && cmd_err < 1e-6 && compared > 0;
  });
}

namespace verify {

struct RandomProgram
{
  ConeProgram program;
  Eigen::VectorXd feasible;  ///< strictly feasible point used by the generator
};

/// Random strictly convex cone program that is strictly feasible at a known point.
inline RandomProgram random_program(std::mt19937_64& rng, int n, int m, int links, int link_dim)
{
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> pos(0.05, 1.0);
  ConeProgram p;
  Eigen::MatrixXd L(n, n);
  for (int i = 0; i < L.size(); ++i) { L(i) = nd(rng); }
  p.P = L * L.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
  p.q = Eigen::VectorXd(n);
  for (int i = 0; i < n; ++i) { p.q(i) = 3.0 * nd(rng); }
  p.A_in = Eigen::MatrixXd(m, n);
  for (int i = 0; i < p.A_in.size(); ++i) { p.A_in(i) = nd(rng); }
  Eigen::VectorXd z0(n);
  for (int i = 0; i < n; ++i) { z0(i) = 0.3 * nd(rng); }
  p.T_in = Eigen::MatrixXd::Zero(m, links);
  for (int l = 0; l < links; ++l) {
    SocLink lk{Eigen::MatrixXd(link_dim, n), Eigen::VectorXd(link_dim)};
    for (int i = 0; i < lk.D.size(); ++i) { lk.D(i) = 0.5 * nd(rng); }
    for (int i = 0; i < link_dim; ++i) { lk.d(i) = 0.3 * nd(rng); }
    p.links.push_back(lk);
    for (int i = 0; i < m; ++i) {
      if (pos(rng) < 0.6) { p.T_in(i, l) = pos(rng); }
    }
  }
  Eigen::VectorXd t0(links);
  for (int l = 0; l < links; ++l) { t0(l) = (p.links[l].D * z0 + p.links[l].d).norm(); }
  p.b_in = p.A_in * z0 + (links > 0 ? Eigen::VectorXd(p.T_in * t0) : Eigen::VectorXd::Zero(m));
  for (int i = 0; i < m; ++i) { p.b_in(i) += 0.2 * pos(rng); }
  return {p, z0};
}

/// Half-width of a box centred at z_feasible that contains the sublevel set {f <= f(z_feasible)}.
inline double search_radius(const ConeProgram& p, const Eigen::VectorXd& z_feasible)
{
  const Eigen::VectorXd zu = p.P.ldlt().solve(-p.q);
  const double gap = std::max(0.0, p.objective(z_feasible) - p.objective(zu));
  const double lmin = std::max(1e-12, min_eigenvalue(p.P));
  return (zu - z_feasible).lpNorm<Eigen::Infinity>() + std::sqrt(2.0 * gap / lmin) + 1e-3;
}

/**
 * Worst objective excess of the best feasible node of a grid with spacing h over the optimum z_opt.
 * Moving from z_opt towards the strictly feasible z0 by theta opens a feasible ball of radius
 * theta * slack(z0) / L, where L bounds the rows' Lipschitz constants; once that radius reaches
 * the half cell diagonal the ball holds a node.
 */
inline double grid_resolution(const ConeProgram& p, const Eigen::VectorXd& z0, const Eigen::VectorXd& z_opt, double h)
{
  const int n = p.dimension();
  Eigen::VectorXd t0(p.num_links());
  for (int j = 0; j < p.num_links(); ++j) { t0(j) = (p.links[j].D * z0 + p.links[j].d).norm(); }
  const double slack = -p.inequality_values(z0, t0).maxCoeff();
  double lip = 0.0;
  for (int i = 0; i < p.num_inequalities(); ++i) {
    double l = p.A_in.row(i).norm();
    for (int j = 0; j < p.num_links(); ++j) { l += p.T_in(i, j) * spectral_norm(p.links[j].D); }
    lip = std::max(lip, l);
  }
  const double half_diag = 0.5 * h * std::sqrt(n);
  const double theta = std::min(1.0, half_diag * lip / slack);
  const Eigen::VectorXd zt = z_opt + theta * (z0 - z_opt);
  const double pn = spectral_norm(p.P);
  return p.objective(zt) - p.objective(z_opt) + (p.P * zt + p.q).norm() * half_diag +
         0.5 * pn * half_diag * half_diag + 1e-9 * (1.0 + std::abs(p.objective(z_opt)));
}

}  // namespace verify

/**
 * Cone solver against two oracles: a dense grid search on small programs with SOC links,
 * and the dual active-set QP on programs without links. Warm starts must reproduce the
 * cold optimum.
 */
inline CheckResult check_solver(int programs = 100, std::uint64_t seed = 8)
{
  return verify::timed("solver correctness", [&](std::ostringstream& os) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, 1 << 30);
    std::normal_distribution<double> nd(0.0, 1.0);
    double grid_worse = 0.0;      // solver objective above the best grid point
    double grid_excess = 0.0;     // best grid point above the solver, in units of the grid resolution
    double qp_err = 0.0;
    double z_err = 0.0;
    double warm_err = 0.0;
    double viol = 0.0;
    double obj_recompute = 0.0;
    long grid_points = 0;
    int failures = 0;
    for (int s = 0; s < programs; ++s) {
      const bool with_links = s % 2 == 0;
      const int n = with_links ? (s == 0 ? 4 : (s % 4 == 0 ? 3 : 2)) : 2 + pick(rng) % 5;
      const auto gen = with_links
                         ? verify::random_program(rng, n, 2 + pick(rng) % 4, 1 + pick(rng) % 2, 2 + pick(rng) % 2)
                         : verify::random_program(rng, n, 3 + pick(rng) % 8, 0, 1);
      const ConeProgram& p = gen.program;
      const auto res = solve(p);
      if (res.status != SolveStatus::Optimal) {
        os << "program " << s << " " << to_string(res.status) << "; ";
        ++failures;
        continue;
      }
      const double scale = 1.0 + std::abs(res.objective);
      obj_recompute = std::max(obj_recompute, std::abs(p.objective(res.z) - res.objective) / scale);
      viol = std::max(viol, std::max(0.0, p.inequality_values(res.z, res.t).maxCoeff()));
      for (int j = 0; j < p.num_links(); ++j) {
        viol = std::max(viol, (p.links[j].D * res.z + p.links[j].d).norm() - res.t(j));
      }
      Eigen::VectorXd guess(p.dimension());
      for (int i = 0; i < guess.size(); ++i) { guess(i) = res.z(i) + 0.1 * nd(rng); }
      const auto warm = solve(p, guess);
      if (warm.status != SolveStatus::Optimal) {
        ++failures;
        continue;
      }
      warm_err = std::max(warm_err, std::abs(warm.objective - res.objective) / scale);

      if (with_links) {
        // One dense grid centred on the generator's strictly feasible point (odd count: the centre is a node).
        const int pts = n == 4 ? 33 : (n == 3 ? 61 : 501);
        const double radius = verify::search_radius(p, gen.feasible);
        const auto g = oracle::grid_search(p, gen.feasible, radius, pts);
        grid_points += static_cast<long>(std::pow(pts, n));
        if (!std::isfinite(g.objective)) {
          os << "program " << s << ": grid found no feasible node; ";
          ++failures;
          continue;
        }
        grid_worse = std::max(grid_worse, (res.objective - g.objective) / scale);
        grid_excess = std::max(grid_excess, (g.objective - res.objective) / verify::grid_resolution(p, gen.feasible, res.z, g.spacing));
      } else {
        const auto ref = oracle::dual_active_set_qp(p.P, p.q, p.A_in, p.b_in);
        if (ref.status != oracle::QpStatus::Optimal) {
          ++failures;
          continue;
        }
        qp_err = std::max(qp_err, std::abs(ref.objective - res.objective) / scale);
        z_err = std::max(z_err, (ref.z - res.z).lpNorm<Eigen::Infinity>() / (1.0 + ref.z.lpNorm<Eigen::Infinity>()));
      }
    }
    os << "programs " << programs << ", failures " << failures << "; grid (" << grid_points
       << " points): solver above grid by " << grid_worse << " (1e-8), grid above solver "
       << grid_excess << " resolutions (1); QP objective error " << qp_err << " (1e-8), point error " << z_err
       << "; warm/cold objective gap " << warm_err << " (1e-8); max violation " << viol
       << " (1e-8); objective recompute " << obj_recompute << " (1e-8)";
    return failures == 0 && grid_worse <= 1e-8 && grid_excess <= 1.0 && qp_err <= 1e-8 && warm_err <= 1e-8 &&
           viol <= 1e-8 && obj_recompute <= 1e-8;
  });
}

/// Warnings about configurations that contradict the expected envelope behaviour.
inline std::vector<std::string> config_warnings(const ToolConfig& c)
{
  std::vector<std::string> w;
  const auto vp = c.vehicle();
  const double mu = vp.front.nominal.friction;
  const double with_g = max_yaw_rate(vp, mu, 10.0, true);
  const double without_g = max_yaw_rate(vp, mu, 10.0, false);
  if (!c.controller.envelope.yaw_limit_gravity) {
    std::ostringstream os;
    os.precision(3);
    os << "yaw_limit_gravity = false gives r_max = " << without_g << " rad/s at 10 m/s (" << with_g
       << " rad/s with g); this conflicts with the expected envelope activity, where the yaw rate of a "
          "10 deg slalom exceeds it almost immediately";
    w.push_back(os.str());
  }
  return w;
}

/// Runs every property check; prints one line per check and returns the number of failures.
inline int run_verify_suite(const ToolConfig& c, std::ostream& os)
{
  for (const auto& w : config_warnings(c)) { os << "WARN " << w << "\n"; }
  const std::vector<std::function<CheckResult()>> checks{
    [] { return check_tire_fidelity(); },     [] { return check_discretization(); },
    [] { return check_zero_uncertainty(); },  [] { return check_margin_recursion(); },
    [] { return check_cost_bound(); },        [] { return check_solver(); },
  };
  int failures = 0;
  for (const auto& run : checks) {
    const auto r = run();
    os << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " [" << r.seconds << " s]\n";
    failures += r.pass ? 0 : 1;
  }
  return failures;
}

}  // namespace gcmpc
