#pragma once

// Reference computations used to cross-check the library. Each one takes a different
// route from the production code: ODE integration instead of matrix exponentials,
// exhaustive scans instead of closed forms, plain Riccati iteration, an active-set QP.

#include "gcmpc/cone_solver.hpp"
#include "gcmpc/tire_models.hpp"

#include <Eigen/Dense>
#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

namespace gcmpc::oracle {

struct Sampled
{
  Eigen::MatrixXd F;
  Eigen::MatrixXd G;
};

/// Integrates x' = A x + B u over [0, Ts] with u held, one unit input at a time (adaptive RKF78).
inline Sampled sample_by_integration(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double Ts,
                                     double tol = 1e-15)
{
  namespace ode = boost::numeric::odeint;
  using State = std::vector<double>;
  const auto n = A.rows();
  const auto m = B.cols();
  Sampled out{Eigen::MatrixXd(n, n), Eigen::MatrixXd(n, m)};
  auto run = [&](State x, const Eigen::VectorXd& u) {
    auto rhs = [&](const State& s, State& ds, double) {
      const Eigen::Map<const Eigen::VectorXd> xs(s.data(), n);
      Eigen::Map<Eigen::VectorXd> dx(ds.data(), n);
      dx = A * xs + B * u;
    };
    auto stepper = ode::make_controlled(tol, tol, ode::runge_kutta_fehlberg78<State>());
    ode::integrate_adaptive(stepper, rhs, x, 0.0, Ts, Ts / 64.0);
    return Eigen::Map<const Eigen::VectorXd>(x.data(), n).eval();
  };
  for (Eigen::Index j = 0; j < n; ++j) {
    State x0(static_cast<size_t>(n), 0.0);
    x0[static_cast<size_t>(j)] = 1.0;
    out.F.col(j) = run(x0, Eigen::VectorXd::Zero(m));
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    out.G.col(j) = run(State(static_cast<size_t>(n), 0.0), Eigen::VectorXd::Unit(m, j));
  }
  return out;
}

struct Peak
{
  double alpha{};
  double force{};
};

/// Most negative Fiala force on a uniform slip grid over [0, alpha_max]; first index on ties.
inline Peak fiala_argmax(const TireParams& p, double step = 1e-5, double alpha_max = -1.0)
{
  if (alpha_max <= 0.0) {
    alpha_max = std::min(std::numbers::pi / 2 - 1e-6, 1.05 * std::atan(3.0 * p.friction * p.normal_force /
                                                                       p.cornering_stiffness));
  }
  Peak best{0.0, 0.0};
  const long n = static_cast<long>(std::floor(alpha_max / step));
  for (long i = 0; i <= n; ++i) {
    const double a = i * step;
    const double f = fiala_force(p, a);
    if (f < best.force) { best = {a, f}; }
  }
  return best;
}

/// Root of a decreasing function on [lo, hi] by bisection.
template <typename Fn>
double bisect_decreasing(Fn&& f, double target, double lo, double hi, double tol = 1e-13)
{
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

struct RiccatiResult
{
  Eigen::MatrixXd S;
  Eigen::MatrixXd K;
};

/// One textbook Riccati step from S_next: K = (R + G'SG)^{-1} G'SF, S = Q + F'SF - F'SG K.
inline RiccatiResult riccati_step(const Eigen::MatrixXd& F, const Eigen::MatrixXd& G, const Eigen::MatrixXd& Q,
                                  const Eigen::MatrixXd& R, const Eigen::MatrixXd& S_next)
{
  const Eigen::MatrixXd GS = G.transpose() * S_next;
  RiccatiResult r;
  r.K = (R + GS * G).ldlt().solve(GS * F);
  r.S = Q + F.transpose() * S_next * F - F.transpose() * S_next * G * r.K;
  r.S = 0.5 * (r.S + r.S.transpose()).eval();
  return r;
}

/// Gains of the plain recursion iterated from S = Q until K stops changing.
inline RiccatiResult riccati_stationary(const Eigen::MatrixXd& F, const Eigen::MatrixXd& G, const Eigen::MatrixXd& Q,
                                        const Eigen::MatrixXd& R, double tol = 1e-13, int max_iter = 1000000)
{
  RiccatiResult cur{Q, Eigen::MatrixXd::Zero(G.cols(), F.cols())};
  for (int it = 0; it < max_iter; ++it) {
    RiccatiResult next = riccati_step(F, G, Q, R, cur.S);
    const double dK = (next.K - cur.K).cwiseAbs().maxCoeff();
    const double scale = std::max(1.0, next.K.cwiseAbs().maxCoeff());
    cur = std::move(next);
    if (it > 0 && dK <= tol * scale) { break; }
  }
  return cur;
}

enum class QpStatus { Optimal, Infeasible };

struct QpResult
{
  QpStatus status{QpStatus::Infeasible};
  Eigen::VectorXd z;
  double objective{};
  std::vector<int> active;
};

/**
 * Goldfarb-Idnani dual active-set method for min 1/2 z'Pz + q'z s.t. A z <= b with P
 * positive definite. Projections are recomputed from scratch each iteration, which is
 * fine for the small dense instances used in checks.
 */
inline QpResult dual_active_set_qp(const Eigen::MatrixXd& P, const Eigen::VectorXd& q, const Eigen::MatrixXd& A,
                                   const Eigen::VectorXd& b, double tol = 1e-12, int max_iter = 10000)
{
  const auto n = P.rows();
  const auto m = A.rows();
  const Eigen::LLT<Eigen::MatrixXd> chol(P);
  const Eigen::MatrixXd Pinv = chol.solve(Eigen::MatrixXd::Identity(n, n));
  QpResult res;
  Eigen::VectorXd z = -chol.solve(q);
  std::vector<int> act;
  std::vector<double> u;
  // Constraints as n_i' z >= c_i with n_i = -a_i, c_i = -b_i.
  auto slack = [&](int i) { return b(i) - A.row(i).dot(z); };
  const double scale = 1.0 + (m > 0 ? b.cwiseAbs().maxCoeff() : 0.0);
  for (int outer = 0; outer < max_iter; ++outer) {
    int p = -1;
    double worst = -tol * scale;
    for (int i = 0; i < m; ++i) {
      if (std::find(act.begin(), act.end(), i) != act.end()) { continue; }
      const double s = slack(i) / (1.0 + A.row(i).norm());
      if (s < worst) {
        worst = s;
        p = i;
      }
    }
    if (p < 0) {
      res.status = QpStatus::Optimal;
      break;
    }
    const Eigen::VectorXd np = -A.row(p).transpose();
    double up = 0.0;
    bool added = false;
    for (int inner = 0; inner < max_iter && !added; ++inner) {
      const auto k = static_cast<Eigen::Index>(act.size());
      Eigen::MatrixXd N(n, k);
      for (Eigen::Index j = 0; j < k; ++j) { N.col(j) = -A.row(act[j]).transpose(); }
      Eigen::VectorXd zdir = Pinv * np;
      Eigen::VectorXd r = Eigen::VectorXd::Zero(k);
      if (k > 0) {
        const Eigen::MatrixXd PiN = Pinv * N;
        const Eigen::MatrixXd NtPiN = N.transpose() * PiN;
        r = NtPiN.ldlt().solve(PiN.transpose() * np);
        zdir -= PiN * r;
      }
      double t1 = std::numeric_limits<double>::infinity();
      int drop = -1;
      for (Eigen::Index j = 0; j < k; ++j) {
        if (r(j) > tol && u[j] / r(j) < t1) {
          t1 = u[j] / r(j);
          drop = static_cast<int>(j);
        }
      }
      const double zn = zdir.dot(np);
      const double t2 = zdir.norm() > tol * (1.0 + np.norm()) && zn > 0.0
                          ? (A.row(p).dot(z) - b(p)) / zn
                          : std::numeric_limits<double>::infinity();
      if (!std::isfinite(t1) && !std::isfinite(t2)) {
        res.status = QpStatus::Infeasible;
        res.z = z;
        return res;
      }
      const double t = std::min(t1, t2);
      if (std::isfinite(t2)) { z += t * zdir; }
      for (Eigen::Index j = 0; j < k; ++j) { u[j] -= t * r(j); }
      up += t;
      if (t2 <= t1) {
        act.push_back(p);
        u.push_back(up);
        added = true;
      } else {
        act.erase(act.begin() + drop);
        u.erase(u.begin() + drop);
      }
    }
  }
  res.z = z;
  res.objective = 0.5 * z.dot(P * z) + q.dot(z);
  res.active = act;
  return res;
}

/// Objective of a cone program with each link tight, or +inf where a row is violated.
inline double cone_objective_if_feasible(const ConeProgram& p, const Eigen::VectorXd& z, double slack = 0.0)
{
  Eigen::VectorXd t(p.num_links());
  for (int j = 0; j < p.num_links(); ++j) { t(j) = (p.links[j].D * z + p.links[j].d).norm(); }
  const Eigen::VectorXd r = p.inequality_values(z, t);
  if (r.size() > 0 && r.maxCoeff() > slack) { return std::numeric_limits<double>::infinity(); }
  return p.objective(z);
}

struct GridResult
{
  Eigen::VectorXd z;
  double objective{std::numeric_limits<double>::infinity()};
  double spacing{};  ///< final grid spacing
};

/**
 * Exhaustive search on a tensor grid, then repeated zooming onto the best point with
 * the box shrunk by `shrink` each stage.
 */
inline GridResult grid_search(const ConeProgram& p, const Eigen::VectorXd& center, double half_width,
                              int points_per_dim, int stages = 1, double shrink = 0.1)
{
  const int n = p.dimension();
  GridResult best;
  Eigen::VectorXd c = center;
  double hw = half_width;
  for (int stage = 0; stage < stages; ++stage) {
    const double h = 2.0 * hw / (points_per_dim - 1);
    std::vector<int> idx(static_cast<size_t>(n), 0);
    Eigen::VectorXd z(n);
    GridResult stage_best = best;
    for (;;) {
      for (int d = 0; d < n; ++d) { z(d) = c(d) - hw + h * idx[d]; }
      const double f = cone_objective_if_feasible(p, z);
      if (f < stage_best.objective) {
        stage_best.objective = f;
        stage_best.z = z;
      }
      int d = 0;
      while (d < n && ++idx[d] == points_per_dim) { idx[d++] = 0; }
      if (d == n) { break; }
    }
    best = stage_best;
    best.spacing = h;
    if (!std::isfinite(best.objective)) { break; }
    c = best.z;
    hw *= shrink;
  }
  return best;
}

/// Prediction matrices x_k = Phi_k x0 + Gam_k u for x_{k+1} = F x_k + G u_k (scalar input).
struct Prediction
{
  std::vector<Eigen::MatrixXd> Phi;
  std::vector<Eigen::MatrixXd> Gam;
};

inline Prediction predict(const Eigen::MatrixXd& F, const Eigen::MatrixXd& G, int N)
{
  const auto n = F.rows();
  Prediction pr;
  pr.Phi.push_back(Eigen::MatrixXd::Identity(n, n));
  pr.Gam.push_back(Eigen::MatrixXd::Zero(n, N));
  for (int k = 0; k < N; ++k) {
    pr.Phi.push_back(F * pr.Phi.back());
    Eigen::MatrixXd g = F * pr.Gam.back();
    g.col(k) += G.col(0);
    pr.Gam.push_back(g);
  }
  return pr;
}

/// Dense batch LQ: minimizes sum_{k<N} x'Qx + R u^2 + x_N' S_N x_N over the input sequence.
inline Eigen::VectorXd dense_lq_inputs(const Eigen::MatrixXd& F, const Eigen::MatrixXd& G, const Eigen::MatrixXd& Q,
                                       double R, const Eigen::MatrixXd& S_N, int N, const Eigen::VectorXd& x0)
{
  const auto pr = predict(F, G, N);
  Eigen::MatrixXd H = R * Eigen::MatrixXd::Identity(N, N);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(N);
  for (int k = 1; k <= N; ++k) {
    const Eigen::MatrixXd& W = k < N ? Q : S_N;
    H += pr.Gam[k].transpose() * W * pr.Gam[k];
    g += pr.Gam[k].transpose() * W * pr.Phi[k] * x0;
  }
  return H.ldlt().solve(-g);
}

/// One envelope row M x_k + N u_k <= o at prediction step k.
struct MpcRow
{
  int step{};
  Eigen::RowVectorXd M;
  double N{};
  double o{};
};

/// Nominal MPC in input space solved with the dual active-set QP.
inline QpResult nominal_mpc(const Eigen::MatrixXd& F, const Eigen::MatrixXd& G, const Eigen::MatrixXd& Q, double R,
                            const Eigen::MatrixXd& S_N, int N, const Eigen::VectorXd& x0,
                            const std::vector<MpcRow>& rows)
{
  const auto pr = predict(F, G, N);
  Eigen::MatrixXd H = R * Eigen::MatrixXd::Identity(N, N);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(N);
  for (int k = 1; k <= N; ++k) {
    const Eigen::MatrixXd& W = k < N ? Q : S_N;
    H += pr.Gam[k].transpose() * W * pr.Gam[k];
    g += pr.Gam[k].transpose() * W * pr.Phi[k] * x0;
  }
  Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), N);
  Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    A.row(static_cast<Eigen::Index>(i)) = r.M * pr.Gam[r.step];
    if (r.step < N) { A(static_cast<Eigen::Index>(i), r.step) += r.N; }
    b(static_cast<Eigen::Index>(i)) = r.o - r.M.dot(pr.Phi[r.step] * x0);
  }
  // Scale to unit diagonal so the tolerance logic sees O(1) numbers.
  const Eigen::VectorXd d = H.diagonal().cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd Hs = d.asDiagonal() * H * d.asDiagonal();
  QpResult res = dual_active_set_qp(Hs, d.cwiseProduct(g), A * d.asDiagonal(), b);
  res.z = d.cwiseProduct(res.z);
  res.objective = 0.5 * res.z.dot(H * res.z) + g.dot(res.z);
  return res;
}

}  // namespace gcmpc::oracle
