#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcmpc {

/// Epigraph link t_j >= || D z + d ||_2.
struct SocLink
{
  Eigen::MatrixXd D;
  Eigen::VectorXd d;
};

/**
 * Convex program over z in R^n with epigraph variables t in R^L (one per link):
 *
 *   minimize    1/2 z' P z + q' z
 *   subject to  A_in z + T_in t <= b_in
 *               t_j >= || D_j z + d_j ||_2,   j = 0..L-1
 *
 * T_in must be elementwise non-negative so that the links can be relaxed to
 * equalities at an optimum. T_in may have zero columns when there are no links.
 */
struct ConeProgram
{
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
  Eigen::MatrixXd T_in;
  std::vector<SocLink> links;

  [[nodiscard]] int dimension() const { return static_cast<int>(q.size()); }
  [[nodiscard]] int num_links() const { return static_cast<int>(links.size()); }
  [[nodiscard]] int num_inequalities() const { return static_cast<int>(b_in.size()); }

  void validate() const
  {
    const auto n = q.size();
    const auto m = b_in.size();
    const auto L = static_cast<Eigen::Index>(links.size());
    if (P.rows() != n || P.cols() != n) { throw std::invalid_argument("cone program: P must be n x n"); }
    if (A_in.rows() != m || (m > 0 && A_in.cols() != n)) {
      throw std::invalid_argument("cone program: A_in must be m x n");
    }
    if (L > 0 && (T_in.rows() != m || T_in.cols() != L)) {
      throw std::invalid_argument("cone program: T_in must be m x L");
    }
    if (L > 0 && m > 0 && T_in.minCoeff() < 0.0) {
      throw std::invalid_argument("cone program: epigraph couplings must be non-negative");
    }
    for (const auto& l : links) {
      if (l.D.cols() != n || l.D.rows() != l.d.size() || l.d.size() == 0) {
        throw std::invalid_argument("cone program: link D must be p x n with p = len(d) > 0");
      }
    }
    if (!P.isApprox(P.transpose(), 1e-12)) { throw std::invalid_argument("cone program: P must be symmetric"); }
  }

  /// Rows of A_in z + T_in t - b_in.
  [[nodiscard]] Eigen::VectorXd inequality_values(const Eigen::VectorXd& z, const Eigen::VectorXd& t) const
  {
    Eigen::VectorXd r = A_in * z - b_in;
    if (!links.empty()) { r += T_in * t; }
    return r;
  }

  [[nodiscard]] double objective(const Eigen::VectorXd& z) const { return 0.5 * z.dot(P * z) + q.dot(z); }
};

enum class SolveStatus { Optimal, Infeasible, MaxIter };

inline const char* to_string(SolveStatus s)
{
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::MaxIter: return "max_iter";
  }
  return "unknown";
}

/// Relative KKT residuals, measured on the equilibrated problem.
struct KktResiduals
{
  double stationarity{};
  double primal{};
  double dual{};
  double complementarity{};

  [[nodiscard]] double max() const { return std::max({stationarity, primal, dual, complementarity}); }
};

struct SolveResult
{
  SolveStatus status{SolveStatus::MaxIter};
  Eigen::VectorXd z;
  Eigen::VectorXd t;
  double objective{};
  KktResiduals residuals{};
  int iterations{};
  bool presolved{false};  ///< unconstrained minimizer was feasible
  Eigen::VectorXd inequality_duals;
};

struct SolverSettings
{
  int max_iterations{100};
  double feasibility_tolerance{1e-9};
  double gap_tolerance{1e-9};
  double infeasibility_tolerance{1e-9};
  int ruiz_iterations{15};
  bool presolve_unconstrained{true};
  double stall_tolerance{1e-7};
  std::ostream* log{nullptr};  ///< per-iteration trace when set
};

namespace cone {

/// Cone K = R+^l x Q^{p_1} x ... ; vectors are stored contiguously in that order.
struct Layout
{
  int linear{};
  std::vector<int> soc;  ///< dimensions (including the scalar head)
  std::vector<int> soc_start;

  [[nodiscard]] int size() const
  {
    int s = linear;
    for (int p : soc) { s += p; }
    return s;
  }
  [[nodiscard]] int degree() const { return linear + static_cast<int>(soc.size()); }
};

inline double soc_det(const Eigen::Ref<const Eigen::VectorXd>& u)
{
  return u(0) * u(0) - u.tail(u.size() - 1).squaredNorm();
}

/// Smallest "eigenvalue" of u w.r.t. the cone; negative means outside.
inline double min_eig(const Layout& K, const Eigen::VectorXd& u)
{
  double m = std::numeric_limits<double>::infinity();
  if (K.linear > 0) { m = u.head(K.linear).minCoeff(); }
  for (size_t j = 0; j < K.soc.size(); ++j) {
    const auto blk = u.segment(K.soc_start[j], K.soc[j]);
    m = std::min(m, blk(0) - blk.tail(blk.size() - 1).norm());
  }
  return m;
}

inline void add_identity(const Layout& K, Eigen::VectorXd& u, double alpha)
{
  if (K.linear > 0) { u.head(K.linear).array() += alpha; }
  for (size_t j = 0; j < K.soc.size(); ++j) { u(K.soc_start[j]) += alpha; }
}

inline Eigen::VectorXd identity(const Layout& K)
{
  Eigen::VectorXd e = Eigen::VectorXd::Zero(K.size());
  add_identity(K, e, 1.0);
  return e;
}

/// Jordan product u o v.
inline Eigen::VectorXd product(const Layout& K, const Eigen::VectorXd& u, const Eigen::VectorXd& v)
{
  Eigen::VectorXd w(u.size());
  if (K.linear > 0) { w.head(K.linear) = u.head(K.linear).cwiseProduct(v.head(K.linear)); }
  for (size_t j = 0; j < K.soc.size(); ++j) {
    const int s = K.soc_start[j];
    const int p = K.soc[j];
    const auto uu = u.segment(s, p);
    const auto vv = v.segment(s, p);
    w(s) = uu.dot(vv);
    w.segment(s + 1, p - 1) = uu(0) * vv.tail(p - 1) + vv(0) * uu.tail(p - 1);
  }
  return w;
}

/// Solves lambda o x = w for x.
inline Eigen::VectorXd divide(const Layout& K, const Eigen::VectorXd& lambda, const Eigen::VectorXd& w)
{
  Eigen::VectorXd x(w.size());
  if (K.linear > 0) { x.head(K.linear) = w.head(K.linear).cwiseQuotient(lambda.head(K.linear)); }
  for (size_t j = 0; j < K.soc.size(); ++j) {
    const int s = K.soc_start[j];
    const int p = K.soc[j];
    const auto l = lambda.segment(s, p);
    const auto ww = w.segment(s, p);
    const double det = soc_det(l);
    const double x0 = (l(0) * ww(0) - l.tail(p - 1).dot(ww.tail(p - 1))) / det;
    x(s) = x0;
    x.segment(s + 1, p - 1) = (ww.tail(p - 1) - x0 * l.tail(p - 1)) / l(0);
  }
  return x;
}

/// Largest alpha in [0, inf) keeping u + alpha du in the cone (inf if unbounded).
inline double max_step(const Layout& K, const Eigen::VectorXd& u, const Eigen::VectorXd& du)
{
  double alpha = std::numeric_limits<double>::infinity();
  for (int i = 0; i < K.linear; ++i) {
    if (du(i) < 0.0) { alpha = std::min(alpha, -u(i) / du(i)); }
  }
  for (size_t j = 0; j < K.soc.size(); ++j) {
    const int s = K.soc_start[j];
    const int p = K.soc[j];
    const auto x = u.segment(s, p);
    const auto d = du.segment(s, p);
    const double a = soc_det(d);
    const double b = x(0) * d(0) - x.tail(p - 1).dot(d.tail(p - 1));
    const double c = std::max(soc_det(x), 0.0);
    // Roots of a t^2 + 2 b t + c; the first positive one is where the ray leaves the cone.
    double root = std::numeric_limits<double>::infinity();
    if (std::abs(a) < 1e-300) {
      if (b < 0.0) { root = -c / (2.0 * b); }
    } else {
      const double disc = b * b - a * c;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        const double qq = -(b + (b >= 0.0 ? sq : -sq));
        const double r1 = qq / a;
        const double r2 = qq != 0.0 ? c / qq : std::numeric_limits<double>::infinity();
        for (double r : {r1, r2}) {
          if (r > 0.0) { root = std::min(root, r); }
        }
      }
    }
    // The head must stay non-negative as well.
    if (d(0) < 0.0) { root = std::min(root, -x(0) / d(0)); }
    alpha = std::min(alpha, root);
  }
  return alpha;
}

/// Nesterov-Todd scaling: W z = W^{-1} s = lambda.
struct Scaling
{
  Eigen::VectorXd linear_d;  ///< sqrt(s / z)
  std::vector<double> beta;
  std::vector<Eigen::VectorXd> w;  ///< normalized w-bar per SOC block (det 1)

  static Scaling compute(const Layout& K, const Eigen::VectorXd& s, const Eigen::VectorXd& z)
  {
    Scaling W;
    W.linear_d = (s.head(K.linear).array() / z.head(K.linear).array()).sqrt();
    W.beta.resize(K.soc.size());
    W.w.resize(K.soc.size());
    for (size_t j = 0; j < K.soc.size(); ++j) {
      const int st = K.soc_start[j];
      const int p = K.soc[j];
      const Eigen::VectorXd sb = s.segment(st, p);
      const Eigen::VectorXd zb = z.segment(st, p);
      const double sd = std::sqrt(std::max(soc_det(sb), 1e-300));
      const double zd = std::sqrt(std::max(soc_det(zb), 1e-300));
      const Eigen::VectorXd sn = sb / sd;
      const Eigen::VectorXd zn = zb / zd;
      const double gamma = std::sqrt(std::max(0.5 * (1.0 + sn.dot(zn)), 1e-300));
      Eigen::VectorXd wb(p);
      wb(0) = (sn(0) + zn(0)) / (2.0 * gamma);
      wb.tail(p - 1) = (sn.tail(p - 1) - zn.tail(p - 1)) / (2.0 * gamma);
      W.beta[j] = std::sqrt(sd / zd);
      W.w[j] = wb;
    }
    return W;
  }

  /// Applies W (inverse=false) or W^{-1} (inverse=true) to every column of u.
  void apply(const Layout& K, Eigen::MatrixXd& u, bool inverse) const
  {
    if (K.linear > 0) {
      if (inverse) {
        u.topRows(K.linear).array().colwise() /= linear_d.array();
      } else {
        u.topRows(K.linear).array().colwise() *= linear_d.array();
      }
    }
    for (size_t j = 0; j < K.soc.size(); ++j) {
      const int st = K.soc_start[j];
      const int p = K.soc[j];
      const Eigen::VectorXd& wb = w[j];
      const double w0 = wb(0);
      const auto w1 = wb.tail(p - 1);
      const double scale = inverse ? 1.0 / beta[j] : beta[j];
      const double sgn = inverse ? -1.0 : 1.0;
      for (Eigen::Index c = 0; c < u.cols(); ++c) {
        auto blk = u.col(c).segment(st, p);
        const double u0 = blk(0);
        const double w1u1 = w1.dot(blk.tail(p - 1));
        blk(0) = scale * (w0 * u0 + sgn * w1u1);
        blk.tail(p - 1) = scale * (blk.tail(p - 1) + (sgn * u0 + w1u1 / (1.0 + w0)) * w1);
      }
    }
  }

  [[nodiscard]] Eigen::VectorXd apply(const Layout& K, const Eigen::VectorXd& v, bool inverse) const
  {
    Eigen::MatrixXd m = v;
    apply(K, m, inverse);
    return m.col(0);
  }
};

}  // namespace cone

namespace detail {

struct StandardForm
{
  Eigen::MatrixXd P;  // (n+L) x (n+L)
  Eigen::VectorXd q;
  Eigen::MatrixXd G;  // rows: linear, then one block per link
  Eigen::VectorXd h;
  cone::Layout K;
};

inline StandardForm to_standard_form(const ConeProgram& p)
{
  const int n = p.dimension();
  const int L = p.num_links();
  const int m = p.num_inequalities();
  StandardForm f;
  f.K.linear = m;
  int rows = m;
  for (const auto& l : p.links) {
    f.K.soc_start.push_back(rows);
    f.K.soc.push_back(static_cast<int>(l.d.size()) + 1);
    rows += static_cast<int>(l.d.size()) + 1;
  }
  const int nx = n + L;
  f.P = Eigen::MatrixXd::Zero(nx, nx);
  f.P.topLeftCorner(n, n) = p.P;
  f.q = Eigen::VectorXd::Zero(nx);
  f.q.head(n) = p.q;
  f.G = Eigen::MatrixXd::Zero(rows, nx);
  f.h = Eigen::VectorXd::Zero(rows);
  if (m > 0) {
    f.G.topLeftCorner(m, n) = p.A_in;
    if (L > 0) { f.G.block(0, n, m, L) = p.T_in; }
    f.h.head(m) = p.b_in;
  }
  for (int j = 0; j < L; ++j) {
    const int st = f.K.soc_start[j];
    const int pd = static_cast<int>(p.links[j].d.size());
    f.G(st, n + j) = -1.0;
    f.G.block(st + 1, 0, pd, n) = -p.links[j].D;
    f.h.segment(st + 1, pd) = p.links[j].d;
  }
  return f;
}

inline KktResiduals residuals(const StandardForm& f, const Eigen::VectorXd& x, const Eigen::VectorXd& s,
                              const Eigen::VectorXd& z)
{
  KktResiduals r;
  const Eigen::VectorXd Px = f.P * x;
  const Eigen::VectorXd Gtz = f.G.transpose() * z;
  const Eigen::VectorXd Gx = f.G * x;
  auto nrm = [](const Eigen::VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; };
  r.stationarity = nrm(Px + f.q + Gtz) / (1.0 + std::max({nrm(Px), nrm(f.q), nrm(Gtz)}));
  // Primal: violation of h - G x in the cone.
  const Eigen::VectorXd slack = f.h - Gx;
  const double viol = std::max(0.0, -cone::min_eig(f.K, slack));
  r.primal = (slack.size() ? viol : 0.0) / (1.0 + std::max(nrm(f.h), nrm(Gx)));
  const double zviol = z.size() ? std::max(0.0, -cone::min_eig(f.K, z)) : 0.0;
  r.dual = zviol / (1.0 + nrm(z));
  const double obj = 0.5 * x.dot(Px) + f.q.dot(x);
  r.complementarity = std::abs(s.dot(z)) / (1.0 + std::abs(obj));
  return r;
}

}  // namespace detail

/**
 * Primal-dual interior-point solver for ConeProgram.
 *
 * Infeasible-start path following with Nesterov-Todd scaling and a Mehrotra
 * predictor-corrector, on a Ruiz-equilibrated copy of the problem. Deterministic
 * for identical inputs. A warm start only seeds the primal point.
 */
inline SolveResult solve(const ConeProgram& prog, const std::optional<Eigen::VectorXd>& warm_start = std::nullopt,
                         const SolverSettings& settings = {})
{
  prog.validate();
  const int n = prog.dimension();
  const int L = prog.num_links();

  SolveResult result;

  // Unconstrained minimizer, links tight: optimal whenever feasible.
  if (settings.presolve_unconstrained) {
    Eigen::LLT<Eigen::MatrixXd> llt(prog.P);
    if (llt.info() == Eigen::Success) {
      const Eigen::VectorXd z0 = llt.solve(-prog.q);
      Eigen::VectorXd t0(L);
      for (int j = 0; j < L; ++j) { t0(j) = (prog.links[j].D * z0 + prog.links[j].d).norm(); }
      const Eigen::VectorXd viol = prog.inequality_values(z0, t0);
      if (viol.size() == 0 || viol.maxCoeff() <= 0.0) {
        result.status = SolveStatus::Optimal;
        result.z = z0;
        result.t = t0;
        result.objective = prog.objective(z0);
        result.presolved = true;
        result.inequality_duals = Eigen::VectorXd::Zero(prog.num_inequalities());
        const Eigen::VectorXd g = prog.P * z0 + prog.q;
        result.residuals.stationarity =
          (g.size() ? g.lpNorm<Eigen::Infinity>() : 0.0) /
          (1.0 + std::max((prog.P * z0).lpNorm<Eigen::Infinity>(),
                          prog.q.size() ? prog.q.lpNorm<Eigen::Infinity>() : 0.0));
        return result;
      }
    }
  }

  const detail::StandardForm f = detail::to_standard_form(prog);
  const cone::Layout& K = f.K;
  const int nx = n + L;
  const int rows = K.size();
  const int nu = K.degree();

  // Ruiz equilibration: x = D xs, rows scaled by E (one factor per SOC block).
  Eigen::VectorXd Dv = Eigen::VectorXd::Ones(nx);
  Eigen::VectorXd Ev = Eigen::VectorXd::Ones(rows);
  Eigen::MatrixXd Ps = f.P;
  Eigen::MatrixXd Gs = f.G;
  for (int it = 0; it < settings.ruiz_iterations; ++it) {
    Eigen::VectorXd col(nx);
    for (int j = 0; j < nx; ++j) {
      double c = Ps.col(j).cwiseAbs().maxCoeff();
      if (rows > 0) { c = std::max(c, Gs.col(j).cwiseAbs().maxCoeff()); }
      col(j) = c > 0.0 ? 1.0 / std::sqrt(c) : 1.0;
    }
    Eigen::VectorXd row(rows);
    for (int i = 0; i < K.linear; ++i) {
      const double r = Gs.row(i).cwiseAbs().maxCoeff();
      row(i) = r > 0.0 ? 1.0 / std::sqrt(r) : 1.0;
    }
    for (size_t j = 0; j < K.soc.size(); ++j) {
      const double r = Gs.middleRows(K.soc_start[j], K.soc[j]).cwiseAbs().maxCoeff();
      row.segment(K.soc_start[j], K.soc[j]).setConstant(r > 0.0 ? 1.0 / std::sqrt(r) : 1.0);
    }
    Ps.array().colwise() *= col.array();
    Ps.array().rowwise() *= col.transpose().array();
    Gs.array().colwise() *= row.array();
    Gs.array().rowwise() *= col.transpose().array();
    Dv = Dv.cwiseProduct(col);
    Ev = Ev.cwiseProduct(row);
  }
  Eigen::VectorXd qs = Dv.cwiseProduct(f.q);
  Eigen::VectorXd hs = Ev.cwiseProduct(f.h);
  double cost_scale = 1.0;
  {
    double pn = 0.0;
    for (int j = 0; j < nx; ++j) { pn += Ps.col(j).cwiseAbs().maxCoeff(); }
    pn /= std::max(1, nx);
    const double qn = qs.size() ? qs.lpNorm<Eigen::Infinity>() : 0.0;
    const double ref = std::max(pn, qn);
    if (ref > 0.0) { cost_scale = std::clamp(1.0 / ref, 1e-8, 1e8); }
  }
  Ps *= cost_scale;
  qs *= cost_scale;

  // Initial point.
  Eigen::MatrixXd base = Ps + Gs.transpose() * Gs;
  base.diagonal().array() += 1e-12 * std::max(1.0, base.diagonal().cwiseAbs().maxCoeff());
  Eigen::LLT<Eigen::MatrixXd> init(base);
  Eigen::VectorXd x = init.solve(Gs.transpose() * hs - qs);
  if (warm_start && warm_start->size() == n) {
    x.head(n) = warm_start->cwiseQuotient(Dv.head(n));
    for (int j = 0; j < L; ++j) {
      const int st = K.soc_start[j];
      const double tj = (hs.segment(st + 1, K.soc[j] - 1) - Gs.block(st + 1, 0, K.soc[j] - 1, nx) * x).norm();
      x(n + j) = (tj / Ev(st)) / Dv(n + j);
    }
  }
  Eigen::VectorXd s = hs - Gs * x;
  Eigen::VectorXd z = -s;
  {
    const double ms = cone::min_eig(K, s);
    if (ms < 1e-8) { cone::add_identity(K, s, 1.0 - ms); }
    const double mz = cone::min_eig(K, z);
    if (mz < 1e-8) { cone::add_identity(K, z, 1.0 - mz); }
  }

  const Eigen::VectorXd e = cone::identity(K);
  Eigen::MatrixXd WiG(rows, nx);
  Eigen::MatrixXd H(nx, nx);
  Eigen::LLT<Eigen::MatrixXd> llt(nx);
  SolveStatus status = SolveStatus::MaxIter;
  // Best iterate by scaled KKT measure; ill-conditioned late steps can lose accuracy.
  Eigen::VectorXd x_best = x, s_best = s, z_best = z;
  double best_score = std::numeric_limits<double>::infinity();
  int iter = 0;
  for (; iter < settings.max_iterations; ++iter) {
    const Eigen::VectorXd Px = Ps * x;
    const Eigen::VectorXd Gtz = Gs.transpose() * z;
    const Eigen::VectorXd Gx = Gs * x;
    const Eigen::VectorXd rx = Px + qs + Gtz;
    const Eigen::VectorXd rz = Gx + s - hs;
    const double gap = s.dot(z);
    const double mu = gap / nu;
    const double pobj = 0.5 * x.dot(Px) + qs.dot(x);
    auto nrm = [](const Eigen::VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; };
    const double pres = nrm(rz) / (1.0 + std::max({nrm(hs), nrm(Gx), nrm(s)}));
    const double dres = nrm(rx) / (1.0 + std::max({nrm(Px), nrm(qs), nrm(Gtz)}));
    const double rel_gap = std::min(gap, gap / std::max(1.0, std::abs(pobj)));
    if (pres <= settings.feasibility_tolerance && dres <= settings.feasibility_tolerance &&
        rel_gap <= settings.gap_tolerance) {
      status = SolveStatus::Optimal;
      break;
    }
    if (const double score = std::max({pres, dres, rel_gap}); score < best_score) {
      best_score = score;
      x_best = x;
      s_best = s;
      z_best = z;
    }
    const double hz = hs.dot(z);
    if (settings.log) {
      *settings.log << "it " << iter << " pobj " << pobj << " pres " << pres << " dres " << dres << " gap " << gap
                    << " hz " << hz << " |G'z| " << nrm(Gtz) << " |z| " << nrm(z) << " |x| " << nrm(x) << "\n";
    }
    if (hz < 0.0 && nrm(Gtz) <= settings.infeasibility_tolerance * (-hz)) {
      status = SolveStatus::Infeasible;
      break;
    }

    const auto W = cone::Scaling::compute(K, s, z);
    const Eigen::VectorXd lambda = W.apply(K, z, false);
    WiG = Gs;
    W.apply(K, WiG, true);
    H = Ps;
    H.selfadjointView<Eigen::Lower>().rankUpdate(WiG.transpose());
    llt.compute(H);
    if (llt.info() != Eigen::Success) {
      H.diagonal().array() += 1e-10 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
      llt.compute(H);
      if (llt.info() != Eigen::Success) { break; }
    }

    // Solves P dx + G' dz = bx, G dx + ds = bz, lambda o (W dz + W^{-1} ds) = bs.
    struct Dir
    {
      Eigen::VectorXd dx, dz, ds, dzt, dst;
    };
    auto reduced = [&](const Eigen::VectorXd& bx, const Eigen::VectorXd& bz, const Eigen::VectorXd& bs) {
      Dir d;
      const Eigen::VectorXd lb = cone::divide(K, lambda, bs);
      const Eigen::VectorXd Wibz = W.apply(K, bz, true);
      d.dx = llt.solve(bx + WiG.transpose() * (Wibz - lb));
      d.dzt = WiG * d.dx - Wibz + lb;
      d.dz = W.apply(K, d.dzt, true);
      d.dst = lb - d.dzt;
      d.ds = W.apply(K, d.dst, false);
      return d;
    };
    // One round of iterative refinement against the unreduced system.
    auto newton = [&](const Eigen::VectorXd& bx, const Eigen::VectorXd& bz, const Eigen::VectorXd& bs) {
      Dir d = reduced(bx, bz, bs);
      for (int round = 0; round < 1; ++round) {
        const Eigen::VectorXd ex = bx - Ps * d.dx - Gs.transpose() * d.dz;
        const Eigen::VectorXd ez = bz - Gs * d.dx - d.ds;
        const Eigen::VectorXd es = bs - cone::product(K, lambda, d.dzt + d.dst);
        const Dir c = reduced(ex, ez, es);
        d.dx += c.dx;
        d.dz += c.dz;
        d.ds += c.ds;
        d.dzt += c.dzt;
        d.dst += c.dst;
      }
      return d;
    };

    const Eigen::VectorXd ll = cone::product(K, lambda, lambda);
    const Dir aff = newton(-rx, -rz, -ll);
    const double a_aff =
      std::min({1.0, cone::max_step(K, s, aff.ds), cone::max_step(K, z, aff.dz)});
    const double mu_aff = (s + a_aff * aff.ds).dot(z + a_aff * aff.dz) / nu;
    const double sigma = std::clamp(std::pow(std::max(mu_aff, 0.0) / std::max(mu, 1e-300), 3.0), 0.0, 1.0);

    const Eigen::VectorXd bs = -ll - cone::product(K, aff.dst, aff.dzt) + sigma * mu * e;
    const Dir d = newton(-rx, -rz, bs);
    const double a_max = std::min(cone::max_step(K, s, d.ds), cone::max_step(K, z, d.dz));
    const double a = std::min(1.0, 0.99 * a_max);
    const Eigen::VectorXd s_next = s + a * d.ds;
    const Eigen::VectorXd z_next = z + a * d.dz;
    // Round-off near the cone boundary can leave the interior; stop at the last good iterate.
    if (!(cone::min_eig(K, s_next) > 0.0) || !(cone::min_eig(K, z_next) > 0.0) || !d.dx.allFinite()) { break; }
    x += a * d.dx;
    s = s_next;
    z = z_next;
  }

  if (status == SolveStatus::MaxIter) {
    x = x_best;
    s = s_best;
    z = z_best;
  }
  result.status = status;
  result.iterations = iter;
  const Eigen::VectorXd xu = Dv.cwiseProduct(x);
  const Eigen::VectorXd zu = Ev.cwiseProduct(z) / cost_scale;
  result.z = xu.head(n);
  result.t = xu.tail(L);
  result.objective = prog.objective(result.z);
  {
    detail::StandardForm scaled{Ps, qs, Gs, hs, K};
    result.residuals = detail::residuals(scaled, x, s, z);
  }
  // An iterate that stalls on round-off is still reported optimal when its residuals are small.
  if (status == SolveStatus::MaxIter && result.residuals.max() <= settings.stall_tolerance) {
    result.status = SolveStatus::Optimal;
  }
  result.inequality_duals = zu.head(K.linear);
  return result;
}

/// Plain-text dump of a program (dimensions, dense matrices, cone descriptors).
inline void dump_program(const ConeProgram& p, std::ostream& os)
{
  const Eigen::IOFormat fmt(Eigen::FullPrecision, Eigen::DontAlignCols, " ", "\n");
  os << "cone_program n " << p.dimension() << " m " << p.num_inequalities() << " links " << p.num_links()
     << "\n";
  os << "P\n" << p.P.format(fmt) << "\nq\n" << p.q.transpose().format(fmt) << "\n";
  os << "A_in\n" << p.A_in.format(fmt) << "\nb_in\n" << p.b_in.transpose().format(fmt) << "\n";
  if (p.num_links() > 0) { os << "T_in\n" << p.T_in.format(fmt) << "\n"; }
  for (int j = 0; j < p.num_links(); ++j) {
    os << "link " << j << " dim " << p.links[j].d.size() << "\nD\n"
       << p.links[j].D.format(fmt) << "\nd\n" << p.links[j].d.transpose().format(fmt) << "\n";
  }
}

}  // namespace gcmpc
