#pragma once

#include "gcmpc/linalg.hpp"
#include "gcmpc/vehicle_models.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace gcmpc {

class SynthesisFailure : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct SynthesisOptions
{
  double eps_min{1e-12};
  double eps_max{1e6};
  int eps_grid_points{61};
  /// Golden-section stop width in log10(eps).
  double golden_tolerance{1e-3};
  double fixed_point_tolerance{1e-10};
  int max_fixed_point_iterations{200000};
  /**
   * States that are held constant (unit row in F, zero rows in G and H). Their
   * cost-to-go block grows without bound, so the fixed-point test ignores it and the
   * terminal matrix completes it with the smallest value that keeps S_N PSD.
   */
  std::vector<int> exogenous_states{};
};

/**
 * Guaranteed-cost gains for a horizon N.
 *
 * Backward recursion, for k = N-1 .. 0:
 *   X_{k+1} = (S_{k+1}^{-1} - eps H H')^{-1}            (requires eps^{-1} I - H' S_{k+1} H > 0)
 *   Rbar_k  = R + eps^{-1} E_b' E_b + G' X_{k+1} G
 *   K_k     = Rbar_k^{-1} (G' X_{k+1} F + eps^{-1} E_b' E_a)
 *   S_k     = Q + eps^{-1} E_a' E_a + F' X_{k+1} F - K_k' Rbar_k K_k
 * so that x' S_k x bounds the worst-case cost-to-go under u = -K x + v, plus v' Rbar v.
 */
template <int NX>
struct GcGains
{
  using Mat = Eigen::Matrix<double, NX, NX>;
  using Row = Eigen::Matrix<double, 1, NX>;

  double epsilon{};
  int horizon{};
  std::vector<Mat> S;           ///< k = 0..N
  std::vector<Mat> X;           ///< k = 0..N
  std::vector<Row> K;           ///< k = 0..N-1
  std::vector<double> Rbar;     ///< k = 0..N-1
  Row K_stationary{Row::Zero()};
  int fixed_point_iterations{};

  [[nodiscard]] const Row& gain(int k) const
  {
    return k < horizon ? K[static_cast<size_t>(k)] : K_stationary;
  }
};

namespace detail {

template <int NX>
struct RiccatiStep
{
  Eigen::Matrix<double, NX, NX> X;
  double Rbar{};
  Eigen::Matrix<double, 1, NX> K;
  Eigen::Matrix<double, NX, NX> S;
};

template <int NX, int NW, int NZ>
std::optional<RiccatiStep<NX>> gc_step(const UncertainDiscreteSystem<NX, NW, NZ>& sys,
                                       const Eigen::Matrix<double, NX, NX>& Q, double R, double eps,
                                       const Eigen::Matrix<double, NX, NX>& S_next)
{
  RiccatiStep<NX> out;
  const double inv_eps = 1.0 / eps;
  if (sys.H.isZero(0.0)) {
    out.X = S_next;
  } else {
    const Eigen::Matrix<double, NX, NW> SH = S_next * sys.H;
    Eigen::Matrix<double, NW, NW> T =
      inv_eps * Eigen::Matrix<double, NW, NW>::Identity() - sys.H.transpose() * SH;
    Eigen::LLT<Eigen::Matrix<double, NW, NW>> llt(T);
    if (llt.info() != Eigen::Success) { return std::nullopt; }
    // Reject near-singular T, where X blows up.
    if (llt.matrixL().toDenseMatrix().diagonal().minCoeff() <= 1e-12 * std::sqrt(inv_eps)) {
      return std::nullopt;
    }
    out.X = S_next + SH * llt.solve(SH.transpose());
  }
  out.X = 0.5 * (out.X + out.X.transpose()).eval();
  const Eigen::Matrix<double, NX, 1> XG = out.X * sys.G;
  out.Rbar = R + inv_eps * sys.E_b.squaredNorm() + sys.G.dot(XG);
  if (!(out.Rbar > 0.0) || !std::isfinite(out.Rbar)) { return std::nullopt; }
  const Eigen::Matrix<double, 1, NX> cross =
    XG.transpose() * sys.F + inv_eps * sys.E_b.transpose() * sys.E_a;
  out.K = cross / out.Rbar;
  out.S = Q + inv_eps * sys.E_a.transpose() * sys.E_a + sys.F.transpose() * out.X * sys.F -
          out.Rbar * out.K.transpose() * out.K;
  out.S = 0.5 * (out.S + out.S.transpose()).eval();
  if (!out.S.allFinite()) { return std::nullopt; }
  return out;
}

template <int NX, int NW, int NZ>
void check_exogenous_structure(const UncertainDiscreteSystem<NX, NW, NZ>& sys,
                               const std::vector<int>& exo)
{
  for (int i : exo) {
    if (i < 0 || i >= NX) { throw std::invalid_argument("synthesis: exogenous index out of range"); }
    Eigen::Matrix<double, 1, NX> unit = Eigen::Matrix<double, 1, NX>::Zero();
    unit(i) = 1.0;
    if (sys.F.row(i) != unit || sys.G(i) != 0.0 || !sys.H.row(i).isZero(0.0)) {
      throw std::invalid_argument(
        "synthesis: exogenous states need a unit row in F and zero rows in G and H");
    }
  }
}

template <int NX>
Eigen::Matrix<double, NX, NX> exogenous_mask(const std::vector<int>& exo)
{
  // 1 where the entry is in the exogenous-exogenous block.
  Eigen::Matrix<double, NX, NX> mask = Eigen::Matrix<double, NX, NX>::Zero();
  for (int i : exo) {
    for (int j : exo) { mask(i, j) = 1.0; }
  }
  return mask;
}

/// Minimal PSD completion of the exogenous block: S_ee = S_ep S_pp^+ S_pe.
template <int NX>
Eigen::Matrix<double, NX, NX> complete_exogenous(const Eigen::Matrix<double, NX, NX>& S,
                                                 const std::vector<int>& exo)
{
  if (exo.empty()) { return S; }
  std::vector<int> plant;
  for (int i = 0; i < NX; ++i) {
    if (std::find(exo.begin(), exo.end(), i) == exo.end()) { plant.push_back(i); }
  }
  const int np = static_cast<int>(plant.size());
  const int ne = static_cast<int>(exo.size());
  Eigen::MatrixXd Spp(np, np), Spe(np, ne);
  for (int i = 0; i < np; ++i) {
    for (int j = 0; j < np; ++j) { Spp(i, j) = S(plant[i], plant[j]); }
    for (int j = 0; j < ne; ++j) { Spe(i, j) = S(plant[i], exo[j]); }
  }
  const Eigen::MatrixXd See = Spe.transpose() * psd_pinv(Spp) * Spe;
  Eigen::Matrix<double, NX, NX> out = S;
  for (int i = 0; i < ne; ++i) {
    for (int j = 0; j < ne; ++j) { out(exo[i], exo[j]) = See(i, j); }
  }
  return 0.5 * (out + out.transpose());
}

}  // namespace detail

/// Stationary (fixed-point) solution of the guaranteed-cost recursion for a fixed eps.
template <int NX, int NW, int NZ>
std::optional<detail::RiccatiStep<NX>>
gc_fixed_point(const UncertainDiscreteSystem<NX, NW, NZ>& sys, const Eigen::Matrix<double, NX, NX>& Q,
               double R, double eps, const SynthesisOptions& opts, int* iterations = nullptr,
               const Eigen::Matrix<double, NX, NX>* warm = nullptr)
{
  const auto mask = detail::exogenous_mask<NX>(opts.exogenous_states);
  const Eigen::Matrix<double, NX, NX> keep = Eigen::Matrix<double, NX, NX>::Ones() - mask;
  Eigen::Matrix<double, NX, NX> S = warm ? *warm : Q;
  S = S.cwiseProduct(keep);
  Eigen::Matrix<double, 1, NX> K_prev = Eigen::Matrix<double, 1, NX>::Constant(
    std::numeric_limits<double>::quiet_NaN());
  for (int it = 1; it <= opts.max_fixed_point_iterations; ++it) {
    auto step = detail::gc_step(sys, Q, R, eps, S);
    if (!step) { return std::nullopt; }
    step->S = step->S.cwiseProduct(keep);
    const double scale = std::max(1.0, step->S.cwiseAbs().maxCoeff());
    const double dS = (step->S - S).cwiseAbs().maxCoeff();
    const double kscale = std::max(1.0, step->K.cwiseAbs().maxCoeff());
    const double dK = K_prev.allFinite() ? (step->K - K_prev).cwiseAbs().maxCoeff()
                                         : std::numeric_limits<double>::infinity();
    if (scale > 1e300) { return std::nullopt; }
    S = step->S;
    K_prev = step->K;
    if (dS <= opts.fixed_point_tolerance * scale && dK <= opts.fixed_point_tolerance * kscale) {
      if (iterations) { *iterations = it; }
      step->S = detail::complete_exogenous<NX>(S, opts.exogenous_states);
      return step;
    }
  }
  return std::nullopt;
}

/// Guaranteed-cost recursion for a given eps, terminal matrix at the stationary solution.
template <int NX, int NW, int NZ>
std::optional<GcGains<NX>> gc_recursion(const UncertainDiscreteSystem<NX, NW, NZ>& sys,
                                        const Eigen::Matrix<double, NX, NX>& Q, double R, double eps,
                                        int horizon, const SynthesisOptions& opts = {},
                                        const Eigen::Matrix<double, NX, NX>* warm = nullptr)
{
  if (horizon < 1) { throw std::invalid_argument("synthesis: horizon must be at least 1"); }
  int iters = 0;
  auto fp = gc_fixed_point(sys, Q, R, eps, opts, &iters, warm);
  // A warm start from another eps can leave the feasible region early; retry from Q.
  if (!fp && warm) { fp = gc_fixed_point(sys, Q, R, eps, opts, &iters); }
  if (!fp) { return std::nullopt; }
  GcGains<NX> g;
  g.epsilon = eps;
  g.horizon = horizon;
  g.fixed_point_iterations = iters;
  g.K_stationary = fp->K;
  const size_t n = static_cast<size_t>(horizon);
  g.S.resize(n + 1);
  g.X.resize(n + 1);
  g.K.resize(n);
  g.Rbar.resize(n);
  g.S[n] = fp->S;
  for (size_t k = n; k-- > 0;) {
    auto step = detail::gc_step(sys, Q, R, eps, g.S[k + 1]);
    if (!step) { return std::nullopt; }
    g.X[k + 1] = step->X;
    g.Rbar[k] = step->Rbar;
    g.K[k] = step->K;
    g.S[k] = step->S;
  }
  // X_0 for completeness; feasibility of eps at S_0 is part of the contract.
  auto first = detail::gc_step(sys, Q, R, eps, g.S[0]);
  if (!first) { return std::nullopt; }
  g.X[0] = first->X;
  return g;
}

/**
 * Picks eps by minimizing tr(S_0): a log-spaced scan over [eps_min, eps_max] followed
 * by golden-section refinement around the best scan point.
 */
template <int NX, int NW, int NZ>
GcGains<NX> synthesize(const UncertainDiscreteSystem<NX, NW, NZ>& sys,
                       const Eigen::Matrix<double, NX, NX>& Q, double R, int horizon,
                       const SynthesisOptions& opts = {})
{
  if (!(R > 0.0)) { throw std::invalid_argument("synthesis: R must be positive"); }
  if (min_eigenvalue(Q) < -1e-9 * std::max(1.0, Q.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("synthesis: Q must be positive semidefinite");
  }
  detail::check_exogenous_structure(sys, opts.exogenous_states);

  // w = Delta (E_a x + E_b u) never reaches the state: plain Riccati recursion.
  if (sys.H.isZero(0.0) || (sys.E_a.isZero(0.0) && sys.E_b.isZero(0.0))) {
    UncertainDiscreteSystem<NX, NW, NZ> nominal = sys;
    nominal.H.setZero();
    nominal.E_a.setZero();
    nominal.E_b.setZero();
    auto g = gc_recursion(nominal, Q, R, 1.0, horizon, opts);
    if (!g) { throw SynthesisFailure("synthesis: nominal Riccati recursion did not converge"); }
    return *g;
  }

  const double lo = std::log10(opts.eps_min);
  const double hi = std::log10(opts.eps_max);
  const int n = std::max(2, opts.eps_grid_points);
  std::optional<GcGains<NX>> best;
  int best_index = -1;
  double best_log = 0.0;
  std::vector<double> logs(static_cast<size_t>(n));
  std::optional<Eigen::Matrix<double, NX, NX>> warm;
  for (int i = 0; i < n; ++i) {
    logs[i] = lo + (hi - lo) * i / (n - 1);
    auto g = gc_recursion(sys, Q, R, std::pow(10.0, logs[i]), horizon, opts,
                          warm ? &*warm : nullptr);
    if (!g) { continue; }
    warm = g->S.back();
    if (!best || g->S[0].trace() < best->S[0].trace()) {
      best = std::move(g);
      best_index = i;
      best_log = logs[i];
    }
  }
  if (!best) {
    std::ostringstream msg;
    msg << "synthesis: no feasible eps in [" << opts.eps_min << ", " << opts.eps_max << "] over " << n
        << " log-spaced points";
    throw SynthesisFailure(msg.str());
  }

  double a = logs[static_cast<size_t>(std::max(0, best_index - 1))];
  double b = logs[static_cast<size_t>(std::min(n - 1, best_index + 1))];
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto trace_at = [&](double le) {
    auto g = gc_recursion(sys, Q, R, std::pow(10.0, le), horizon, opts, &best->S.back());
    if (!g) { return std::numeric_limits<double>::infinity(); }
    const double t = g->S[0].trace();
    if (t < best->S[0].trace()) {
      best = std::move(g);
      best_log = le;
    }
    return t;
  };
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = trace_at(c);
  double fd = trace_at(d);
  while (b - a > opts.golden_tolerance) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = trace_at(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = trace_at(d);
    }
  }
  return *best;
}

/**
 * Disturbance-propagation data for the robustness margins, using the stationary
 * closed loop F~ = F - G K~ and E1 = E_a - E_b K~.
 *   rho_i  = || E1 F~^i H ||_2,                     i = 0..N-1
 *   c(k,i) = rho_{k-i-1} + sum_{j=0}^{k-i-2} rho_j c(k-j-1, i),   0 <= i < k < N
 */
template <int NX, int NW, int NZ>
struct MarginCoefficients
{
  std::vector<double> rho;
  std::vector<std::vector<double>> c;  ///< c[k][i] for i < k
  Eigen::Matrix<double, NX, NX> F_tilde;
  Eigen::Matrix<double, NZ, NX> E1_stationary;
  std::vector<Eigen::Matrix<double, NZ, NX>> E1;  ///< per step, E_a - E_b K_k
  std::vector<Eigen::Matrix<double, NX, NW>> FpowH;  ///< F~^m H, m = 0..N-1

  [[nodiscard]] double coeff(int k, int i) const
  {
    return c[static_cast<size_t>(k)][static_cast<size_t>(i)];
  }
};

/// c(k,i) table for 0 <= i < k < horizon; needs rho_0 .. rho_{horizon-2}.
inline std::vector<std::vector<double>> margin_recursion(const std::vector<double>& rho, int horizon)
{
  if (horizon < 1) { throw std::invalid_argument("margin_recursion: horizon must be at least 1"); }
  if (static_cast<int>(rho.size()) < horizon - 1) {
    throw std::invalid_argument("margin_recursion: need at least horizon - 1 propagation norms");
  }
  std::vector<std::vector<double>> c(static_cast<size_t>(horizon));
  for (int k = 0; k < horizon; ++k) {
    c[k].assign(static_cast<size_t>(k), 0.0);
    for (int i = 0; i < k; ++i) {
      double v = rho[static_cast<size_t>(k - i - 1)];
      for (int j = 0; j <= k - i - 2; ++j) { v += rho[j] * c[k - j - 1][i]; }
      c[k][i] = v;
    }
  }
  return c;
}

template <int NX, int NW, int NZ>
MarginCoefficients<NX, NW, NZ> margin_coefficients(const UncertainDiscreteSystem<NX, NW, NZ>& sys,
                                                   const GcGains<NX>& gains)
{
  MarginCoefficients<NX, NW, NZ> out;
  const int N = gains.horizon;
  out.F_tilde = sys.F - sys.G * gains.K_stationary;
  out.E1_stationary = sys.E_a - sys.E_b * gains.K_stationary;
  out.rho.resize(static_cast<size_t>(N));
  out.FpowH.resize(static_cast<size_t>(N));
  Eigen::Matrix<double, NX, NW> P = sys.H;
  for (int i = 0; i < N; ++i) {
    out.FpowH[i] = P;
    out.rho[i] = spectral_norm(out.E1_stationary * P);
    P = (out.F_tilde * P).eval();
  }
  out.c = margin_recursion(out.rho, N);
  out.E1.resize(static_cast<size_t>(N));
  for (int k = 0; k < N; ++k) { out.E1[k] = sys.E_a - sys.E_b * gains.K[k]; }
  return out;
}

/**
 * Weights beta_l such that the margin of constraint row `a_row` at step k is
 * sum_{l<k} beta_l phi_l, where a_row is the closed-loop row M^(i) - N^(i) K_k.
 */
template <int NX, int NW, int NZ>
std::vector<double> margin_weights(const MarginCoefficients<NX, NW, NZ>& mc,
                                   const Eigen::Matrix<double, 1, NX>& a_row, int k)
{
  std::vector<double> a(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) { a[j] = (a_row * mc.FpowH[static_cast<size_t>(k - j - 1)]).cwiseAbs().sum(); }
  std::vector<double> beta(static_cast<size_t>(k), 0.0);
  for (int l = 0; l < k; ++l) {
    double v = a[l];
    for (int j = l + 1; j < k; ++j) { v += a[j] * mc.coeff(j, l); }
    beta[l] = v;
  }
  return beta;
}

/// phi_j = || E1_j x_j + E_b v_j ||_2
template <int NX, int NW, int NZ>
double disturbance_bound(const MarginCoefficients<NX, NW, NZ>& mc,
                         const UncertainDiscreteSystem<NX, NW, NZ>& sys,
                         const Eigen::Matrix<double, NX, 1>& x, double v, int j)
{
  return (mc.E1[static_cast<size_t>(j)] * x + sys.E_b * v).norm();
}

/**
 * Robustness margin of constraint row (M_row, N_entry) at step k along predicted
 * states xs and offsets vs:
 *   Phi_{k} = sum_{j<k} || A~_k F~^{k-j-1} H ||_1 phibar_j,
 *   phibar_j = phi_j + sum_{i<j} c(j,i) phi_i,   A~_k = M_row - N_entry K_k.
 */
template <int NX, int NW, int NZ>
double robustness_margin(const MarginCoefficients<NX, NW, NZ>& mc, const GcGains<NX>& gains,
                         const UncertainDiscreteSystem<NX, NW, NZ>& sys,
                         const Eigen::Matrix<double, 1, NX>& M_row, double N_entry,
                         const std::vector<Eigen::Matrix<double, NX, 1>>& xs,
                         const std::vector<double>& vs, int k)
{
  if (k <= 0) { return 0.0; }
  if (static_cast<int>(xs.size()) < k || static_cast<int>(vs.size()) < k) {
    throw std::invalid_argument("robustness_margin: sequences shorter than k");
  }
  std::vector<double> phi(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) { phi[j] = disturbance_bound(mc, sys, xs[j], vs[j], j); }
  std::vector<double> phibar(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    double v = phi[j];
    for (int i = 0; i < j; ++i) { v += mc.coeff(j, i) * phi[i]; }
    phibar[j] = v;
  }
  const Eigen::Matrix<double, 1, NX> a_row = M_row - N_entry * gains.gain(k);
  double total = 0.0;
  for (int j = 0; j < k; ++j) {
    total += (a_row * mc.FpowH[static_cast<size_t>(k - j - 1)]).cwiseAbs().sum() * phibar[j];
  }
  return total;
}

}  // namespace gcmpc
