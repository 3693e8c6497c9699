#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcmpc {

/// Physical parameters of one axle's virtual tire (Fiala brush model).
struct TireParams
{
  double cornering_stiffness{};  ///< C [N/rad]
  double friction_ratio{};       ///< R_mu, dynamic over static friction [-]
  double friction{};             ///< mu [-]
  double normal_force{};         ///< F_z [N]

  void validate() const
  {
    if (!(cornering_stiffness > 0.0)) {
      throw std::invalid_argument("tire: cornering stiffness must be positive");
    }
    if (!(normal_force > 0.0)) { throw std::invalid_argument("tire: normal force must be positive"); }
    if (!(friction > 0.0)) { throw std::invalid_argument("tire: friction must be positive"); }
    if (!(friction_ratio > 0.0) || !(friction_ratio < 1.5)) {
      throw std::invalid_argument(
        "tire: friction ratio must lie in (0, 1.5) so that the q denominator 1 - (2/3)R_mu stays "
        "positive");
    }
  }
};

/**
 * Interval box around nominal tire parameters. Half-widths are relative and apply
 * to (cornering stiffness, friction ratio, friction) in that order. The normal load
 * is not uncertain.
 */
struct TireUncertaintySet
{
  TireParams nominal{};
  std::array<double, 3> rel_bounds{};

  void validate() const
  {
    for (double b : rel_bounds) {
      if (!(b >= 0.0 && b < 1.0)) {
        throw std::invalid_argument("tire uncertainty: relative bounds must lie in [0, 1)");
      }
    }
    for (const auto& v : vertices()) { v.validate(); }
  }

  /// The 8 corners of the box. Vertex bit 0 picks the C bound, bit 1 R_mu, bit 2 mu.
  [[nodiscard]] std::array<TireParams, 8> vertices() const
  {
    std::array<TireParams, 8> out{};
    for (int v = 0; v < 8; ++v) {
      const double sc = (v & 1) ? 1.0 + rel_bounds[0] : 1.0 - rel_bounds[0];
      const double sr = (v & 2) ? 1.0 + rel_bounds[1] : 1.0 - rel_bounds[1];
      const double sm = (v & 4) ? 1.0 + rel_bounds[2] : 1.0 - rel_bounds[2];
      out[v] = TireParams{nominal.cornering_stiffness * sc, nominal.friction_ratio * sr,
                          nominal.friction * sm, nominal.normal_force};
    }
    return out;
  }

  /// Parameters at box coordinates s in [-1, 1]^3.
  [[nodiscard]] TireParams at(double sc, double sr, double sm) const
  {
    return TireParams{nominal.cornering_stiffness * (1.0 + sc * rel_bounds[0]),
                      nominal.friction_ratio * (1.0 + sr * rel_bounds[1]),
                      nominal.friction * (1.0 + sm * rel_bounds[2]), nominal.normal_force};
  }

  [[nodiscard]] bool contains(const TireParams& p, double slack = 1e-12) const
  {
    auto inside = [slack](double value, double nominal_value, double half) {
      const double lo = nominal_value * (1.0 - half);
      const double hi = nominal_value * (1.0 + half);
      return value >= lo - slack * std::abs(nominal_value) && value <= hi + slack * std::abs(nominal_value);
    };
    return inside(p.cornering_stiffness, nominal.cornering_stiffness, rel_bounds[0]) &&
           inside(p.friction_ratio, nominal.friction_ratio, rel_bounds[1]) &&
           inside(p.friction, nominal.friction, rel_bounds[2]) && p.normal_force == nominal.normal_force;
  }
};

/// Linear tire: F = -C alpha.
[[nodiscard]] inline double linear_force(double cornering_stiffness, double alpha)
{
  return -cornering_stiffness * alpha;
}

/// Slip angle at which the Fiala model enters the saturated plateau.
[[nodiscard]] inline double saturation_slip(const TireParams& p)
{
  return std::atan(3.0 * p.friction * p.normal_force / p.cornering_stiffness);
}

/// Fiala brush-model lateral force. Positive slip produces negative force.
[[nodiscard]] inline double fiala_force(const TireParams& p, double alpha)
{
  if (!(std::abs(alpha) < std::numbers::pi / 2.0)) {
    throw std::domain_error("fiala_force: |alpha| must be below pi/2");
  }
  const double mu_fz = p.friction * p.normal_force;
  if (std::abs(alpha) > saturation_slip(p)) {
    const double sign = alpha > 0.0 ? 1.0 : -1.0;
    return -sign * mu_fz * p.friction_ratio;
  }
  const double f = p.cornering_stiffness * std::tan(alpha);
  const double k1 = (2.0 - p.friction_ratio) / (3.0 * mu_fz);
  const double k2 = (1.0 - 2.0 / 3.0 * p.friction_ratio) / ((3.0 * mu_fz) * (3.0 * mu_fz));
  return -f + k1 * std::abs(f) * f - k2 * f * f * f;
}

/// Local cornering stiffness -dF/dalpha of the Fiala model (zero on the plateau).
[[nodiscard]] inline double fiala_stiffness(const TireParams& p, double alpha)
{
  if (!(std::abs(alpha) < std::numbers::pi / 2.0)) {
    throw std::domain_error("fiala_stiffness: |alpha| must be below pi/2");
  }
  if (std::abs(alpha) > saturation_slip(p)) { return 0.0; }
  const double mu_fz = p.friction * p.normal_force;
  const double t = std::tan(alpha);
  const double f = p.cornering_stiffness * t;
  const double k1 = (2.0 - p.friction_ratio) / (3.0 * mu_fz);
  const double k2 = (1.0 - 2.0 / 3.0 * p.friction_ratio) / ((3.0 * mu_fz) * (3.0 * mu_fz));
  const double dF_df = -1.0 + 2.0 * k1 * std::abs(f) - 3.0 * k2 * f * f;
  return -dF_df * p.cornering_stiffness * (1.0 + t * t);
}

struct PeakCharacteristics
{
  double q{};           ///< (1 - 2/3 R_mu)^-1
  double peak_force{};  ///< signed force at +peak_slip (negative)
  double peak_slip{};   ///< rad, positive
};

/**
 * Peak of the unsaturated Fiala branch. The cubic has stationary points at
 * f = q mu F_z and f = 3 mu F_z, so for R_mu >= 1 (q >= 3) the curve is monotone up to
 * the plateau and the peak sits at the saturation boundary instead.
 */
[[nodiscard]] inline PeakCharacteristics peak_characteristics(const TireParams& p)
{
  const double denom = 1.0 - 2.0 / 3.0 * p.friction_ratio;
  if (!(denom > 0.0)) {
    throw std::invalid_argument(
      "peak_characteristics: friction ratio must be below 1.5 (q denominator 1 - (2/3)R_mu <= 0)");
  }
  const double q = 1.0 / denom;
  const double mu_fz = p.friction * p.normal_force;
  if (q >= 3.0) {
    return {q, -p.friction_ratio * mu_fz, saturation_slip(p)};
  }
  const double force =
    mu_fz * (-q + (2.0 - p.friction_ratio) / 3.0 * q * q - denom / 9.0 * q * q * q);
  return {q, force, std::atan(q * mu_fz / p.cornering_stiffness)};
}

/// Symmetric, strictly increasing grid over [-half_width, half_width]; exact mirror symmetry.
[[nodiscard]] inline std::vector<double> symmetric_grid(double half_width, int points)
{
  if (points < 3 || !(half_width > 0.0)) {
    throw std::invalid_argument("symmetric_grid: need at least 3 points and a positive half width");
  }
  std::vector<double> g(static_cast<size_t>(points));
  const double step = 2.0 * half_width / (points - 1);
  for (int i = 0; i < points; ++i) { g[i] = -half_width + step * i; }
  for (int i = 0; i < points / 2; ++i) { g[points - 1 - i] = -g[i]; }
  if (points % 2 == 1) { g[points / 2] = 0.0; }
  return g;
}

/**
 * Force and stiffness bounds of a tire over its uncertainty box, tabulated on a
 * slip grid from the 8 box vertices and linearly interpolated in between.
 *
 * Evaluation outside the grid clamps to the end values. Evaluators work on |alpha|
 * and restore parity, so the odd/even symmetry of the curves is exact.
 */
class ForceEnvelope
{
public:
  ForceEnvelope() = default;

  ForceEnvelope(const TireUncertaintySet& set, std::span<const double> grid)
  {
    if (grid.size() < 3) { throw std::invalid_argument("force_envelope: grid needs at least 3 points"); }
    for (size_t i = 1; i < grid.size(); ++i) {
      if (!(grid[i] > grid[i - 1])) {
        throw std::invalid_argument("force_envelope: grid must be strictly increasing");
      }
    }
    for (size_t i = 0; i < grid.size(); ++i) {
      if (grid[i] != -grid[grid.size() - 1 - i]) {
        throw std::invalid_argument("force_envelope: grid must be symmetric about zero");
      }
    }
    set.validate();
    set_ = set;
    // Keep the non-negative half; the negative half follows by symmetry.
    for (double a : grid) {
      if (a >= 0.0) { alpha_.push_back(a); }
    }
    if (alpha_.front() != 0.0) { alpha_.insert(alpha_.begin(), 0.0); }
    const auto verts = set.vertices();
    const size_t n = alpha_.size();
    f_inf_.resize(n);
    f_sup_.resize(n);
    c_inf_.resize(n);
    c_sup_.resize(n);
    for (size_t i = 0; i < n; ++i) {
      double fmin = std::numeric_limits<double>::infinity();
      double fmax = -fmin;
      double cmin = fmin;
      double cmax = -fmin;
      for (const auto& v : verts) {
        const double f = fiala_force(v, alpha_[i]);
        const double c = fiala_stiffness(v, alpha_[i]);
        fmin = std::min(fmin, f);
        fmax = std::max(fmax, f);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
      }
      f_inf_[i] = fmin;
      f_sup_[i] = fmax;
      c_inf_[i] = cmin;
      c_sup_[i] = cmax;
    }
    // Peak: last grid point reached while the mean force is still strictly decreasing.
    size_t k = 0;
    while (k + 1 < n && mean_at(k + 1) < mean_at(k)) { ++k; }
    peak_index_ = k;
  }

  [[nodiscard]] double upper_force(double alpha) const  ///< F_sup
  {
    return alpha >= 0.0 ? interp(f_sup_, alpha) : -interp(f_inf_, -alpha);
  }
  [[nodiscard]] double lower_force(double alpha) const  ///< F_inf
  {
    return alpha >= 0.0 ? interp(f_inf_, alpha) : -interp(f_sup_, -alpha);
  }
  [[nodiscard]] double mean_force(double alpha) const  ///< F_bar
  {
    const double a = std::abs(alpha);
    const double m = 0.5 * (interp(f_sup_, a) + interp(f_inf_, a));
    return alpha >= 0.0 ? m : -m;
  }
  [[nodiscard]] double force_deviation(double alpha) const  ///< dF
  {
    const double a = std::abs(alpha);
    return 0.5 * (interp(f_sup_, a) - interp(f_inf_, a));
  }
  [[nodiscard]] double mean_stiffness(double alpha) const  ///< C_bar
  {
    const double a = std::abs(alpha);
    return 0.5 * (interp(c_sup_, a) + interp(c_inf_, a));
  }
  [[nodiscard]] double stiffness_deviation(double alpha) const  ///< dC
  {
    const double a = std::abs(alpha);
    return 0.5 * (interp(c_sup_, a) - interp(c_inf_, a));
  }

  /// End of the monotone region of F_bar on the positive side.
  [[nodiscard]] double peak_slip() const { return alpha_[peak_index_]; }
  /// F_bar at peak_slip (negative).
  [[nodiscard]] double peak_force() const { return mean_at(peak_index_); }

  /// Smallest peak slip over the vertex tires; no admissible tire peaks before it.
  [[nodiscard]] double earliest_peak_slip() const
  {
    double a = std::numeric_limits<double>::infinity();
    for (const auto& v : set_.vertices()) { a = std::min(a, peak_characteristics(v).peak_slip); }
    return a;
  }

  [[nodiscard]] const TireUncertaintySet& uncertainty() const { return set_; }
  [[nodiscard]] double max_slip() const { return alpha_.back(); }

  /// Full symmetric grid this envelope was tabulated on.
  [[nodiscard]] std::vector<double> grid() const
  {
    std::vector<double> g;
    g.reserve(2 * alpha_.size());
    for (size_t i = alpha_.size(); i-- > 1;) { g.push_back(-alpha_[i]); }
    g.insert(g.end(), alpha_.begin(), alpha_.end());
    return g;
  }

  /// CSV with columns alpha,F_inf,F_bar,F_sup,dF,C_bar,dC at the grid points.
  void write_csv(std::ostream& os) const
  {
    os.precision(17);
    os << "alpha,F_inf,F_bar,F_sup,dF,C_bar,dC\n";
    for (double a : grid()) {
      os << a << ',' << lower_force(a) << ',' << mean_force(a) << ',' << upper_force(a) << ','
         << force_deviation(a) << ',' << mean_stiffness(a) << ',' << stiffness_deviation(a) << '\n';
    }
  }

private:
  [[nodiscard]] double mean_at(size_t i) const { return 0.5 * (f_sup_[i] + f_inf_[i]); }

  [[nodiscard]] double interp(const std::vector<double>& y, double a) const
  {
    if (a <= alpha_.front()) { return y.front(); }
    if (a >= alpha_.back()) { return y.back(); }
    const auto it = std::upper_bound(alpha_.begin(), alpha_.end(), a);
    const size_t hi = static_cast<size_t>(it - alpha_.begin());
    const size_t lo = hi - 1;
    const double t = (a - alpha_[lo]) / (alpha_[hi] - alpha_[lo]);
    return y[lo] + t * (y[hi] - y[lo]);
  }

  TireUncertaintySet set_{};
  std::vector<double> alpha_;
  std::vector<double> f_inf_, f_sup_, c_inf_, c_sup_;
  size_t peak_index_{0};
};

[[nodiscard]] inline ForceEnvelope force_envelope(const TireUncertaintySet& set,
                                                  std::span<const double> alpha_grid)
{
  return ForceEnvelope(set, alpha_grid);
}

/// Default tabulation: 2001 points over +-0.25 rad.
[[nodiscard]] inline ForceEnvelope force_envelope(const TireUncertaintySet& set)
{
  const auto g = symmetric_grid(0.25, 2001);
  return ForceEnvelope(set, g);
}

struct InverseForce
{
  double alpha{};
  bool clamped{false};  ///< requested force was outside the monotone range
};

/**
 * Slip angle in [-peak_slip, peak_slip] at which the mean force equals `force`.
 * Bisection on the monotone bracket; forces outside the range clamp to the nearer
 * end and set the flag.
 */
[[nodiscard]] inline InverseForce inverse_mean_force(const ForceEnvelope& env, double force,
                                                     double tolerance = 1e-12)
{
  const double peak = env.peak_slip();
  const double f_lo = env.mean_force(peak);   // most negative
  const double f_hi = env.mean_force(-peak);  // most positive
  if (force <= f_lo) { return {peak, force < f_lo}; }
  if (force >= f_hi) { return {-peak, force > f_hi}; }
  // Solve on [0, peak] for the negative branch and mirror, so the result is exactly odd.
  const double target = -std::abs(force);
  double lo = 0.0;   // F_bar(lo) >= target
  double hi = peak;  // F_bar(hi) < target
  while (hi - lo > tolerance) {
    const double mid = 0.5 * (lo + hi);
    if (env.mean_force(mid) >= target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double alpha = target == 0.0 ? 0.0 : 0.5 * (lo + hi);
  return {force > 0.0 ? -alpha : alpha, false};
}

}  // namespace gcmpc
