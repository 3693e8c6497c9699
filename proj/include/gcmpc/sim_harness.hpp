#pragma once

#include "gcmpc/controller.hpp"
#include "gcmpc/tire_models.hpp"
#include "gcmpc/vehicle_models.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcmpc {

/// Slalom scenario: sinusoidal hand-wheel input while accelerating at a constant rate.
struct ScenarioConfig
{
  double initial_speed{10.0};  ///< m/s
  double acceleration{1.0};    ///< m/s^2
  double duration{20.0};       ///< s
  double amplitude{10.0 * std::numbers::pi / 180.0};  ///< rad
  double frequency{0.5};       ///< Hz
  std::uint64_t seed{1};
  double resample_period{0.02};  ///< s
  double plant_step{0.001};      ///< s
  bool cos_delta{false};         ///< project F_yf through cos(delta)

  /// Number of plant steps per interval, or throws if `interval` is not a multiple.
  [[nodiscard]] int substeps(double interval, const char* what) const
  {
    const double ratio = interval / plant_step;
    const long n = std::lround(ratio);
    if (n < 1 || std::abs(ratio - static_cast<double>(n)) > 1e-9 * ratio) {
      throw std::invalid_argument(std::string("scenario: plant step must divide the ") + what);
    }
    return static_cast<int>(n);
  }

  void validate(double sampling_time) const
  {
    if (!(duration > 0.0)) { throw std::invalid_argument("scenario: duration must be positive"); }
    if (!(initial_speed > 0.0)) { throw std::invalid_argument("scenario: initial speed must be positive"); }
    if (!(initial_speed + acceleration * duration > 0.0)) {
      throw std::invalid_argument("scenario: speed must stay positive over the run");
    }
    if (!(plant_step > 0.0)) { throw std::invalid_argument("scenario: plant step must be positive"); }
    if (!(frequency >= 0.0)) { throw std::invalid_argument("scenario: frequency must be non-negative"); }
    (void)substeps(sampling_time, "sampling time");
    (void)substeps(resample_period, "resample period");
  }

  [[nodiscard]] double speed(double t) const { return initial_speed + acceleration * t; }
  [[nodiscard]] double hand_wheel(double t) const
  {
    return amplitude * std::sin(2.0 * std::numbers::pi * frequency * t);
  }
};

/// Plant lateral state and the tire parameters currently in effect.
struct PlantState
{
  double v_y{};
  double r{};
  TireParams front{};
  TireParams rear{};
};

struct SlipAngles
{
  double front{};
  double rear{};
};

[[nodiscard]] inline SlipAngles plant_slips(const VehicleParams& vp, double v_y, double r, double delta, double v_x)
{
  return {std::atan((v_y + vp.dist_front * r) / v_x) - delta, std::atan((v_y - vp.dist_rear * r) / v_x)};
}

struct PlantDerivative
{
  double dv_y{};
  double dr{};
};

/// Nonlinear bicycle with Fiala forces and full-atan slips.
[[nodiscard]] inline PlantDerivative plant_derivative(const VehicleParams& vp, const PlantState& s, double delta,
                                                      double v_x, bool cos_delta = false)
{
  require_positive_speed(v_x);
  const auto slip = plant_slips(vp, s.v_y, s.r, delta, v_x);
  double ff = fiala_force(s.front, slip.front);
  if (cos_delta) { ff *= std::cos(delta); }
  const double fr = fiala_force(s.rear, slip.rear);
  return {(ff + fr) / vp.mass - v_x * s.r, (vp.dist_front * ff - vp.dist_rear * fr) / vp.yaw_inertia};
}

/// Uniform draws of tire parameters from their uncertainty boxes.
class DisturbanceSampler
{
public:
  explicit DisturbanceSampler(std::uint64_t seed) : rng_(seed) {}

  TireParams draw(const TireUncertaintySet& set)
  {
    const double sc = unit_(rng_);
    const double sr = unit_(rng_);
    const double sm = unit_(rng_);
    return set.at(sc, sr, sm);
  }

private:
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> unit_{-1.0, 1.0};
};

/// Classical RK4 step of the plant with delta and the tire parameters held.
inline void rk4_step(const VehicleParams& vp, PlantState& s, double delta, double t, double h,
                     const ScenarioConfig& sc)
{
  auto f = [&](double vy, double r, double tt) {
    PlantState p = s;
    p.v_y = vy;
    p.r = r;
    return plant_derivative(vp, p, delta, sc.speed(tt), sc.cos_delta);
  };
  const auto k1 = f(s.v_y, s.r, t);
  const auto k2 = f(s.v_y + 0.5 * h * k1.dv_y, s.r + 0.5 * h * k1.dr, t + 0.5 * h);
  const auto k3 = f(s.v_y + 0.5 * h * k2.dv_y, s.r + 0.5 * h * k2.dr, t + 0.5 * h);
  const auto k4 = f(s.v_y + h * k3.dv_y, s.r + h * k3.dr, t + h);
  s.v_y += h / 6.0 * (k1.dv_y + 2.0 * k2.dv_y + 2.0 * k3.dv_y + k4.dv_y);
  s.r += h / 6.0 * (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr);
}

struct TraceRecord
{
  double t{};
  double v_x{};
  double v_y_ref{};
  double r_ref{};
  double delta_ref{};
  double v_y{};
  double r{};
  double alpha_f{};
  double alpha_r{};
  double F_yf_cmd{};
  double delta_cmd{};
  double r_max{};
  double alpha_r_peak{};
  double F_yf_limit{};
  std::string solver_status{};
  double margin_row_max{};
  double solve_time_ms{};

  bool operator==(const TraceRecord&) const = default;
};

inline constexpr const char* kTraceHeader =
  "t,v_x,v_y_ref,r_ref,delta_ref,v_y,r,alpha_f,alpha_r,F_yf_cmd,delta_cmd,r_max,alpha_r_peak,F_yf_limit,"
  "solver_status,margin_row_max,solve_time_ms";

namespace detail {

inline std::string format_double(double v)
{
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s)
{
  double v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("csv: not a number: '" + s + "'");
  }
  return v;
}

}  // namespace detail

struct SimTrace
{
  std::vector<TraceRecord> rows;
  std::vector<StepDiagnostics> diagnostics;  ///< in-memory only

  /// solve_time_ms is written as 0 unless requested, so traces stay bit-reproducible.
  void write_csv(std::ostream& os, bool with_solve_time = false) const
  {
    os << kTraceHeader << '\n';
    for (const auto& r : rows) {
      const double fields[] = {r.t,       r.v_x,       r.v_y_ref, r.r_ref, r.delta_ref,    r.v_y,      r.r,
                               r.alpha_f, r.alpha_r,   r.F_yf_cmd, r.delta_cmd, r.r_max, r.alpha_r_peak,
                               r.F_yf_limit};
      for (double f : fields) { os << detail::format_double(f) << ','; }
      os << r.solver_status << ',' << detail::format_double(r.margin_row_max) << ','
         << detail::format_double(with_solve_time ? r.solve_time_ms : 0.0) << '\n';
    }
  }

  static SimTrace read_csv(std::istream& is)
  {
    std::string line;
    if (!std::getline(is, line) || line != kTraceHeader) { throw std::invalid_argument("csv: unexpected trace header"); }
    SimTrace tr;
    while (std::getline(is, line)) {
      if (line.empty()) { continue; }
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) { cells.push_back(cell); }
      if (cells.size() != 17) { throw std::invalid_argument("csv: expected 17 fields, got " + std::to_string(cells.size())); }
      TraceRecord r;
      double* num[] = {&r.t,       &r.v_x,     &r.v_y_ref,  &r.r_ref,     &r.delta_ref, &r.v_y,         &r.r,
                       &r.alpha_f, &r.alpha_r, &r.F_yf_cmd, &r.delta_cmd, &r.r_max,     &r.alpha_r_peak, &r.F_yf_limit};
      for (size_t i = 0; i < 14; ++i) { *num[i] = detail::parse_double(cells[i]); }
      r.solver_status = cells[14];
      r.margin_row_max = detail::parse_double(cells[15]);
      r.solve_time_ms = detail::parse_double(cells[16]);
      tr.rows.push_back(std::move(r));
    }
    return tr;
  }
};

/**
 * Closed loop: RK4 plant at the plant step, steering held over each control period,
 * tire parameters redrawn every resample period, speed following the scenario schedule.
 */
[[nodiscard]] inline SimTrace run_closed_loop(const ScenarioConfig& sc, const VehicleParams& vp,
                                              GcmpcController& ctl)
{
  const double Ts = ctl.config().sampling_time;
  sc.validate(Ts);
  const int sub = sc.substeps(Ts, "sampling time");
  const int resample = sc.substeps(sc.resample_period, "resample period");
  const auto steps = std::lround(sc.duration / Ts);
  const double h = sc.plant_step;

  ctl.reset();
  DriverReference ref(vp, Ts);
  DisturbanceSampler sampler(sc.seed);
  PlantState plant;
  long plant_index = 0;

  SimTrace trace;
  trace.rows.reserve(static_cast<size_t>(steps) + 1);
  trace.diagnostics.reserve(static_cast<size_t>(steps) + 1);
  for (long k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * Ts;
    const double v_x = sc.speed(t);
    const double delta_ref = sc.hand_wheel(t);
    Vec6 x;
    x << ref.state()(0), ref.state()(1), delta_ref, plant.v_y, plant.r, 1.0;
    const auto out = ctl.step(x, v_x, sc.acceleration);

    TraceRecord rec;
    rec.t = t;
    rec.v_x = v_x;
    rec.v_y_ref = x(0);
    rec.r_ref = x(1);
    rec.delta_ref = delta_ref;
    rec.v_y = plant.v_y;
    rec.r = plant.r;
    const auto slip = plant_slips(vp, plant.v_y, plant.r, out.delta_cmd, v_x);
    rec.alpha_f = slip.front;
    rec.alpha_r = slip.rear;
    rec.F_yf_cmd = out.F_yf_cmd;
    rec.delta_cmd = out.delta_cmd;
    rec.r_max = ctl.yaw_rate_limit(v_x);
    rec.alpha_r_peak = ctl.rear_slip_limit();
    rec.F_yf_limit = ctl.force_limit();
    rec.solver_status = out.diag.status;
    rec.margin_row_max = out.diag.margin_row_max;
    rec.solve_time_ms = out.diag.solve_time_ms;
    trace.rows.push_back(std::move(rec));
    trace.diagnostics.push_back(out.diag);
    if (k == steps) { break; }

    for (int j = 0; j < sub; ++j, ++plant_index) {
      if (plant_index % resample == 0) {
        plant.front = sampler.draw(vp.front);
        plant.rear = sampler.draw(vp.rear);
      }
      rk4_step(vp, plant, out.delta_cmd, t + j * h, h, sc);
    }
    ref.advance(delta_ref, v_x);
  }
  return trace;
}

/// Per-run maxima and envelope-violation counts.
struct RunSummary
{
  std::uint64_t seed{};
  double max_abs_r{};
  double max_r_ratio{};  ///< max |r| / r_max(v_x)
  double max_abs_alpha_r{};
  double max_abs_slip_ratio{};  ///< max |v_y - b r| / (v_x tan alpha_peak)
  double max_abs_F_yf{};
  int yaw_violations{};
  int slip_violations{};
  int force_violations{};
  int infeasible_steps{};
  int max_iter_steps{};
  int fallback_steps{};
  double max_kkt_residual{};
  double median_solve_ms{};

  [[nodiscard]] int violations() const { return yaw_violations + slip_violations + force_violations; }
};

[[nodiscard]] inline RunSummary summarize(const SimTrace& tr, const VehicleParams& vp, std::uint64_t seed,
                                          double tol = 1e-6)
{
  RunSummary s;
  s.seed = seed;
  std::vector<double> times;
  for (const auto& r : tr.rows) {
    const double slip = std::abs(r.v_y - vp.dist_rear * r.r);
    const double slip_bound = r.v_x * std::tan(r.alpha_r_peak);
    s.max_abs_r = std::max(s.max_abs_r, std::abs(r.r));
    s.max_r_ratio = std::max(s.max_r_ratio, std::abs(r.r) / r.r_max);
    s.max_abs_alpha_r = std::max(s.max_abs_alpha_r, std::abs(r.alpha_r));
    s.max_abs_slip_ratio = std::max(s.max_abs_slip_ratio, slip / slip_bound);
    s.max_abs_F_yf = std::max(s.max_abs_F_yf, std::abs(r.F_yf_cmd));
    if (std::abs(r.r) > r.r_max + tol) { ++s.yaw_violations; }
    if (slip > slip_bound + tol) { ++s.slip_violations; }
    if (std::abs(r.F_yf_cmd) > r.F_yf_limit + tol) { ++s.force_violations; }
    if (r.solver_status == "infeasible") { ++s.infeasible_steps; }
    if (r.solver_status == "max_iter") { ++s.max_iter_steps; }
    if (r.solver_status == "fallback") { ++s.fallback_steps; }
    times.push_back(r.solve_time_ms);
  }
  for (const auto& d : tr.diagnostics) {
    if (d.status == "optimal") { s.max_kkt_residual = std::max(s.max_kkt_residual, d.residuals.max()); }
  }
  if (!times.empty()) {
    std::nth_element(times.begin(), times.begin() + static_cast<long>(times.size() / 2), times.end());
    s.median_solve_ms = times[times.size() / 2];
  }
  return s;
}

}  // namespace gcmpc
