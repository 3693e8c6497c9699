#pragma once

#include "gcmpc/cone_solver.hpp"
#include "gcmpc/gc_synthesis.hpp"
#include "gcmpc/linalg.hpp"
#include "gcmpc/parallel.hpp"
#include "gcmpc/safety_envelope.hpp"
#include "gcmpc/tire_models.hpp"
#include "gcmpc/vehicle_models.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gcmpc {

/// Operating-point grid of the gain schedule. Explicit lists override the ranges.
struct ScheduleGrid
{
  double v_min{9.0};
  double v_max{31.0};
  double v_step{0.5};
  int alpha_points{21};
  std::vector<double> speeds{};
  std::vector<double> slips{};
};

struct ControllerConfig
{
  int horizon{15};
  double w_vy{1.0};     ///< s^2/m^2
  double w_r{1e6};      ///< s^2/rad^2
  double w_fyf{1e-10};  ///< 1/N^2
  double sampling_time{0.02};
  ScheduleGrid grid{};
  bool margin_linearization{false};
  EnvelopeOptions envelope{};
  SynthesisOptions synthesis{};
  SolverSettings solver{};
  std::string dump_directory{};  ///< when set, programs that fail to solve are dumped here

  void validate() const
  {
    if (horizon < 1) { throw std::invalid_argument("controller: horizon must be at least 1"); }
    if (!(w_vy > 0.0) || !(w_r > 0.0) || !(w_fyf > 0.0)) {
      throw std::invalid_argument("controller: weights must be positive");
    }
    if (!(sampling_time > 0.0)) { throw std::invalid_argument("controller: sampling time must be positive"); }
    if (grid.speeds.empty()) {
      if (!(grid.v_min > 0.0) || grid.v_max < grid.v_min || !(grid.v_step > 0.0)) {
        throw std::invalid_argument("controller: speed grid must satisfy 0 < v_min <= v_max, v_step > 0");
      }
    }
    if (grid.slips.empty() && grid.alpha_points < 1) {
      throw std::invalid_argument("controller: alpha_points must be at least 1");
    }
  }
};

struct CostMatrices
{
  Mat6 Q;
  double R{};
};

/// Difference-form tracking cost: W_vy (v_y_ref - v_y)^2 + W_r (r_ref - r)^2, R = W_Fyf.
[[nodiscard]] inline CostMatrices build_cost(const ControllerConfig& cfg)
{
  Vec6 dv = Vec6::Zero();
  dv(0) = 1.0;
  dv(3) = -1.0;
  Vec6 dr = Vec6::Zero();
  dr(1) = 1.0;
  dr(4) = -1.0;
  CostMatrices c;
  c.Q = cfg.w_vy * dv * dv.transpose() + cfg.w_r * dr * dr.transpose();
  c.R = cfg.w_fyf;
  return c;
}

/// Delta_ref and the unit state are exogenous: nothing drives them and they never decay.
inline SynthesisOptions schedule_synthesis_options(const ControllerConfig& cfg)
{
  SynthesisOptions o = cfg.synthesis;
  o.exogenous_states = {2, 5};
  return o;
}

struct ScheduleEntry
{
  UncertainAffineSystem sys;
  GcGains<6> gains;
  MarginCoefficients<6, 2, 3> margins;
  EnvelopeConstraints constraints;
};

/// Front and rear force envelopes of one vehicle.
struct TireEnvelopes
{
  ForceEnvelope front;
  ForceEnvelope rear;
};

[[nodiscard]] inline ScheduleEntry build_entry(const VehicleParams& vp, const TireEnvelopes& env,
                                               const ControllerConfig& cfg, double v_x, double alpha_r_hat,
                                               double alpha_f_hat)
{
  const auto cost = build_cost(cfg);
  ScheduleEntry e;
  e.sys = augmented_system(vp, env.front, env.rear, v_x, alpha_r_hat, alpha_f_hat, cfg.sampling_time);
  const auto d = e.sys.discrete();
  e.gains = synthesize(d, cost.Q, cost.R, cfg.horizon, schedule_synthesis_options(cfg));
  e.margins = margin_coefficients(d, e.gains);
  e.constraints = build_constraints(vp, env.front, env.rear, vp.front.nominal.friction, v_x, cfg.envelope);
  return e;
}

class ScheduledTable
{
public:
  std::vector<double> speeds;
  std::vector<double> slips;
  double alpha_f_hat{};
  std::vector<ScheduleEntry> entries;  ///< speed-major

  [[nodiscard]] const ScheduleEntry& at(size_t iv, size_t ia) const { return entries.at(iv * slips.size() + ia); }

  [[nodiscard]] std::pair<size_t, size_t> nearest(double v_x, double alpha) const
  {
    return {nearest_index(speeds, v_x), nearest_index(slips, alpha)};
  }

  [[nodiscard]] const ScheduleEntry& lookup(double v_x, double alpha) const
  {
    const auto [iv, ia] = nearest(v_x, alpha);
    return at(iv, ia);
  }

  [[nodiscard]] bool covers(double v_x, double alpha) const
  {
    return v_x >= speeds.front() && v_x <= speeds.back() && alpha >= slips.front() && alpha <= slips.back();
  }

  /// Binary cache: systems and gains verbatim; margins and constraints are rebuilt on load.
  void write(std::ostream& os, std::uint64_t key) const
  {
    os.write(kMagic, sizeof(kMagic));
    put(os, key);
    put(os, static_cast<std::uint64_t>(speeds.size()));
    put(os, static_cast<std::uint64_t>(slips.size()));
    put(os, alpha_f_hat);
    for (double v : speeds) { put(os, v); }
    for (double a : slips) { put(os, a); }
    for (const auto& e : entries) {
      const auto& s = e.sys;
      put_mat(os, s.Abar);
      put_mat(os, s.B);
      put_mat(os, s.H);
      put_mat(os, s.E_a);
      put_mat(os, s.E_b);
      put_mat(os, s.F);
      put_mat(os, s.G);
      put_mat(os, s.Hd);
      put(os, s.sampling_time);
      put(os, s.lin.v_x);
      put(os, s.lin.alpha_r_hat);
      put(os, s.lin.alpha_f_hat);
      const auto& g = e.gains;
      put(os, g.epsilon);
      put(os, static_cast<std::uint64_t>(g.horizon));
      put(os, static_cast<std::uint64_t>(g.fixed_point_iterations));
      for (const auto& m : g.S) { put_mat(os, m); }
      for (const auto& m : g.X) { put_mat(os, m); }
      for (const auto& k : g.K) { put_mat(os, k); }
      for (double r : g.Rbar) { put(os, r); }
      put_mat(os, g.K_stationary);
    }
    if (!os) { throw std::runtime_error("gain table: write failed"); }
  }

  /// Returns nullopt on a key or format mismatch.
  static std::optional<ScheduledTable> read(std::istream& is, std::uint64_t key, const VehicleParams& vp,
                                            const TireEnvelopes& env, const ControllerConfig& cfg)
  {
    char magic[sizeof(kMagic)] = {};
    is.read(magic, sizeof(kMagic));
    if (!is || std::string(magic, sizeof(magic)) != std::string(kMagic, sizeof(kMagic))) { return std::nullopt; }
    if (get<std::uint64_t>(is) != key) { return std::nullopt; }
    ScheduledTable t;
    const auto nv = get<std::uint64_t>(is);
    const auto na = get<std::uint64_t>(is);
    if (!is || nv == 0 || na == 0 || nv * na > 10'000'000) { return std::nullopt; }
    t.alpha_f_hat = get<double>(is);
    t.speeds.resize(nv);
    t.slips.resize(na);
    for (auto& v : t.speeds) { v = get<double>(is); }
    for (auto& a : t.slips) { a = get<double>(is); }
    t.entries.resize(nv * na);
    for (auto& e : t.entries) {
      auto& s = e.sys;
      get_mat(is, s.Abar);
      get_mat(is, s.B);
      get_mat(is, s.H);
      get_mat(is, s.E_a);
      get_mat(is, s.E_b);
      get_mat(is, s.F);
      get_mat(is, s.G);
      get_mat(is, s.Hd);
      s.sampling_time = get<double>(is);
      s.lin.v_x = get<double>(is);
      s.lin.alpha_r_hat = get<double>(is);
      s.lin.alpha_f_hat = get<double>(is);
      auto& g = e.gains;
      g.epsilon = get<double>(is);
      g.horizon = static_cast<int>(get<std::uint64_t>(is));
      g.fixed_point_iterations = static_cast<int>(get<std::uint64_t>(is));
      if (!is || g.horizon != cfg.horizon) { return std::nullopt; }
      const auto n = static_cast<size_t>(g.horizon);
      g.S.resize(n + 1);
      g.X.resize(n + 1);
      g.K.resize(n);
      g.Rbar.resize(n);
      for (auto& m : g.S) { get_mat(is, m); }
      for (auto& m : g.X) { get_mat(is, m); }
      for (auto& k : g.K) { get_mat(is, k); }
      for (auto& r : g.Rbar) { r = get<double>(is); }
      get_mat(is, g.K_stationary);
      if (!is) { return std::nullopt; }
      e.margins = margin_coefficients(s.discrete(), g);
      e.constraints =
        build_constraints(vp, env.front, env.rear, vp.front.nominal.friction, s.lin.v_x, cfg.envelope);
    }
    return t;
  }

private:
  static constexpr char kMagic[8] = {'G', 'C', 'M', 'P', 'C', 'T', 'B', '1'};

  static size_t nearest_index(const std::vector<double>& g, double x)
  {
    size_t best = 0;
    for (size_t i = 1; i < g.size(); ++i) {
      if (std::abs(g[i] - x) < std::abs(g[best] - x)) { best = i; }
    }
    return best;
  }

  template <typename T>
  static void put(std::ostream& os, const T& v)
  {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <typename T>
  static T get(std::istream& is)
  {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }
  template <typename M>
  static void put_mat(std::ostream& os, const M& m)
  {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) { put(os, m(i, j)); }
    }
  }
  template <typename M>
  static void get_mat(std::istream& is, M& m)
  {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) { m(i, j) = get<double>(is); }
    }
  }
};

[[nodiscard]] inline std::vector<double> schedule_speeds(const ScheduleGrid& grid)
{
  if (!grid.speeds.empty()) { return grid.speeds; }
  std::vector<double> v;
  const int n = static_cast<int>(std::floor((grid.v_max - grid.v_min) / grid.v_step + 1e-9)) + 1;
  for (int i = 0; i < n; ++i) { v.push_back(grid.v_min + i * grid.v_step); }
  return v;
}

[[nodiscard]] inline std::vector<double> schedule_slips(const ScheduleGrid& grid, double alpha_peak)
{
  if (!grid.slips.empty()) { return grid.slips; }
  if (grid.alpha_points == 1) { return {0.0}; }
  std::vector<double> a(static_cast<size_t>(grid.alpha_points));
  const int n = grid.alpha_points;
  for (int i = 0; i < n; ++i) { a[i] = alpha_peak * (2.0 * i - (n - 1)) / (n - 1); }
  return a;
}

/**
 * Builds every grid entry. E_b uses the front slip with the largest relative force
 * deviation, so one table serves every front operating point.
 */
[[nodiscard]] inline ScheduledTable precompute_table(const VehicleParams& vp, const TireEnvelopes& env,
                                                     const ControllerConfig& cfg, unsigned workers = 0)
{
  cfg.validate();
  ScheduledTable t;
  t.speeds = schedule_speeds(cfg.grid);
  t.slips = schedule_slips(cfg.grid, rear_peak_slip(env.rear, cfg.envelope.rear_peak));
  t.alpha_f_hat = worst_front_linearization_slip(env.front);
  t.entries.resize(t.speeds.size() * t.slips.size());
  parallel_for(
    t.entries.size(),
    [&](size_t idx) {
      const double v = t.speeds[idx / t.slips.size()];
      const double a = t.slips[idx % t.slips.size()];
      try {
        t.entries[idx] = build_entry(vp, env, cfg, v, a, t.alpha_f_hat);
      } catch (const SynthesisFailure& e) {
        std::ostringstream msg;
        msg << e.what() << " at v_x = " << v << ", alpha_r_hat = " << a;
        throw SynthesisFailure(msg.str());
      }
    },
    workers);
  return t;
}

struct SteeringCommand
{
  double delta{};
  double alpha_f{};
  bool clamped{false};
};

/// delta = atan((v_y + a r) / v_x) - F_bar^{-1}(F_yf), inverse restricted to the monotone range.
[[nodiscard]] inline SteeringCommand steering_from_force(const ForceEnvelope& env_f, double dist_front,
                                                         double v_y, double r, double v_x, double F_yf)
{
  require_positive_speed(v_x);
  const auto inv = inverse_mean_force(env_f, F_yf);
  SteeringCommand s;
  s.alpha_f = inv.alpha;
  s.clamped = inv.clamped;
  s.delta = std::atan((v_y + dist_front * r) / v_x) - inv.alpha;
  return s;
}

/// Driver intent: linear bicycle at the current speed driven by the hand-wheel angle.
class DriverReference
{
public:
  DriverReference(VehicleParams vp, double sampling_time) : vp_(std::move(vp)), ts_(sampling_time) {}

  [[nodiscard]] const Vec2& state() const { return x_; }
  void reset() { x_.setZero(); }

  void advance(double delta_ref, double v_x)
  {
    const auto lin = linear_bicycle(vp_, v_x);
    const auto d = discretize<2, 1>(lin.A, lin.B, Eigen::Vector2d::Zero(), ts_);
    x_ = d.F * x_ + d.G * delta_ref;
  }

private:
  VehicleParams vp_;
  double ts_;
  Vec2 x_{Vec2::Zero()};
};

/// Condensed per-step program plus the bookkeeping needed to read results back.
struct StepProgram
{
  ConeProgram program;
  std::vector<double> row_bound;  ///< o_i at the row's step (before the x0 shift)
  std::vector<int> row_step;
  std::vector<int> row_index;
  double F_yf_max{};
};

struct StepDiagnostics
{
  std::string status{"fallback"};  ///< optimal | infeasible | max_iter | fallback
  bool fallback{false};
  KktResiduals residuals{};
  int iterations{};
  bool presolved{false};
  double margin_row_max{};
  int active_constraints{};
  bool steering_clamped{false};
  double alpha_r_hat{};
  size_t speed_index{};
  size_t slip_index{};
  double v0{};
  double objective{};
  double solve_time_ms{};
};

struct ControlOutput
{
  double F_yf_cmd{};
  double delta_cmd{};
  double alpha_f_cmd{};
  StepDiagnostics diag{};
};

/**
 * Gain-scheduled guaranteed-cost MPC. Each step: look up (v_x, rear slip), condense
 * x_{k+1} = (F - G K_k) x_k + G v_k over the horizon, solve for the offsets v with the
 * margin-tightened envelope rows, and apply F_yf = -K_0 x + v_0.
 */
class GcmpcController
{
public:
  GcmpcController(std::shared_ptr<const ScheduledTable> table, VehicleParams vp, TireEnvelopes env,
                  ControllerConfig cfg)
    : table_(std::move(table)), vp_(std::move(vp)), env_(std::move(env)), cfg_(std::move(cfg))
  {
    if (!table_ || table_->entries.empty()) { throw std::invalid_argument("controller: empty gain table"); }
    cfg_.validate();
    mu_ = vp_.front.nominal.friction;
    alpha_peak_ = rear_peak_slip(env_.rear, cfg_.envelope.rear_peak);
    F_max_ = mu_ * normal_loads(vp_).front;
  }

  [[nodiscard]] const ScheduledTable& table() const { return *table_; }
  [[nodiscard]] const ControllerConfig& config() const { return cfg_; }
  [[nodiscard]] const TireEnvelopes& envelopes() const { return env_; }
  [[nodiscard]] double force_limit() const { return F_max_; }
  [[nodiscard]] double rear_slip_limit() const { return alpha_peak_; }

  [[nodiscard]] double yaw_rate_limit(double v_x) const
  {
    return max_yaw_rate(vp_, mu_, v_x, cfg_.envelope.yaw_limit_gravity);
  }

  void reset() { previous_.reset(); }

  [[nodiscard]] double rear_slip(const Vec6& x, double v_x) const
  {
    return std::atan((x(3) - vp_.dist_rear * x(4)) / v_x);
  }

  /// Program for state x at speed v_x; row bounds follow the speed preview v_x + k T_s v_x_rate.
  [[nodiscard]] StepProgram build_program(const ScheduleEntry& e, const Vec6& x0, double v_x,
                                          double v_x_rate = 0.0,
                                          const Eigen::VectorXd* linearize_at = nullptr) const
  {
    const int N = cfg_.horizon;
    const auto& g = e.gains;
    const auto& mc = e.margins;
    const auto& sys = e.sys;
    const Mat6& M = e.constraints.M;
    const Vec6& Nv = e.constraints.N;

    std::vector<Mat6> Phi(static_cast<size_t>(N) + 1);
    std::vector<Eigen::Matrix<double, 6, Eigen::Dynamic>> Gam(static_cast<size_t>(N) + 1);
    Phi[0].setIdentity();
    Gam[0] = Eigen::Matrix<double, 6, Eigen::Dynamic>::Zero(6, N);
    for (int k = 0; k < N; ++k) {
      const Mat6 Acl = sys.F - sys.G * g.K[k];
      Phi[k + 1] = Acl * Phi[k];
      Gam[k + 1] = Acl * Gam[k];
      Gam[k + 1].col(k) += sys.G;
    }

    StepProgram sp;
    sp.F_yf_max = F_max_;
    const int rows = 6 * N;
    ConeProgram& p = sp.program;
    p.P = Eigen::MatrixXd::Zero(N, N);
    for (int k = 0; k < N; ++k) { p.P(k, k) = 2.0 * g.Rbar[k]; }
    p.q = Eigen::VectorXd::Zero(N);
    p.A_in = Eigen::MatrixXd::Zero(rows, N);
    p.b_in = Eigen::VectorXd::Zero(rows);
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(rows, N);
    int r = 0;
    for (int k = 0; k <= N; ++k) {
      const double vk = std::max(v_x + k * cfg_.sampling_time * v_x_rate, 1e-3);
      const Vec6 o = constraint_bounds(vk, alpha_peak_, yaw_rate_limit(vk), F_max_);
      for (int i = 0; i < 6; ++i) {
        const bool input_row = Nv(i) != 0.0;
        if ((!input_row && k == 0) || (input_row && k == N)) { continue; }
        const Row6 a_row = k < N ? Row6(M.row(i) - Nv(i) * g.K[k]) : Row6(M.row(i));
        p.A_in.row(r) = a_row * Gam[k];
        if (input_row) { p.A_in(r, k) += Nv(i); }
        p.b_in(r) = o(i) - a_row.dot(Phi[k] * x0);
        const auto beta = margin_weights(mc, a_row, k);
        for (int l = 0; l < k; ++l) { T(r, l) = beta[l]; }
        sp.row_bound.push_back(o(i));
        sp.row_step.push_back(k);
        sp.row_index.push_back(i);
        ++r;
      }
    }

    std::vector<SocLink> links(static_cast<size_t>(N));
    for (int l = 0; l < N; ++l) {
      links[l].D = mc.E1[l] * Gam[l];
      links[l].D.col(l) += sys.E_b;
      links[l].d = mc.E1[l] * (Phi[l] * x0);
    }

    if (linearize_at) {
      for (int l = 0; l < N; ++l) {
        const double phi = (links[l].D * *linearize_at + links[l].d).norm();
        p.b_in -= T.col(l) * phi;
      }
      p.T_in = Eigen::MatrixXd::Zero(rows, 0);
      return sp;
    }
    // Links that no row depends on are dropped.
    std::vector<int> keep;
    for (int l = 0; l < N; ++l) {
      if (T.col(l).maxCoeff() > 0.0) { keep.push_back(l); }
    }
    p.T_in = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(keep.size()));
    for (size_t j = 0; j < keep.size(); ++j) {
      p.T_in.col(static_cast<Eigen::Index>(j)) = T.col(keep[j]);
      p.links.push_back(std::move(links[keep[j]]));
    }
    return sp;
  }

  /// One control step for augmented state x = [v_y_ref, r_ref, delta_ref, v_y, r, 1].
  ControlOutput step(const Vec6& x, double v_x, double v_x_rate = 0.0)
  {
    const auto t0 = std::chrono::steady_clock::now();
    ControlOutput out;
    auto& diag = out.diag;
    const int N = cfg_.horizon;
    diag.alpha_r_hat = rear_slip(x, v_x);
    const auto [iv, ia] = table_->nearest(v_x, diag.alpha_r_hat);
    diag.speed_index = iv;
    diag.slip_index = ia;
    const ScheduleEntry& e = table_->at(iv, ia);
    const Row6& K0 = e.gains.K[0];

    Eigen::VectorXd warm = Eigen::VectorXd::Zero(N);
    if (previous_) { warm.head(N - 1) = previous_->tail(N - 1); }

    double u = 0.0;
    bool solved = false;
    try {
      const StepProgram sp =
        build_program(e, x, v_x, v_x_rate, cfg_.margin_linearization ? &warm : nullptr);
      const SolveResult res = solve(sp.program, warm, cfg_.solver);
      diag.status = to_string(res.status);
      diag.residuals = res.residuals;
      diag.iterations = res.iterations;
      diag.presolved = res.presolved;
      if (res.status != SolveStatus::Optimal && !cfg_.dump_directory.empty()) {
        std::ofstream dump(cfg_.dump_directory + "/program_" + std::to_string(dump_count_++) + "_" +
                           diag.status + ".txt");
        dump_program(sp.program, dump);
      }
      if (res.status == SolveStatus::Optimal && res.z.allFinite()) {
        solved = true;
        diag.v0 = res.z(0);
        diag.objective = res.objective;
        u = -K0.dot(x) + res.z(0);
        previous_ = res.z;
        summarize_rows(sp, res, diag);
      }
    } catch (const std::exception&) {
      diag.status = "fallback";
    }
    if (!solved) {
      diag.fallback = true;
      previous_.reset();
      u = std::clamp(-K0.dot(x), -F_max_, F_max_);
      diag.v0 = u + K0.dot(x);
    }
    out.F_yf_cmd = u;
    const auto steer = steering_from_force(env_.front, vp_.dist_front, x(3), x(4), v_x, u);
    out.delta_cmd = steer.delta;
    out.alpha_f_cmd = steer.alpha_f;
    diag.steering_clamped = steer.clamped;
    diag.solve_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

private:
  static void summarize_rows(const StepProgram& sp, const SolveResult& res, StepDiagnostics& diag)
  {
    const ConeProgram& p = sp.program;
    Eigen::VectorXd margins = Eigen::VectorXd::Zero(p.num_inequalities());
    if (p.num_links() > 0) {
      Eigen::VectorXd t(p.num_links());
      for (int j = 0; j < p.num_links(); ++j) { t(j) = (p.links[j].D * res.z + p.links[j].d).norm(); }
      margins = p.T_in * t;
    }
    const Eigen::VectorXd slack = p.b_in - p.A_in * res.z - margins;
    diag.margin_row_max = 0.0;
    diag.active_constraints = 0;
    for (int i = 0; i < p.num_inequalities(); ++i) {
      const double o = sp.row_bound[static_cast<size_t>(i)];
      if (o > 0.0) { diag.margin_row_max = std::max(diag.margin_row_max, margins(i) / o); }
      if (slack(i) <= 1e-6 * std::max(1.0, o)) { ++diag.active_constraints; }
    }
  }

  std::shared_ptr<const ScheduledTable> table_;
  VehicleParams vp_;
  TireEnvelopes env_;
  ControllerConfig cfg_;
  double mu_{};
  double alpha_peak_{};
  double F_max_{};
  std::optional<Eigen::VectorXd> previous_;
  int dump_count_{0};
};

}  // namespace gcmpc
