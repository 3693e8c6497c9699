// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include "gcmpc/config.hpp"
#include "gcmpc/parallel.hpp"
#include "gcmpc/sim_harness.hpp"
#include "gcmpc/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

using namespace gcmpc;

namespace {

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::string& detail, double seconds)
{
  std::printf("%s %d %s: %s [%.1f s]\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str(), seconds);
  std::fflush(stdout);
  failures += pass ? 0 : 1;
}

void report(int id, const std::string& title, const CheckResult& r)
{
  report(id, title, r.pass, r.detail, r.seconds);
}

double since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Campaign
{
  std::vector<RunSummary> summaries;
  std::vector<double> step_ms;
  SimTrace default_trace;
  double seconds{};
};

Campaign run_campaign(const ToolConfig& c, int runs)
{
  const auto t0 = std::chrono::steady_clock::now();
  const auto vp = c.vehicle();
  const auto env = c.envelopes();
  const auto table = std::make_shared<const ScheduledTable>(precompute_table(vp, env, c.controller));
  Campaign out;
  out.summaries.resize(static_cast<size_t>(runs));
  std::vector<std::vector<double>> times(static_cast<size_t>(runs));
  parallel_for(static_cast<size_t>(runs), [&](size_t i) {
    ScenarioConfig sc = c.resolved_scenario();
    sc.seed = c.scenario.seed + i;
    GcmpcController ctl(table, vp, env, c.controller);
    SimTrace tr = run_closed_loop(sc, vp, ctl);
    out.summaries[i] = summarize(tr, vp, sc.seed);
    for (const auto& r : tr.rows) { times[i].push_back(r.solve_time_ms); }
    if (i == 0) { out.default_trace = std::move(tr); }
  });
  for (auto& t : times) { out.step_ms.insert(out.step_ms.end(), t.begin(), t.end()); }
  out.seconds = since(t0);
  return out;
}

}  // namespace

int main()
{
  const ToolConfig cfg;
  std::cout << "acceptance gate (default configuration, 200 seeded runs)\n" << std::flush;

  const auto campaign = run_campaign(cfg, 200);
  {
    int violations = 0, worst_seed = -1;
    double worst_r = 0.0, worst_slip = 0.0, worst_force = 0.0;
    for (const auto& s : campaign.summaries) {
      violations += s.violations();
      if (s.violations() > 0 && worst_seed < 0) { worst_seed = static_cast<int>(s.seed); }
      worst_r = std::max(worst_r, s.max_r_ratio);
      worst_slip = std::max(worst_slip, s.max_abs_slip_ratio);
      worst_force = std::max(worst_force, s.max_abs_F_yf);
    }
    std::ostringstream d;
    d << violations << " violations over " << campaign.summaries.size() << " runs; max |r|/r_max " << worst_r
      << ", max rear-slip ratio " << worst_slip << ", max |F_yf| " << worst_force << " N";
    if (worst_seed >= 0) { d << "; first violating seed " << worst_seed; }
    report(1, "envelope safety", violations == 0 && campaign.seconds < 300.0, d.str(), campaign.seconds);
  }
  {
    double best = 0.0, at = 0.0, overall = 0.0, overall_at = 0.0;
    for (const auto& r : campaign.default_trace.rows) {
      const double ratio = std::abs(r.r) / r.r_max;
      if (ratio > overall) {
        overall = ratio;
        overall_at = r.t;
      }
      if (r.t >= 5.0 && r.t <= 12.0 && ratio > best) {
        best = ratio;
        at = r.t;
      }
    }
    std::ostringstream d;
    d << "max |r|/r_max in [5, 12] s is " << best << " at t = " << at << " s (need >= 0.98); run maximum "
      << overall << " at t = " << overall_at << " s";
    report(2, "envelope activity", best >= 0.98, d.str(), 0.0);
  }
  report(3, "guaranteed-cost bound", check_cost_bound());
  report(4, "zero-uncertainty reduction", check_zero_uncertainty());
  report(5, "tire-model fidelity", check_tire_fidelity());
  report(6, "discretization oracle", check_discretization());
  report(7, "margin recursion", check_margin_recursion());
  {
    const auto solver = check_solver();
    double kkt = 0.0;
    int infeasible = 0, max_iter = 0;
    for (const auto& s : campaign.summaries) {
      kkt = std::max(kkt, s.max_kkt_residual);
      infeasible += s.infeasible_steps;
      max_iter += s.max_iter_steps;
    }
    std::ostringstream d;
    d << solver.detail << "; closed-loop max KKT residual " << kkt << " (need <= 1e-6), " << max_iter
      << " iteration-limit steps, " << infeasible << " infeasible steps handled by the fallback law";
    report(8, "solver correctness", solver.pass && kkt <= 1e-6 && max_iter == 0, d.str(), solver.seconds);
  }
  {
    auto t = campaign.step_ms;
    std::nth_element(t.begin(), t.begin() + static_cast<long>(t.size() / 2), t.end());
    const double median = t[t.size() / 2];
    std::ostringstream d;
    d << "median control step " << median << " ms over " << t.size() << " steps (need < "
      << 1e3 * cfg.controller.sampling_time << " ms)";
    report(9, "real-time budget", median < 1e3 * cfg.controller.sampling_time, d.str(), 0.0);
  }

  std::cout << (failures == 0 ? "all criteria pass" : std::to_string(failures) + " criteria failed") << "\n";
  return failures == 0 ? 0 : 1;
}
