#pragma once

#include "gcmpc/config.hpp"
#include "gcmpc/controller.hpp"
#include "gcmpc/parallel.hpp"
#include "gcmpc/sim_harness.hpp"
#include "gcmpc/verify.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace gcmpc::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { Success = 0, Failure = 1, ConfigFailure = 2, PropertyFailure = 3 };

struct Options
{
  std::string config_path{};
  std::optional<int> seeds{};
  std::optional<std::uint64_t> seed_base{};
  std::optional<std::string> out{};
  bool no_cache{false};
};

/// Config file (or defaults when no path is given) with the command-line overrides applied.
inline ToolConfig resolve_config(const Options& opt)
{
  ToolConfig c = opt.config_path.empty() ? ToolConfig{} : load_config(opt.config_path);
  if (opt.out) { c.output_directory = *opt.out; }
  return c;
}

inline std::string hex_key(std::uint64_t key)
{
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << key;
  return os.str();
}

inline std::filesystem::path prepare_directory(const std::string& dir)
{
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) { throw std::runtime_error("cannot create directory '" + dir + "': " + ec.message()); }
  return p;
}

inline std::ofstream open_output(const std::filesystem::path& path)
{
  std::ofstream f(path);
  if (!f) { throw std::runtime_error("cannot write '" + path.string() + "'"); }
  return f;
}

/// Seeds recorded in a manifest's [manifest] section, if the file has one.
inline std::vector<std::uint64_t> manifest_seeds(const std::string& path)
{
  if (path.empty()) { return {}; }
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error&) {
    return {};
  }
  const auto text = tree.get_optional<std::string>("manifest.seeds");
  if (!text) { return {}; }
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(*text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("manifest.seeds", "not a seed list: '" + *text + "'");
    }
  }
  return seeds;
}

/// Seeds from --seeds/--seed-base, else from a manifest, else config runs from the scenario seed.
inline std::vector<std::uint64_t> seed_list(const ToolConfig& c, const Options& opt)
{
  if (!opt.seeds && !opt.seed_base) {
    auto from_manifest = manifest_seeds(opt.config_path);
    if (!from_manifest.empty()) { return from_manifest; }
  }
  const int n = opt.seeds.value_or(c.runs);
  if (n < 1) { throw ConfigError("--seeds", "must be at least 1"); }
  const std::uint64_t base = opt.seed_base.value_or(c.scenario.seed);
  std::vector<std::uint64_t> seeds(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) { seeds[static_cast<size_t>(i)] = base + static_cast<std::uint64_t>(i); }
  return seeds;
}

inline std::string envelope_plot_script(const std::string& csv, const std::string& axle)
{
  std::ostringstream os;
  os << "import matplotlib.pyplot as plt\n"
        "import pandas as pd\n\n"
     << "d = pd.read_csv('" << csv << "')\n"
     << "fig, ax = plt.subplots(figsize=(7, 4.5))\n"
        "for v in range(8):\n"
        "    ax.plot(d['alpha'], d[f'vertex_{v}'], color='0.75', lw=0.8, label='vertices' if v == 0 else None)\n"
        "ax.plot(d['alpha'], d['F_inf'], 'b--', lw=1.2, label='F_inf')\n"
        "ax.plot(d['alpha'], d['F_sup'], 'r--', lw=1.2, label='F_sup')\n"
        "ax.plot(d['alpha'], d['F_bar'], 'k', lw=1.6, label='F_bar')\n"
        "ax.set_xlabel('slip angle [rad]')\n"
        "ax.set_ylabel('lateral force [N]')\n"
     << "ax.set_title('" << axle << " tire force envelope')\n"
     << "ax.grid(True, alpha=0.3)\n"
        "ax.legend()\n"
        "fig.tight_layout()\n"
     << "fig.savefig('envelope_" << axle << ".pdf')\n";
  return os.str();
}

/// Envelope CSV: alpha, the 8 vertex curves, then F_inf, F_bar, F_sup.
inline void write_envelope_csv(std::ostream& os, const ForceEnvelope& env)
{
  const auto verts = env.uncertainty().vertices();
  os << "alpha";
  for (int v = 0; v < 8; ++v) { os << ",vertex_" << v; }
  os << ",F_inf,F_bar,F_sup\n";
  for (double a : env.grid()) {
    os << detail::format_double(a);
    for (const auto& v : verts) { os << ',' << detail::format_double(fiala_force(v, a)); }
    os << ',' << detail::format_double(env.lower_force(a)) << ',' << detail::format_double(env.mean_force(a)) << ','
       << detail::format_double(env.upper_force(a)) << '\n';
  }
}

inline int cmd_envelope(const Options& opt, std::ostream& log)
{
  const ToolConfig c = resolve_config(opt);
  if (c.envelope_axle.empty()) {
    throw ConfigError("tires.envelope_axle", "missing mandatory key for the envelope command (front or rear)");
  }
  const auto vp = c.vehicle();
  const auto& set = c.envelope_axle == "front" ? vp.front : vp.rear;
  const ForceEnvelope env = force_envelope(set, c.envelope_grid());
  const auto dir = prepare_directory(c.output_directory);
  const std::string csv = "envelope_" + c.envelope_axle + ".csv";
  {
    auto f = open_output(dir / csv);
    write_envelope_csv(f, env);
  }
  {
    auto f = open_output(dir / ("plot_envelope_" + c.envelope_axle + ".py"));
    f << envelope_plot_script(csv, c.envelope_axle);
  }
  log << "wrote " << (dir / csv).string() << " (" << env.grid().size() << " slip points, peak slip "
      << env.peak_slip() << " rad)\n";
  return Success;
}

inline std::string slalom_plot_script(const std::vector<std::string>& traces)
{
  std::ostringstream os;
  os << "import matplotlib.pyplot as plt\n"
        "import numpy as np\n"
        "import pandas as pd\n\n"
        "traces = [";
  for (size_t i = 0; i < traces.size(); ++i) { os << (i ? ", " : "") << "'" << traces[i] << "'"; }
  os << "]\n"
        "fig, ax = plt.subplots(3, 2, figsize=(11, 9), sharex=True)\n"
        "ax = ax.ravel()\n"
        "for i, name in enumerate(traces):\n"
        "    d = pd.read_csv(name)\n"
        "    first = i == 0\n"
        "    kw = dict(lw=0.8, alpha=1.0 if first else 0.3)\n"
        "    ax[0].plot(d['t'], d['v_x'], 'k', **kw)\n"
        "    ax[1].plot(d['t'], d['v_y'], 'b', **kw)\n"
        "    ax[2].plot(d['t'], d['r'], 'b', **kw)\n"
        "    ax[3].plot(d['t'], d['alpha_r'], 'b', **kw)\n"
        "    ax[4].plot(d['t'], d['F_yf_cmd'], 'b', **kw)\n"
        "    ax[5].plot(d['t'], np.degrees(d['delta_cmd']), 'b', **kw)\n"
        "    if first:\n"
        "        ax[1].plot(d['t'], d['v_y_ref'], 'g--', lw=0.8)\n"
        "        ax[2].plot(d['t'], d['r_ref'], 'g--', lw=0.8)\n"
        "        ax[2].plot(d['t'], d['r_max'], 'r:', d['t'], -d['r_max'], 'r:')\n"
        "        ax[3].plot(d['t'], d['alpha_r_peak'], 'r:', d['t'], -d['alpha_r_peak'], 'r:')\n"
        "        ax[4].plot(d['t'], d['F_yf_limit'], 'r:', d['t'], -d['F_yf_limit'], 'r:')\n"
        "        ax[5].plot(d['t'], np.degrees(d['delta_ref']), 'g--', lw=0.8)\n"
        "labels = ['v_x [m/s]', 'v_y [m/s]', 'r [rad/s]', 'alpha_r [rad]', 'F_yf [N]', 'delta [deg]']\n"
        "for a, l in zip(ax, labels):\n"
        "    a.set_ylabel(l)\n"
        "    a.grid(True, alpha=0.3)\n"
        "ax[4].set_xlabel('t [s]')\n"
        "ax[5].set_xlabel('t [s]')\n"
        "fig.tight_layout()\n"
        "fig.savefig('slalom.pdf')\n";
  return os.str();
}

inline constexpr const char* kSummaryHeader =
  "seed,max_abs_r,max_r_ratio,max_abs_alpha_r,max_abs_slip_ratio,max_abs_F_yf,yaw_violations,slip_violations,"
  "force_violations,infeasible_steps,max_iter_steps,fallback_steps,max_kkt_residual";

inline void write_summary_row(std::ostream& os, const RunSummary& s)
{
  using detail::format_double;
  os << s.seed << ',' << format_double(s.max_abs_r) << ',' << format_double(s.max_r_ratio) << ','
     << format_double(s.max_abs_alpha_r) << ',' << format_double(s.max_abs_slip_ratio) << ','
     << format_double(s.max_abs_F_yf) << ',' << s.yaw_violations << ',' << s.slip_violations << ','
     << s.force_violations << ',' << s.infeasible_steps << ',' << s.max_iter_steps << ',' << s.fallback_steps
     << ',' << format_double(s.max_kkt_residual) << '\n';
}

/// Loads the gain table from the cache when the key matches, else builds (and stores) it.
inline std::shared_ptr<const ScheduledTable> obtain_table(const ToolConfig& c, bool use_cache, std::ostream& log)
{
  const auto vp = c.vehicle();
  const auto env = c.envelopes();
  const std::uint64_t key = table_cache_key(c);
  const std::filesystem::path path =
    std::filesystem::path(c.table_cache_directory()) / ("gain_table_" + hex_key(key) + ".bin");
  if (use_cache) {
    std::ifstream f(path, std::ios::binary);
    if (f) {
      if (auto t = ScheduledTable::read(f, key, vp, env, c.controller)) {
        log << "loaded gain table " << path.string() << "\n";
        return std::make_shared<const ScheduledTable>(std::move(*t));
      }
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto table = std::make_shared<const ScheduledTable>(precompute_table(vp, env, c.controller));
  log << "built gain table: " << table->speeds.size() << " speeds x " << table->slips.size() << " slips in "
      << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
  if (use_cache) {
    prepare_directory(c.table_cache_directory());
    std::ofstream f(path, std::ios::binary);
    if (f) {
      table->write(f, key);
    } else {
      log << "warning: cannot write gain table cache " << path.string() << "\n";
    }
  }
  return table;
}

/// Text of the run manifest: provenance fields plus the fully resolved configuration.
inline std::string manifest_text(const ToolConfig& c, const Options& opt, const std::vector<std::uint64_t>& seeds)
{
  std::ostringstream os;
  os << "[manifest]\n"
     << "config_path = " << (opt.config_path.empty() ? "(defaults)" : opt.config_path) << "\n"
     << "seeds = ";
  for (size_t i = 0; i < seeds.size(); ++i) { os << (i ? "," : "") << seeds[i]; }
  os << "\n"
     << "output_directory = " << c.output_directory << "\n"
     << "tool_version = " << kVersion << "\n"
     << "table_cache_key = " << hex_key(table_cache_key(c)) << "\n\n"
     << resolved_text(c);
  return os.str();
}

inline std::string trace_name(std::uint64_t seed) { return "trace_seed" + std::to_string(seed) + ".csv"; }

inline int cmd_simulate(const Options& opt, std::ostream& log)
{
  const ToolConfig c = resolve_config(opt);
  const auto seeds = seed_list(c, opt);
  const auto dir = prepare_directory(c.output_directory);
  const auto table = obtain_table(c, !opt.no_cache, log);
  const auto vp = c.vehicle();
  const auto env = c.envelopes();

  std::vector<RunSummary> summaries(seeds.size());
  parallel_for(seeds.size(), [&](size_t i) {
    ScenarioConfig sc = c.resolved_scenario();
    sc.seed = seeds[i];
    GcmpcController ctl(table, vp, env, c.controller);
    const SimTrace tr = run_closed_loop(sc, vp, ctl);
    auto f = open_output(dir / trace_name(sc.seed));
    tr.write_csv(f, c.solve_time);
    summaries[i] = summarize(tr, vp, sc.seed);
  });

  {
    auto f = open_output(dir / "summary.csv");
    f << kSummaryHeader << '\n';
    for (const auto& s : summaries) { write_summary_row(f, s); }
  }
  {
    auto f = open_output(dir / "manifest.ini");
    f << manifest_text(c, opt, seeds);
  }
  {
    std::vector<std::string> names;
    for (auto s : seeds) { names.push_back(trace_name(s)); }
    auto f = open_output(dir / "plot_slalom.py");
    f << slalom_plot_script(names);
  }
  int violations = 0, infeasible = 0;
  for (const auto& s : summaries) {
    violations += s.violations();
    infeasible += s.infeasible_steps;
  }
  log << "wrote " << seeds.size() << " trace(s) to " << dir.string() << "; envelope violations " << violations
      << ", infeasible steps " << infeasible << "\n";
  return Success;
}

inline int cmd_verify(const Options& opt, std::ostream& out)
{
  const ToolConfig c = resolve_config(opt);
  const int failures = run_verify_suite(c, out);
  out << (failures == 0 ? "all properties pass\n" : std::to_string(failures) + " propert" +
                                                       (failures == 1 ? "y" : "ies") + " failed\n");
  return failures == 0 ? Success : PropertyFailure;
}

}  // namespace gcmpc::cli
