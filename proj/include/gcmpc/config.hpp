#pragma once

#include "gcmpc/controller.hpp"
#include "gcmpc/sim_harness.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcmpc {

/// Configuration problem tied to a `section.key` name.
class ConfigError : public std::runtime_error
{
public:
  ConfigError(std::string key, const std::string& message)
    : std::runtime_error(key + ": " + message), key_(std::move(key))
  {
  }
  [[nodiscard]] const std::string& key() const { return key_; }

private:
  std::string key_;
};

/// Everything the command-line tool reads from a config file, defaults materialized.
struct ToolConfig
{
  // vehicle
  double mass{1231.0};
  double yaw_inertia{2034.5};
  double dist_front{1.07};
  double dist_rear{1.40};
  double gravity{9.81};
  // tires: nominal (C, R_mu, mu) per axle
  std::array<double, 3> front_tire{100000.0, 0.8, 1.0};
  std::array<double, 3> rear_tire{130000.0, 0.8, 1.0};
  double envelope_half_width{0.25};
  int envelope_points{2001};
  std::string envelope_axle{};  ///< front | rear; required by the envelope command
  // uncertainty: relative half-widths of (C, R_mu, mu)
  std::array<double, 3> front_bounds{0.2, 0.1, 0.1};
  std::array<double, 3> rear_bounds{0.2, 0.1, 0.1};
  // controller
  ControllerConfig controller{};
  // scenario
  ScenarioConfig scenario{};
  double amplitude_deg{10.0};
  int runs{1};
  // output
  std::string output_directory{"gcmpc_out"};
  std::string cache_directory{};  ///< empty: the output directory
  bool solve_time{false};         ///< include the solve-time column in traces

  [[nodiscard]] VehicleParams vehicle() const
  {
    VehicleParams vp;
    vp.mass = mass;
    vp.yaw_inertia = yaw_inertia;
    vp.dist_front = dist_front;
    vp.dist_rear = dist_rear;
    vp.gravity = gravity;
    const auto loads = normal_loads(vp);
    vp.front = TireUncertaintySet{TireParams{front_tire[0], front_tire[1], front_tire[2], loads.front}, front_bounds};
    vp.rear = TireUncertaintySet{TireParams{rear_tire[0], rear_tire[1], rear_tire[2], loads.rear}, rear_bounds};
    return vp;
  }

  [[nodiscard]] std::vector<double> envelope_grid() const
  {
    return symmetric_grid(envelope_half_width, envelope_points);
  }

  [[nodiscard]] TireEnvelopes envelopes() const
  {
    const auto vp = vehicle();
    const auto g = envelope_grid();
    return {force_envelope(vp.front, g), force_envelope(vp.rear, g)};
  }

  [[nodiscard]] ScenarioConfig resolved_scenario() const
  {
    ScenarioConfig s = scenario;
    s.amplitude = amplitude_deg * std::numbers::pi / 180.0;
    return s;
  }

  [[nodiscard]] std::string table_cache_directory() const
  {
    return cache_directory.empty() ? output_directory : cache_directory;
  }
};

namespace detail {

inline std::string format_value(double v) { return format_double(v); }
inline std::string format_value(int v) { return std::to_string(v); }
inline std::string format_value(std::uint64_t v) { return std::to_string(v); }
inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(const std::string& v) { return v; }

inline void parse_value(const std::string& key, const std::string& s, double& out)
{
  double v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError(key, "expected a finite number, got '" + s + "'");
  }
  out = v;
}

inline void parse_value(const std::string& key, const std::string& s, int& out)
{
  int v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError(key, "expected an integer, got '" + s + "'");
  }
  out = v;
}

inline void parse_value(const std::string& key, const std::string& s, std::uint64_t& out)
{
  std::uint64_t v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + s + "'");
  }
  out = v;
}

inline void parse_value(const std::string& key, const std::string& s, bool& out)
{
  if (s == "true" || s == "1" || s == "yes" || s == "on") {
    out = true;
  } else if (s == "false" || s == "0" || s == "no" || s == "off") {
    out = false;
  } else {
    throw ConfigError(key, "expected true or false, got '" + s + "'");
  }
}

inline void parse_value(const std::string&, const std::string& s, std::string& out) { out = s; }

struct ConfigKey
{
  std::string section;
  std::string name;
  std::function<std::string(const ToolConfig&)> get;
  std::function<void(ToolConfig&, const std::string&)> set;
  bool table{};  ///< part of the gain-table cache key
};

template <typename T>
ConfigKey make_key(std::string section, std::string name, T ToolConfig::*member, bool table)
{
  const std::string full = section + "." + name;
  return {std::move(section), std::move(name),
          [member](const ToolConfig& c) { return format_value(c.*member); },
          [member, full](ToolConfig& c, const std::string& s) { parse_value(full, s, c.*member); }, table};
}

template <typename Get>
ConfigKey make_key_fn(std::string section, std::string name, Get access, bool table)
{
  const std::string full = section + "." + name;
  return {std::move(section), std::move(name),
          [access](const ToolConfig& c) { return format_value(access(c)); },
          [access, full](ToolConfig& c, const std::string& s) { parse_value(full, s, access(c)); }, table};
}

inline const std::vector<ConfigKey>& config_schema()
{
  static const std::vector<ConfigKey> schema = [] {
    std::vector<ConfigKey> k;
    k.push_back(make_key("vehicle", "mass", &ToolConfig::mass, true));
    k.push_back(make_key("vehicle", "yaw_inertia", &ToolConfig::yaw_inertia, true));
    k.push_back(make_key("vehicle", "dist_front", &ToolConfig::dist_front, true));
    k.push_back(make_key("vehicle", "dist_rear", &ToolConfig::dist_rear, true));
    k.push_back(make_key("vehicle", "gravity", &ToolConfig::gravity, true));

    const char* fields[3] = {"cornering_stiffness", "friction_ratio", "friction"};
    for (int i = 0; i < 3; ++i) {
      k.push_back(make_key_fn("tires", std::string("front_") + fields[i],
                              [i](auto& c) -> auto& { return c.front_tire[i]; }, true));
    }
    for (int i = 0; i < 3; ++i) {
      k.push_back(make_key_fn("tires", std::string("rear_") + fields[i],
                              [i](auto& c) -> auto& { return c.rear_tire[i]; }, true));
    }
    k.push_back(make_key("tires", "envelope_half_width", &ToolConfig::envelope_half_width, true));
    k.push_back(make_key("tires", "envelope_points", &ToolConfig::envelope_points, true));
    k.push_back(make_key("tires", "envelope_axle", &ToolConfig::envelope_axle, false));

    const char* bounds[3] = {"stiffness", "friction_ratio", "friction"};
    for (int i = 0; i < 3; ++i) {
      k.push_back(make_key_fn("uncertainty", std::string("front_") + bounds[i],
                              [i](auto& c) -> auto& { return c.front_bounds[i]; }, true));
    }
    for (int i = 0; i < 3; ++i) {
      k.push_back(make_key_fn("uncertainty", std::string("rear_") + bounds[i],
                              [i](auto& c) -> auto& { return c.rear_bounds[i]; }, true));
    }

    auto ctl = [&](const char* name, auto access, bool table = true) {
      k.push_back(make_key_fn("controller", name, access, table));
    };
    ctl("horizon", [](auto& c) -> auto& { return c.controller.horizon; });
    ctl("w_vy", [](auto& c) -> auto& { return c.controller.w_vy; });
    ctl("w_r", [](auto& c) -> auto& { return c.controller.w_r; });
    ctl("w_fyf", [](auto& c) -> auto& { return c.controller.w_fyf; });
    ctl("sampling_time", [](auto& c) -> auto& { return c.controller.sampling_time; });
    ctl("v_min", [](auto& c) -> auto& { return c.controller.grid.v_min; });
    ctl("v_max", [](auto& c) -> auto& { return c.controller.grid.v_max; });
    ctl("v_step", [](auto& c) -> auto& { return c.controller.grid.v_step; });
    ctl("alpha_points", [](auto& c) -> auto& { return c.controller.grid.alpha_points; });
    ctl("yaw_limit_gravity", [](auto& c) -> auto& { return c.controller.envelope.yaw_limit_gravity; });
    ctl("eps_min", [](auto& c) -> auto& { return c.controller.synthesis.eps_min; });
    ctl("eps_max", [](auto& c) -> auto& { return c.controller.synthesis.eps_max; });
    ctl("eps_grid_points", [](auto& c) -> auto& { return c.controller.synthesis.eps_grid_points; });
    ctl("margin_linearization", [](auto& c) -> auto& { return c.controller.margin_linearization; },
        false);
    ctl("max_iterations", [](auto& c) -> auto& { return c.controller.solver.max_iterations; }, false);
    ctl("feasibility_tolerance", [](auto& c) -> auto& { return c.controller.solver.feasibility_tolerance; },
        false);
    ctl("gap_tolerance", [](auto& c) -> auto& { return c.controller.solver.gap_tolerance; }, false);
    ctl("dump_directory", [](auto& c) -> auto& { return c.controller.dump_directory; }, false);
    k.push_back({"controller", "rear_peak",
                 [](const ToolConfig& c) {
                   return std::string(c.controller.envelope.rear_peak == RearPeakSource::Mean ? "mean"
                                                                                              : "earliest");
                 },
                 [](ToolConfig& c, const std::string& s) {
                   if (s == "mean") {
                     c.controller.envelope.rear_peak = RearPeakSource::Mean;
                   } else if (s == "earliest") {
                     c.controller.envelope.rear_peak = RearPeakSource::Earliest;
                   } else {
                     throw ConfigError("controller.rear_peak", "expected mean or earliest, got '" + s + "'");
                   }
                 },
                 true});

    auto scn = [&](const char* name, auto access) { k.push_back(make_key_fn("scenario", name, access, false)); };
    scn("initial_speed", [](auto& c) -> auto& { return c.scenario.initial_speed; });
    scn("acceleration", [](auto& c) -> auto& { return c.scenario.acceleration; });
    scn("duration", [](auto& c) -> auto& { return c.scenario.duration; });
    scn("amplitude_deg", [](auto& c) -> auto& { return c.amplitude_deg; });
    scn("frequency", [](auto& c) -> auto& { return c.scenario.frequency; });
    scn("seed", [](auto& c) -> auto& { return c.scenario.seed; });
    scn("resample_period", [](auto& c) -> auto& { return c.scenario.resample_period; });
    scn("plant_step", [](auto& c) -> auto& { return c.scenario.plant_step; });
    scn("cos_delta", [](auto& c) -> auto& { return c.scenario.cos_delta; });
    scn("runs", [](auto& c) -> auto& { return c.runs; });

    k.push_back(make_key("output", "directory", &ToolConfig::output_directory, false));
    k.push_back(make_key("output", "cache_directory", &ToolConfig::cache_directory, false));
    k.push_back(make_key("output", "solve_time", &ToolConfig::solve_time, false));
    return k;
  }();
  return schema;
}

/// Drops a leading "<key>: " that the wrapped message already carries.
inline std::string without_prefix(const std::string& key, const std::string& msg)
{
  const std::string p = key + ": ";
  return msg.rfind(p, 0) == 0 ? msg.substr(p.size()) : msg;
}

inline void validate_config(const ToolConfig& c)
{
  auto check = [](bool ok, const char* key, const std::string& msg) {
    if (!ok) { throw ConfigError(key, msg); }
  };
  check(c.mass > 0.0, "vehicle.mass", "must be positive");
  check(c.yaw_inertia > 0.0, "vehicle.yaw_inertia", "must be positive");
  check(c.dist_front > 0.0, "vehicle.dist_front", "must be positive");
  check(c.dist_rear > 0.0, "vehicle.dist_rear", "must be positive");
  check(c.gravity > 0.0, "vehicle.gravity", "must be positive");
  const char* axle[2] = {"front", "rear"};
  const std::array<double, 3>* tires[2] = {&c.front_tire, &c.rear_tire};
  const std::array<double, 3>* bounds[2] = {&c.front_bounds, &c.rear_bounds};
  for (int a = 0; a < 2; ++a) {
    const std::string t = std::string("tires.") + axle[a];
    const std::string u = std::string("uncertainty.") + axle[a];
    check((*tires[a])[0] > 0.0, (t + "_cornering_stiffness").c_str(), "must be positive");
    const double rmu = (*tires[a])[1];
    check(rmu > 0.0 && 1.0 - 2.0 / 3.0 * rmu > 0.0, (t + "_friction_ratio").c_str(),
          "friction ratio " + format_double(rmu) +
            " makes the q denominator 1 - (2/3) R_mu non-positive; it must lie in (0, 1.5)");
    check((*tires[a])[2] > 0.0, (t + "_friction").c_str(), "must be positive");
    const char* names[3] = {"_stiffness", "_friction_ratio", "_friction"};
    for (int i = 0; i < 3; ++i) {
      const double b = (*bounds[a])[i];
      check(b >= 0.0 && b < 1.0, (u + names[i]).c_str(), "relative half-width must lie in [0, 1)");
    }
    check(rmu * (1.0 + (*bounds[a])[1]) < 1.5, (u + "_friction_ratio").c_str(),
          "the upper friction-ratio vertex makes the q denominator 1 - (2/3) R_mu non-positive");
  }
  check(c.envelope_half_width > 0.0 && c.envelope_half_width < std::numbers::pi / 2,
        "tires.envelope_half_width", "must lie in (0, pi/2)");
  check(c.envelope_points >= 3, "tires.envelope_points", "must be at least 3");
  check(c.envelope_axle.empty() || c.envelope_axle == "front" || c.envelope_axle == "rear",
        "tires.envelope_axle", "expected front or rear");
  try {
    c.controller.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("controller", without_prefix("controller", e.what()));
  }
  check(c.controller.synthesis.eps_min > 0.0 && c.controller.synthesis.eps_max > c.controller.synthesis.eps_min,
        "controller.eps_max", "need 0 < eps_min < eps_max");
  check(c.runs >= 1, "scenario.runs", "must be at least 1");
  try {
    c.resolved_scenario().validate(c.controller.sampling_time);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("scenario", without_prefix("scenario", e.what()));
  }
}

}  // namespace detail

/// Parses INI text. Unknown sections or keys are errors; a [manifest] section is ignored.
inline ToolConfig parse_config(std::istream& is)
{
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config", std::string("malformed file: ") + e.message() + " (line " +
                                  std::to_string(e.line()) + ")");
  }
  ToolConfig c;
  const auto& schema = detail::config_schema();
  for (const auto& [section, body] : tree) {
    if (section == "manifest") { continue; }
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(section, "key outside any section");
    }
    for (const auto& [name, value] : body) {
      const auto it = std::find_if(schema.begin(), schema.end(),
                                   [&](const detail::ConfigKey& k) { return k.section == section && k.name == name; });
      if (it == schema.end()) { throw ConfigError(section + "." + name, "unknown key"); }
      it->set(c, value.data());
    }
  }
  detail::validate_config(c);
  return c;
}

inline ToolConfig load_config(const std::string& path)
{
  std::ifstream f(path);
  if (!f) { throw ConfigError("config", "cannot open '" + path + "'"); }
  return parse_config(f);
}

/// Canonical INI text with every key materialized; parse_config(resolved_text(c)) == c.
inline std::string resolved_text(const ToolConfig& c, bool table_keys_only = false)
{
  std::ostringstream os;
  std::string current;
  for (const auto& k : detail::config_schema()) {
    if (table_keys_only && !k.table) { continue; }
    if (k.section != current) {
      os << (current.empty() ? "" : "\n") << "[" << k.section << "]\n";
      current = k.section;
    }
    os << k.name << " = " << k.get(c) << "\n";
  }
  return os.str();
}

inline std::uint64_t fnv1a(const std::string& s)
{
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Gain-table cache key: hash of the physical and controller parameters.
inline std::uint64_t table_cache_key(const ToolConfig& c)
{
  return fnv1a(std::string("gcmpc-table-v1\n") + resolved_text(c, true));
}

}  // namespace gcmpc
