#include "gcmpc/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv)
{
  using namespace gcmpc;
  CLI::App app{"Guaranteed-cost MPC handling-envelope tool"};
  app.set_version_flag("--version", cli::kVersion);
  app.require_subcommand(1);

  cli::Options opt;
  int seeds = 0;
  std::uint64_t seed_base = 0;
  std::string out;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "INI config file (defaults apply to missing keys)")
      ->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides output.directory)");
  };

  auto* envelope = app.add_subcommand("envelope", "tabulate a tire force envelope and emit a plot script");
  add_common(envelope);

  auto* simulate = app.add_subcommand("simulate", "run the closed-loop slalom for one or more seeds");
  add_common(simulate);
  simulate->add_option("--seeds", seeds, "number of seeded runs")->check(CLI::PositiveNumber);
  simulate->add_option("--seed-base", seed_base, "first seed");
  simulate->add_flag("--no-cache", opt.no_cache, "rebuild the gain table and do not store it");

  auto* verify = app.add_subcommand("verify", "run the property and oracle suite");
  add_common(verify);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? cli::Success : cli::ConfigFailure;
  }
  if (simulate->count("--seeds") > 0) { opt.seeds = seeds; }
  if (simulate->count("--seed-base") > 0) { opt.seed_base = seed_base; }
  if (!out.empty()) { opt.out = out; }

  try {
    if (envelope->parsed()) { return cli::cmd_envelope(opt, std::cout); }
    if (simulate->parsed()) { return cli::cmd_simulate(opt, std::cout); }
    return cli::cmd_verify(opt, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cli::ConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::Failure;
  }
}
