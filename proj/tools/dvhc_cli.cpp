// Command-line front end: analyze a scenario, design the periodic orbit
// gain, simulate the closed loop and export phase portraits.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dvhc/driver.hpp"

namespace {

struct CommonArgs {
  std::string scenario_path;
  std::string out_dir;
  std::string gain_path;
  int steps = 0;
  unsigned seed = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_gain) {
  cmd->add_option("--scenario", args.scenario_path, "scenario file")
      ->required();
  cmd->add_option("--out", args.out_dir,
                  "output directory (defaults to the scenario's, then 'out')");
  cmd->add_option("--steps", args.steps,
                  "integration steps per period for design and monodromy");
  cmd->add_option("--seed", args.seed, "seed for randomized model probes");
  auto* g = cmd->add_option("--gain", args.gain_path, "gain file path");
  if (needs_gain) g->required();
}

std::string effective_out(const CommonArgs& args, const dvhc::Scenario& sc) {
  if (!args.out_dir.empty()) return args.out_dir;
  if (!sc.out_dir.empty()) return sc.out_dir;
  return "out";
}

dvhc::DriverOptions driver_options(const CommonArgs& args) {
  dvhc::DriverOptions opts;
  if (args.steps > 0) {
    opts.riccati_steps = args.steps;
    opts.monodromy_steps = args.steps;
  }
  opts.seed = args.seed;
  return opts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orbit stabilization under dynamic virtual constraints"};
  app.require_subcommand(1);

  CommonArgs analyze_args, design_args, run_args, portrait_args;
  auto* analyze = app.add_subcommand("analyze", "run scenario feasibility checks");
  add_common(analyze, analyze_args, false);
  auto* design = app.add_subcommand("design", "solve the periodic gain design");
  add_common(design, design_args, false);
  auto* run = app.add_subcommand("run", "simulate the closed loop with a gain file");
  add_common(run, run_args, true);
  auto* portrait = app.add_subcommand("portrait", "export reduced phase portraits");
  add_common(portrait, portrait_args, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (analyze->parsed()) {
      const auto sc = dvhc::load_scenario(analyze_args.scenario_path);
      return dvhc::run_analyze(sc, effective_out(analyze_args, sc), std::cout,
                               driver_options(analyze_args));
    }
    if (design->parsed()) {
      const auto sc = dvhc::load_scenario(design_args.scenario_path);
      const std::string out = effective_out(design_args, sc);
      std::string gain =
          design_args.gain_path.empty() ? out + "/gain.json" : design_args.gain_path;
      dvhc::detail::ensure_dir(out);
      return dvhc::run_design(sc, out, gain, std::cout,
                              driver_options(design_args));
    }
    if (run->parsed()) {
      const auto sc = dvhc::load_scenario(run_args.scenario_path);
      return dvhc::run_simulation(sc, run_args.gain_path,
                                  effective_out(run_args, sc), std::cout,
                                  driver_options(run_args));
    }
    if (portrait->parsed()) {
      const auto sc = dvhc::load_scenario(portrait_args.scenario_path);
      return dvhc::run_portrait(sc, effective_out(portrait_args, sc), std::cout,
                                driver_options(portrait_args));
    }
  } catch (const dvhc::ParseError& err) {
    std::cerr << "parse error at line " << err.line() << ", column "
              << err.column() << ": " << err.what() << "\n";
    return 2;
  } catch (const dvhc::FingerprintError& err) {
    std::cerr << err.what() << "\n";
    return 1;
  } catch (const dvhc::OutOfTubeError& err) {
    std::cerr << err.what() << "\n";
    return 3;
  } catch (const dvhc::Error& err) {
    std::cerr << err.what() << "\n";
    return 1;
  }
  return 0;
}
