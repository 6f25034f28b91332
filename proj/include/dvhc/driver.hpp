#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <random>

#include <json.hpp>

#include "dvhc/controller.hpp"
#include "dvhc/riccati.hpp"
#include "dvhc/scenario.hpp"
#include "dvhc/systems.hpp"
#include "dvhc/transverse.hpp"

namespace dvhc {

// Command implementations shared by the command-line tool and the tests.
// Exit codes: 0 success, 1 check or design failure, 2 parse error (raised
// upstream as ParseError), 3 runtime abort.

struct DriverOptions {
  int riccati_steps = 4096;
  int monodromy_steps = 4096;
  int ltv_nodes = 2048;
  unsigned seed = 0;
};

struct PipelineParts {
  BuiltinSystem sys;
  std::shared_ptr<DynamicVhc> dvhc;
  std::shared_ptr<ExtendedReducedDynamics> erd;
  OrbitSpec orbit;
  TransverseLTV ltv;
  std::string fingerprint;
};

inline PipelineParts build_pipeline(const Scenario& sc,
                                    const DriverOptions& opts = {}) {
  PipelineParts p{make_builtin_system(sc.system_name, sc.system_params),
                  nullptr,
                  nullptr,
                  OrbitSpec{},
                  TransverseLTV{},
                  ""};
  p.fingerprint = sc.fingerprint(p.sys.canonical);
  p.dvhc = std::make_shared<DynamicVhc>(p.sys.mech, p.sys.vhc, sc.translation,
                                        sc.s_max);
  p.erd = std::make_shared<ExtendedReducedDynamics>(extend(p.sys.mech, *p.dvhc));
  auto rd = std::make_shared<const ReducedDynamics>(p.erd->base());
  p.orbit = parameterize(rd, sc.energy, sc.direction);
  p.ltv = transverse_linearize_vhc(*p.erd, p.orbit, opts.ltv_nodes);
  return p;
}

inline OrbitalStabilizer make_stabilizer(const Scenario& sc,
                                         const PipelineParts& p,
                                         PeriodicGain gain) {
  StabilizerOptions opts;
  opts.kp = sc.kp;
  opts.kd = sc.kd;
  opts.theta_mode = sc.theta_mode;
  opts.tube_radius = sc.tube_radius;
  opts.retract_translated = sc.retract_translated;
  return OrbitalStabilizer(p.sys.mech, *p.dvhc, *p.erd, p.orbit, std::move(gain),
                           opts);
}

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory: " + dir);
}

inline const char* verdict_name(GramianVerdict v) {
  switch (v) {
    case GramianVerdict::Controllable: return "controllable";
    case GramianVerdict::Stabilizable: return "stabilizable";
    default: return "not stabilizable";
  }
}

}  // namespace detail

/// Static checks of the scenario: model consistency probes, constraint
/// regularity, Lagrangian structure, orbit classification, open-loop
/// multipliers and the stabilizability verdict.  Writes analyze.json plus
/// the orbit and transverse-pair CSV artifacts.
inline int run_analyze(const Scenario& sc, const std::string& out_dir,
                       std::ostream& log, const DriverOptions& opts = {}) {
  detail::ensure_dir(out_dir);
  nlohmann::json report;
  std::vector<std::string> failures;
  auto record = [&](const std::string& name, bool ok, const std::string& detail) {
    log << (ok ? "[ok]   " : "[FAIL] ") << name << ": " << detail << "\n";
    if (!ok) failures.push_back(name);
    report["checks"][name] = {{"pass", ok}, {"detail", detail}};
  };

  auto sys = make_builtin_system(sc.system_name, sc.system_params);
  report["system"] = sc.system_name;
  report["fingerprint"] = sc.fingerprint(sys.canonical);

  {
    std::mt19937 rng(opts.seed);
    std::uniform_real_distribution<double> u(-6.0, 6.0);
    double worst = 0.0;
    bool spd_ok = true;
    for (int i = 0; i < 1000; ++i) {
      Vec q(sys.mech.dof());
      for (int j = 0; j < q.size(); ++j) q[j] = u(rng);
      const RowVec bp = sys.mech.annihilator(q);
      const Mat B = sys.mech.input_matrix(q);
      worst = std::max(worst, (bp * B).cwiseAbs().maxCoeff() /
                                  (1.0 + bp.norm() * B.norm()));
      if (i % 32 == 0) spd_ok = spd_ok && sys.mech.inertia_is_spd(q);
    }
    std::ostringstream det;
    det << "max normalized residual " << worst;
    record("annihilator", worst <= 1e-9, det.str());
    record("inertia_spd", spd_ok, spd_ok ? "positive definite at samples"
                                         : "not positive definite");
  }

  {
    double worst = 0.0;
    for (int i = 0; i < 256; ++i) {
      const double th = sys.vhc.period * i / 256.0;
      worst = std::max(worst,
                       sys.vhc.constraint(sys.vhc.curve(th)).cwiseAbs().maxCoeff());
    }
    std::ostringstream det;
    det << "max |h(sigma)| " << worst;
    record("curve_on_constraint", worst <= 1e-8, det.str());
  }

  const auto verdict = check_regularity(sys.mech, sys.vhc, 512);
  {
    std::ostringstream det;
    det << "min |Bperp D sigma'| = " << verdict.min_abs << " at theta = "
        << verdict.argmin_theta;
    record("regularity", verdict.regular, det.str());
    report["regularity"] = {{"min_abs", verdict.min_abs},
                            {"argmin_theta", verdict.argmin_theta}};
  }
  if (!verdict.regular) {
    std::ofstream(out_dir + "/analyze.json") << report.dump(1) << "\n";
    return 1;
  }

  try {
    const auto p = build_pipeline(sc, opts);
    const auto& rd = p.erd->base();
    {
      std::ostringstream det;
      det << "mass residual " << rd.mass_period_residual() << ", potential residual "
          << rd.potential_period_residual();
      record("lagrangian", rd.lagrangian(), det.str());
      report["lagrangian"] = {{"mass_residual", rd.mass_period_residual()},
                              {"potential_residual", rd.potential_period_residual()}};
    }
    {
      std::ostringstream det;
      if (p.orbit.kind() == OrbitKind::Rotation)
        det << "rotation, direction " << p.orbit.direction();
      else
        det << "oscillation, center " << p.orbit.center() << ", radius "
            << p.orbit.radius();
      record("orbit", true, det.str());
      report["orbit"] = {{"kind", p.orbit.kind() == OrbitKind::Rotation
                                      ? "rotation"
                                      : "oscillation"},
                         {"energy", sc.energy},
                         {"period", p.orbit.period()}};
    }
    {
      std::ostringstream det;
      det << "certified |s| < " << p.dvhc->interval_half_width;
      record("translation_interval", p.dvhc->interval_half_width > 0.0, det.str());
    }
    {
      const auto open = monodromy(p.ltv, opts.monodromy_steps);
      std::ostringstream det;
      det << "open-loop multipliers";
      std::vector<std::vector<double>> mults;
      for (int i = 0; i < open.multipliers.size(); ++i) {
        det << " " << std::abs(open.multipliers[i]);
        mults.push_back({open.multipliers[i].real(), open.multipliers[i].imag()});
      }
      record("open_loop_multipliers", true, det.str());
      report["open_loop_multipliers"] = mults;
    }
    {
      const auto rep = stabilizability_gramian(p.ltv, opts.monodromy_steps);
      std::ostringstream det;
      det << detail::verdict_name(rep.verdict) << " (gramian eigs "
          << rep.min_eigenvalue << " .. " << rep.max_eigenvalue << ")";
      record("stabilizability", rep.verdict != GramianVerdict::NotStabilizable,
             det.str());
      report["gramian"] = {{"min_eigenvalue", rep.min_eigenvalue},
                           {"max_eigenvalue", rep.max_eigenvalue},
                           {"verdict", detail::verdict_name(rep.verdict)}};
    }
    {
      std::ofstream os(out_dir + "/orbit.csv");
      write_orbit_csv(p.orbit, os);
      std::ofstream os2(out_dir + "/transverse.csv");
      write_ltv_csv(p.ltv, os2);
    }
  } catch (const Error& err) {
    record("pipeline", false, err.what());
  }

  report["pass"] = failures.empty();
  std::ofstream(out_dir + "/analyze.json") << report.dump(1) << "\n";
  if (!failures.empty()) {
    log << "failed checks:";
    for (const auto& f : failures) log << " " << f;
    log << "\n";
    return 1;
  }
  return 0;
}

/// Gain design: periodic Riccati solve, gain file with fingerprint, CSV dump
/// and the multiplier report.
inline int run_design(const Scenario& sc, const std::string& out_dir,
                      const std::string& gain_path, std::ostream& log,
                      const DriverOptions& opts = {}) {
  detail::ensure_dir(out_dir);
  const auto p = build_pipeline(sc, opts);
  PeriodicGain gain;
  try {
    gain = solve_periodic_riccati(p.ltv, PeriodicWeights::constant(sc.Q, Mat{{sc.R}}),
                                  opts.riccati_steps);
  } catch (const StabilizabilityError& err) {
    log << "design failed: " << err.what() << "\n";
    const auto rep = stabilizability_gramian(p.ltv, opts.monodromy_steps);
    log << "gramian: " << detail::verdict_name(rep.verdict) << ", eigenvalues "
        << rep.min_eigenvalue << " .. " << rep.max_eigenvalue << "\n";
    return 1;
  }
  gain.set_fingerprint(p.fingerprint);
  save_gain(gain, sc.Q, Mat{{sc.R}}, gain_path);
  {
    std::ofstream os(out_dir + "/gain.csv");
    write_gain_csv(gain, os);
  }
  log << "closed-loop multipliers:";
  bool inside = true;
  char buf[64];
  for (int i = 0; i < gain.closed_loop_multipliers().size(); ++i) {
    const auto mu = gain.closed_loop_multipliers()[i];
    std::snprintf(buf, sizeof buf, " %.6g%+.6gi (|mu| = %.6g)", mu.real(),
                  mu.imag(), std::abs(mu));
    log << buf;
    inside = inside && std::abs(mu) < 1.0;
  }
  log << "\n";
  return inside ? 0 : 1;
}

/// Closed-loop simulation from the scenario initial condition using a gain
/// designed earlier; refuses gains whose fingerprint does not match.
inline int run_simulation(const Scenario& sc, const std::string& gain_path,
                          const std::string& out_dir, std::ostream& log,
                          const DriverOptions& opts = {}) {
  detail::ensure_dir(out_dir);
  const auto p = build_pipeline(sc, opts);
  auto gain = load_gain(gain_path);
  if (gain.fingerprint() != p.fingerprint)
    throw FingerprintError("gain file fingerprint " + gain.fingerprint() +
                           " does not match scenario fingerprint " + p.fingerprint);
  const auto stab = make_stabilizer(sc, p, std::move(gain));
  AugmentedState init{sc.q0, sc.qd0, sc.s0, sc.sd0};
  if (init.q.size() != p.sys.mech.dof() || init.qd.size() != p.sys.mech.dof())
    throw Error("initial condition dimension does not match the system");
  const auto traj = stab.simulate(init, sc.t_final, sc.step);
  {
    std::ofstream os(out_dir + "/trajectory.csv");
    write_trajectory_csv(traj, p.sys.mech.space, os);
  }
  if (traj.aborted) {
    log << "aborted at t = " << traj.abort_time << ": " << traj.abort_reason
        << "\n";
    return 3;
  }
  const auto& last = traj.rows.back();
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "final |E-E0| = %.6g, |s| = %.6g, ||e|| = %.6g\n",
                std::abs(last.energy - sc.energy), std::abs(last.state.s),
                last.e.norm());
  log << buf;
  return 0;
}

/// Phase-portrait export of the reduced dynamics at the scenario's levels.
inline int run_portrait(const Scenario& sc, const std::string& out_dir,
                        std::ostream& log, const DriverOptions& opts = {}) {
  detail::ensure_dir(out_dir);
  auto sys = make_builtin_system(sc.system_name, sc.system_params);
  const auto rd = reduce(sys.mech, sys.vhc);
  std::vector<double> levels = sc.portrait_energies;
  if (levels.empty()) levels.push_back(sc.energy);
  std::ofstream os(out_dir + "/portrait.csv");
  write_phase_portrait(rd, levels, os);
  log << "wrote " << levels.size() << " level sets\n";
  (void)opts;
  return 0;
}

}  // namespace dvhc
