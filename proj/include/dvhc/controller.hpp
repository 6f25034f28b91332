#pragma once

#include <algorithm>
#include <cstdio>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dvhc/core.hpp"
#include "dvhc/dynamic_vhc.hpp"
#include "dvhc/orbits.hpp"
#include "dvhc/riccati.hpp"
#include "dvhc/rk4.hpp"

namespace dvhc {

/// State of the mechanical system augmented with the translation double
/// integrator.  Kept unwrapped internally; wrapping happens on output.
struct AugmentedState {
  Vec q;
  Vec qd;
  double s = 0.0;
  double sd = 0.0;

  Vec flat() const {
    Vec x(2 * q.size() + 2);
    x << q, qd, s, sd;
    return x;
  }
  static AugmentedState from_flat(const Vec& x) {
    const int n = (static_cast<int>(x.size()) - 2) / 2;
    return {x.segment(0, n), x.segment(n, n), x[2 * n], x[2 * n + 1]};
  }
};

enum class ThetaMode { GraphCoordinate, NearestPoint };

struct StabilizerOptions {
  double kp = 100.0;
  double kd = 10.0;
  ThetaMode theta_mode = ThetaMode::GraphCoordinate;
  /// Retraction validity radius around the constraint curve.  Defaults to a
  /// fifth of the curve self-distance for nearest-point retraction; the
  /// coordinate-projection retraction is globally defined and defaults to
  /// unbounded.
  std::optional<double> tube_radius;
  /// Read (theta, thetad) off q - L s (exact on the translated manifold).
  /// When false the untranslated state is retracted instead, which on the
  /// manifold with s != 0 returns a biased phase; kept for comparison.
  bool retract_translated = true;
};

struct TrajectoryRow {
  double t = 0.0;
  AugmentedState state;
  Vec e;      // h(q - L s)
  Vec ed;     // dh (qd - L sd)
  double energy = 0.0;
  double dist_gammabar = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryRow> rows;
  bool aborted = false;
  double abort_time = 0.0;
  std::string abort_reason;
};

/// Combined feedback: the transverse-design gain drives the double
/// integrator toward the selected orbit while the constraint stabilizer
/// keeps the translated constraint invariant.
class OrbitalStabilizer {
 public:
  OrbitalStabilizer(const MechanicalSystem& mech, const DynamicVhc& dvhc,
                    const ExtendedReducedDynamics& erd, OrbitSpec orbit,
                    PeriodicGain gain, StabilizerOptions opts = {})
      : mech_(std::make_shared<const MechanicalSystem>(mech)),
        dvhc_(std::make_shared<const DynamicVhc>(dvhc)),
        erd_(std::make_shared<const ExtendedReducedDynamics>(erd)),
        orbit_(std::move(orbit)),
        gain_(std::move(gain)),
        opts_(opts),
        distance_(mech, dvhc.base) {
    if (opts_.kp <= 0.0 || opts_.kd <= 0.0)
      throw Error("OrbitalStabilizer: constraint gains must be positive");
    if (std::abs(gain_.period() - orbit_.period()) >
        1e-9 * (1.0 + orbit_.period()))
      throw Error("OrbitalStabilizer: gain period does not match the orbit period");
    if (dvhc.interval_half_width <= 0.0)
      throw Error("OrbitalStabilizer: empty translation interval");
    if (opts_.theta_mode == ThetaMode::GraphCoordinate &&
        !dvhc.base.graph_coordinate)
      throw Error("OrbitalStabilizer: curve has no graph coordinate for this retraction mode");
    if (opts_.tube_radius) {
      tube_radius_ = *opts_.tube_radius;
    } else if (opts_.theta_mode == ThetaMode::NearestPoint) {
      tube_radius_ = 0.2 * curve_self_distance();
    } else {
      tube_radius_ = std::numeric_limits<double>::infinity();
    }
    const int scan = 256;
    sigma_cache_.reserve(scan);
    for (int i = 0; i < scan; ++i)
      sigma_cache_.push_back(
          dvhc.base.curve(dvhc.base.period * static_cast<double>(i) / scan));
  }

  const OrbitSpec& orbit() const { return orbit_; }
  const PeriodicGain& gain() const { return gain_; }
  const ExtendedReducedDynamics& extended() const { return *erd_; }
  const DynamicVhc& dynamic_vhc() const { return *dvhc_; }
  const MechanicalSystem& mechanics() const { return *mech_; }
  double tube_radius() const { return tube_radius_; }
  const StabilizerOptions& options() const { return opts_; }

  /// Retraction-based estimate of the constrained coordinates.
  std::pair<double, double> theta_estimate(const Vec& q, const Vec& qd,
                                           double s, double sd) const {
    const Vec& L = dvhc_->translation;
    const Vec qt = opts_.retract_translated ? Vec(q - L * s) : q;
    const Vec qdt = opts_.retract_translated ? Vec(qd - L * sd) : qd;
    const Vhc& vhc = dvhc_->base;
    double theta;
    if (opts_.theta_mode == ThetaMode::GraphCoordinate) {
      theta = wrap_into(qt[*vhc.graph_coordinate], vhc.period);
    } else {
      theta = nearest_theta(qt);
    }
    const Vec residual = mech_->space.diff(qt, vhc.curve(theta));
    if (residual.norm() > tube_radius_) {
      std::ostringstream os;
      os << "theta_estimate: state is " << residual.norm()
         << " from the constraint curve (tube radius " << tube_radius_ << ")";
      throw OutOfTubeError(os.str());
    }
    const Vec sd1 = vhc.curve_d1(theta);
    return {theta, sd1.dot(qdt) / sd1.squaredNorm()};
  }

  /// Orbit feedback v = K(phase) (E - E0, s, sd)^T.
  double v_star(const Vec& q, const Vec& qd, double s, double sd) const {
    const auto [theta, thetad] = theta_estimate(q, qd, s, sd);
    return v_star_at(theta, thetad, s, sd);
  }

  double v_star_at(double theta, double thetad, double s, double sd) const {
    const double phase = orbit_.phase(theta, thetad);
    Vec z(3);
    z << erd_->base().energy(theta, thetad) - orbit_.energy_level(), s, sd;
    return (gain_.K(phase) * z)(0);
  }

  /// Complete closed loop of the augmented system.
  Vec closed_loop_rhs(const Vec& x) const {
    const auto st = AugmentedState::from_flat(x);
    const double v = v_star(st.q, st.qd, st.s, st.sd);
    const Vec tau = tau_star(*mech_, *dvhc_, st.q, st.qd, st.s, st.sd, v,
                             opts_.kp, opts_.kd);
    Vec dx(x.size());
    dx << st.qd, forward_dynamics(*mech_, st.q, st.qd, tau), st.sd, v;
    return dx;
  }

  /// Fixed-step integration with per-step diagnostics.  Retraction failures
  /// and non-finite states end the run early with the abort time recorded.
  Trajectory simulate(const AugmentedState& initial, double t_final,
                      double step) const {
    if (step <= 0.0) throw Error("simulate: step must be positive");
    Trajectory traj;
    const auto steps = static_cast<std::size_t>(std::llround(t_final / step));
    traj.rows.reserve(steps + 1);
    Vec x = initial.flat();
    auto rhs = [this](double, const Vec& xx) { return closed_loop_rhs(xx); };
    double t = 0.0;
    for (std::size_t i = 0;; ++i) {
      try {
        traj.rows.push_back(diagnose(t, x));
      } catch (const Error& err) {
        traj.aborted = true;
        traj.abort_time = t;
        traj.abort_reason = err.what();
        return traj;
      }
      if (i == steps) break;
      try {
        x = rk4_step(rhs, t, x, step);
      } catch (const Error& err) {
        traj.aborted = true;
        traj.abort_time = t;
        traj.abort_reason = err.what();
        return traj;
      }
      if (!x.allFinite()) {
        traj.aborted = true;
        traj.abort_time = t;
        traj.abort_reason = "non-finite state";
        return traj;
      }
      t = static_cast<double>(i + 1) * step;
    }
    return traj;
  }

  double distance_to_translated_manifold(const AugmentedState& st) const {
    return gammabar_distance(distance_, dvhc_->translation, st.q, st.qd, st.s,
                             st.sd);
  }

 private:
  TrajectoryRow diagnose(double t, const Vec& x) const {
    TrajectoryRow row;
    row.t = t;
    row.state = AugmentedState::from_flat(x);
    const Vec& L = dvhc_->translation;
    const Vec qt = row.state.q - L * row.state.s;
    const Vec qdt = row.state.qd - L * row.state.sd;
    row.e = dvhc_->base.constraint(qt);
    row.ed = dvhc_->base.jacobian(qt) * qdt;
    const auto [theta, thetad] =
        theta_estimate(row.state.q, row.state.qd, row.state.s, row.state.sd);
    row.energy = erd_->base().energy(theta, thetad);
    row.dist_gammabar = distance_to_translated_manifold(row.state);
    return row;
  }

  double nearest_theta(const Vec& qt) const {
    const Vhc& vhc = dvhc_->base;
    const int scan = static_cast<int>(sigma_cache_.size());
    int best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (int i = 0; i < scan; ++i) {
      const double val = mech_->space.diff(qt, sigma_cache_[i]).squaredNorm();
      if (val < best_val) {
        best_val = val;
        best = i;
      }
    }
    double theta = vhc.period * static_cast<double>(best) / scan;
    for (int it = 0; it < 50; ++it) {
      const Vec delta = mech_->space.diff(qt, vhc.curve(theta));
      const Vec d1 = vhc.curve_d1(theta);
      const double g = d1.dot(delta);
      const double gp = vhc.curve_d2(theta).dot(delta) - d1.squaredNorm();
      const double dn = g / gp;
      theta -= dn;
      if (std::abs(dn) < 1e-12) break;
    }
    return wrap_into(theta, vhc.period);
  }

  double curve_self_distance() const {
    const Vhc& vhc = dvhc_->base;
    const int scan = 256;
    std::vector<Vec> pts(scan);
    for (int i = 0; i < scan; ++i)
      pts[i] = vhc.curve(vhc.period * static_cast<double>(i) / scan);
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < scan; ++i)
      for (int j = i + 1; j < scan; ++j) {
        const double dpar = std::abs(
            wrap_diff(vhc.period * static_cast<double>(j - i) / scan, vhc.period));
        if (dpar < vhc.period / 8.0) continue;
        best = std::min(best, mech_->space.diff(pts[i], pts[j]).norm());
      }
    return best;
  }

  std::shared_ptr<const MechanicalSystem> mech_;
  std::shared_ptr<const DynamicVhc> dvhc_;
  std::shared_ptr<const ExtendedReducedDynamics> erd_;
  OrbitSpec orbit_;
  PeriodicGain gain_;
  StabilizerOptions opts_;
  CurveDistance distance_;
  double tube_radius_ = 0.0;
  std::vector<Vec> sigma_cache_;
};

/// CSV schema: t, q1..qn, qd1..qdn, s, sd, e1..e_{n-1}, E, dist_gammabar.
/// Periodic configuration coordinates are reported wrapped.
inline void write_trajectory_csv(const Trajectory& traj, const ConfigSpace& space,
                                 std::ostream& os) {
  if (traj.rows.empty()) return;
  const int n = static_cast<int>(traj.rows.front().state.q.size());
  const int m = static_cast<int>(traj.rows.front().e.size());
  os << "t";
  for (int i = 1; i <= n; ++i) os << ",q" << i;
  for (int i = 1; i <= n; ++i) os << ",qd" << i;
  os << ",s,sd";
  for (int i = 1; i <= m; ++i) os << ",e" << i;
  os << ",E,dist_gammabar\n";
  char buf[64];
  auto put = [&os, &buf](double v, bool lead_comma = true) {
    std::snprintf(buf, sizeof buf, lead_comma ? ",%.17g" : "%.17g", v);
    os << buf;
  };
  for (const auto& row : traj.rows) {
    put(row.t, false);
    const Vec qw = space.wrap(row.state.q);
    for (int i = 0; i < n; ++i) put(qw[i]);
    for (int i = 0; i < n; ++i) put(row.state.qd[i]);
    put(row.state.s);
    put(row.state.sd);
    for (int i = 0; i < m; ++i) put(row.e[i]);
    put(row.energy);
    put(row.dist_gammabar);
    os << "\n";
  }
}

}  // namespace dvhc
