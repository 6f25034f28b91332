#pragma once

#include <algorithm>
#include <cstdio>
#include <memory>
#include <ostream>
#include <sstream>
#include <vector>

#include "dvhc/core.hpp"
#include "dvhc/grid.hpp"
#include "dvhc/vhc.hpp"

namespace dvhc {

enum class OrbitKind { Rotation, Oscillation };

/// A closed orbit of Lagrangian reduced dynamics at energy level E0, with a
/// regular parameterization s -> (phi1(s), phi2(s)) and the phase map used by
/// the orbital feedback.  Rotations are parameterized by theta itself over
/// one constraint period; oscillations by the angle of the circle they map to
/// under (theta, thetad) -> (theta, T(theta) thetad), over 2 pi.
class OrbitSpec {
 public:
  OrbitKind kind() const { return kind_; }
  double energy_level() const { return e0_; }
  double period() const { return kind_ == OrbitKind::Rotation ? rd_->period() : 2.0 * M_PI; }
  int direction() const { return direction_; }
  double center() const { return center_; }
  double radius() const { return radius_; }
  const ReducedDynamics& reduced() const { return *rd_; }

  /// phi(s) = (phi1, phi2).
  Eigen::Vector2d param(double s) const {
    if (kind_ == OrbitKind::Rotation) {
      const double th = wrap_into(s, rd_->period());
      return {th, rotation_speed(th)};
    }
    const double th = center_ + radius_ * std::cos(s);
    return {th, radius_ * std::sin(s) / scaling(th)};
  }

  /// phi'(s); analytic for rotations, spline derivative for oscillations.
  Eigen::Vector2d param_d1(double s) const {
    if (kind_ == OrbitKind::Rotation) {
      const double th = wrap_into(s, rd_->period());
      const double p2 = rotation_speed(th);
      return {1.0, (rd_->psi1(th) + rd_->psi2(th) * p2 * p2) / p2};
    }
    return {phi1_tab_.deriv(s), phi2_tab_.deriv(s)};
  }

  /// Time scaling T(theta) of the oscillation homeomorphism, with the
  /// one-sided limit T^2 = M R / |V'| at the turning points.
  double scaling(double theta) const {
    if (kind_ != OrbitKind::Oscillation)
      throw Error("scaling: only defined for oscillations");
    const double d = theta - center_;
    const double eps = 1e-6 * (1.0 + radius_);
    if (std::abs(radius_ - std::abs(d)) < eps) {
      const double th_turn = d > 0 ? theta2_ : theta1_;
      const double vp = std::abs(rd_->potential_d1(th_turn));
      return std::sqrt(rd_->mass(th_turn) * radius_ / vp);
    }
    const double num = radius_ * radius_ - d * d;
    const double den = 2.0 / rd_->mass(theta) * (e0_ - rd_->potential(theta));
    const double r = num / den;
    if (!(r > 0.0)) {
      std::ostringstream os;
      os << "scaling: theta = " << theta << " is outside the oscillation band";
      throw OutOfTubeError(os.str());
    }
    return std::sqrt(r);
  }

  /// Phase s in [0, T_gamma) of a state near the orbit.
  double phase(double theta, double thetad) const {
    if (kind_ == OrbitKind::Rotation) return wrap_into(theta, rd_->period());
    const double th = center_ + wrap_diff(theta - center_, rd_->period());
    const double delta = 0.1 * radius_;
    if (th < center_ - radius_ - delta || th > center_ + radius_ + delta) {
      std::ostringstream os;
      os << "phase: theta = " << theta << " is outside the oscillation tube ["
         << center_ - radius_ - delta << ", " << center_ + radius_ + delta << "]";
      throw OutOfTubeError(os.str());
    }
    const double thc = std::clamp(th, center_ - radius_, center_ + radius_);
    return wrap_into(std::atan2(scaling(thc) * thetad, th - center_), 2.0 * M_PI);
  }

  double turning_point_low() const { return theta1_; }
  double turning_point_high() const { return theta2_; }

 private:
  friend OrbitKind classify(const ReducedDynamics& rd, double e0);
  friend OrbitSpec parameterize(std::shared_ptr<const ReducedDynamics> rd,
                                double e0, int direction, int nodes);

  double rotation_speed(double theta) const {
    const double gap = e0_ - rd_->potential(theta);
    return direction_ * std::sqrt(std::max(0.0, 2.0 * gap / rd_->mass(theta)));
  }

  std::shared_ptr<const ReducedDynamics> rd_;
  OrbitKind kind_ = OrbitKind::Rotation;
  double e0_ = 0.0;
  int direction_ = +1;
  double center_ = 0.0, radius_ = 0.0;    // oscillations
  double theta1_ = 0.0, theta2_ = 0.0;    // turning points, theta1 < theta2
  PeriodicTable<double> phi1_tab_, phi2_tab_;
};

/// Decide whether the E0 level set is a rotation or an oscillation by the
/// sign pattern of E0 - V on the quadrature grid.  Degenerate levels
/// (equilibria, empty sets) and multi-component level sets throw.
inline OrbitKind classify(const ReducedDynamics& rd, double e0) {
  if (!rd.lagrangian())
    throw Error("classify: reduced dynamics are not Lagrangian");
  const double eps = 1e-9 * (1.0 + std::abs(e0));
  const int n = rd.grid_size();
  const double h = rd.period() / n;
  int sign_changes = 0;
  double gmin = std::numeric_limits<double>::infinity();
  double gmax = -std::numeric_limits<double>::infinity();
  double prev = e0 - rd.potential(0.0);
  for (int i = 1; i <= n; ++i) {
    const double g = e0 - rd.potential(wrap_into(i * h, rd.period()));
    if ((g > 0.0) != (prev > 0.0)) ++sign_changes;
    gmin = std::min(gmin, g);
    gmax = std::max(gmax, g);
    prev = g;
  }
  if (gmax <= eps) {
    std::ostringstream os;
    os << "classify: E0 = " << e0
       << " is at or below the potential minimum (degenerate level set)";
    throw ClassificationError(os.str());
  }
  if (gmin > eps) return OrbitKind::Rotation;
  if (sign_changes == 2 && gmin < -eps) return OrbitKind::Oscillation;
  if (sign_changes > 2) {
    std::ostringstream os;
    os << "classify: level set at E0 = " << e0 << " has " << sign_changes
       << " potential crossings (disconnected, unsupported)";
    throw ClassificationError(os.str());
  }
  std::ostringstream os;
  os << "classify: level set at E0 = " << e0
     << " grazes the potential (degenerate)";
  throw ClassificationError(os.str());
}

/// Build the explicit parameterization of the orbit at E0.  Oscillation
/// turning points are located by bisection to 1e-12.
inline OrbitSpec parameterize(std::shared_ptr<const ReducedDynamics> rd,
                              double e0, int direction = +1, int nodes = 1024) {
  OrbitSpec orb;
  orb.rd_ = rd;
  orb.e0_ = e0;
  orb.direction_ = direction >= 0 ? +1 : -1;
  orb.kind_ = classify(*rd, e0);

  if (orb.kind_ == OrbitKind::Rotation) {
    std::vector<double> p1(nodes), p2(nodes);
    for (int i = 0; i < nodes; ++i) {
      const double s = rd->period() * static_cast<double>(i) / nodes;
      p1[i] = s;
      p2[i] = orb.rotation_speed(s);
    }
    orb.phi1_tab_ = PeriodicTable<double>(rd->period(), std::move(p1));
    orb.phi2_tab_ = PeriodicTable<double>(rd->period(), std::move(p2));
    return orb;
  }

  // Locate the connected band where E0 - V > 0, possibly wrapping theta = 0.
  const int n = rd->grid_size();
  const double h = rd->period() / n;
  auto gap = [&](double th) { return e0 - rd->potential(wrap_into(th, rd->period())); };
  int up = -1, down = -1;
  for (int i = 0; i < n; ++i) {
    const double a = gap(i * h), b = gap((i + 1) * h);
    if (a <= 0.0 && b > 0.0) up = i;
    if (a > 0.0 && b <= 0.0) down = i;
  }
  if (up < 0 || down < 0)
    throw ClassificationError("parameterize: no bracketing interval for the turning points");
  auto bisect = [&](double lo, double hi) {
    // gap(lo), gap(hi) straddle zero.
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
      const double mid = 0.5 * (lo + hi);
      if ((gap(lo) > 0.0) == (gap(mid) > 0.0))
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  };
  double th_low = bisect(up * h, (up + 1) * h);          // entering the band
  double th_high = bisect(down * h, (down + 1) * h);     // leaving the band
  if (th_high < th_low) th_high += rd->period();         // band wraps zero
  orb.theta1_ = th_low;
  orb.theta2_ = th_high;
  orb.center_ = 0.5 * (th_low + th_high);
  orb.radius_ = 0.5 * (th_high - th_low);
  // Canonical representative of the center.
  const double cw = wrap_diff(orb.center_, rd->period());
  orb.theta1_ += cw - orb.center_;
  orb.theta2_ += cw - orb.center_;
  orb.center_ = cw;

  std::vector<double> p1(nodes), p2(nodes);
  for (int i = 0; i < nodes; ++i) {
    const double s = 2.0 * M_PI * static_cast<double>(i) / nodes;
    const double th = orb.center_ + orb.radius_ * std::cos(s);
    p1[i] = th;
    p2[i] = orb.radius_ * std::sin(s) / orb.scaling(th);
  }
  orb.phi1_tab_ = PeriodicTable<double>(2.0 * M_PI, std::move(p1));
  orb.phi2_tab_ = PeriodicTable<double>(2.0 * M_PI, std::move(p2));
  return orb;
}

/// CSV export of the orbit polyline, columns s, phi1, phi2.
inline void write_orbit_csv(const OrbitSpec& orb, std::ostream& os,
                            int samples = 512) {
  os << "s,phi1,phi2\n";
  char buf[120];
  for (int i = 0; i <= samples; ++i) {
    const double s = orb.period() * static_cast<double>(i) / samples;
    const auto p = orb.param(s);
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", s, p[0], p[1]);
    os << buf;
  }
}

}  // namespace dvhc
