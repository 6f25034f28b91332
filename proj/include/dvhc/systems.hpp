#pragma once

#include <map>
#include <string>

#include "dvhc/mechanics.hpp"
#include "dvhc/vhc.hpp"

namespace dvhc {

/// A named mechanical system bundled with the constraint it is meant to run
/// under, plus a canonical parameter string used for gain fingerprints.
struct BuiltinSystem {
  MechanicalSystem mech;
  Vhc vhc;
  std::string canonical;
};

/// Two degrees of freedom, unit inertia, gravity on the first joint only and
/// the actuator on the second, constrained to q2 = beta sin q1.  The reduced
/// dynamics are exactly a hanging pendulum: thdd = -g sin th, M = 1,
/// V = g (1 - cos th).  Used as the analytically solvable fixture.
///
/// The potential carries a spring term (mu/2)(q2 - beta sin q1)^2 that
/// vanishes on the constraint curve together with its gradient, so it leaves
/// the constrained dynamics untouched.  Off the curve it couples the two
/// coordinates; without it, translating the curve merely shifts theta and
/// the translated family cannot influence the constrained energy at all.
inline BuiltinSystem make_pendulum_fixture(double g = 1.0, double beta = 0.5,
                                           double mu = 0.4) {
  BuiltinSystem b{
      MechanicalSystem{
          ConfigSpace::torus(2, 2.0 * M_PI),
          [](const Vec&) { return Mat::Identity(2, 2); },
          [](const Vec&, const Vec&) { return Mat::Zero(2, 2); },
          [g, beta, mu](const Vec& q) {
            const double w = q[1] - beta * std::sin(q[0]);
            return Vec{{g * std::sin(q[0]) - mu * w * beta * std::cos(q[0]),
                        mu * w}};
          },
          [](const Vec&) { return Mat{{0.0}, {1.0}}; },
          [](const Vec&) { return RowVec{{1.0, 0.0}}; },
          [](const Vec&) { return std::vector<Mat>{Mat::Zero(2, 2), Mat::Zero(2, 2)}; },
      },
      Vhc{},
      ""};
  b.vhc.constraint = [beta](const Vec& q) {
    return Vec{{q[1] - beta * std::sin(q[0])}};
  };
  b.vhc.jacobian = [beta](const Vec& q) {
    return Mat{{-beta * std::cos(q[0]), 1.0}};
  };
  b.vhc.hessians = [beta](const Vec& q) {
    Mat H = Mat::Zero(2, 2);
    H(0, 0) = beta * std::sin(q[0]);
    return std::vector<Mat>{H};
  };
  b.vhc.curve = [beta](double th) { return Vec{{th, beta * std::sin(th)}}; };
  b.vhc.curve_d1 = [beta](double th) { return Vec{{1.0, beta * std::cos(th)}}; };
  b.vhc.curve_d2 = [beta](double th) { return Vec{{0.0, -beta * std::sin(th)}}; };
  b.vhc.period = 2.0 * M_PI;
  b.vhc.graph_coordinate = 0;
  char buf[128];
  std::snprintf(buf, sizeof buf, "pendulum-fixture;g=%.17g;beta=%.17g;mu=%.17g",
                g, beta, mu);
  b.canonical = buf;
  return b;
}

/// Roll profile of the PVTOL constraint, q1 = f(q2).  The reflection
/// antisymmetry f(pi - x) = -f(x) makes the constrained dynamics Lagrangian.
inline double pvtol_profile(double x, double a1, double b2) {
  return a1 * std::cos(x) + b2 * std::sin(2.0 * x);
}
inline double pvtol_profile_d1(double x, double a1, double b2) {
  return -a1 * std::sin(x) + 2.0 * b2 * std::cos(2.0 * x);
}
inline double pvtol_profile_d2(double x, double a1, double b2) {
  return -a1 * std::cos(x) - 4.0 * b2 * std::sin(2.0 * x);
}

/// Planar VTOL aircraft riding a unit circle after an inner-loop feedback:
///   q1dd = g sin q1 - cos(q1 - q2) q2d^2 + sin(q1 - q2) u
///   q2dd = u
/// with q1 the roll angle and q2 the position angle.  Written against the
/// model equation with D = I, B = (sin(q1 - q2), 1)^T, Bperp = (1, -sin(q1 -
/// q2)), grad P = (-g sin q1, 0) and C(q, qd) qd = (cos(q1 - q2) q2d^2, 0).
/// The constraint q1 = f(q2) keeps the vehicle from rolling over while it
/// circles.
inline BuiltinSystem make_pvtol_circle(double g = 9.8, double a1 = 1.0,
                                       double b2 = 0.15) {
  BuiltinSystem b{
      MechanicalSystem{
          ConfigSpace::torus(2, 2.0 * M_PI),
          [](const Vec&) { return Mat::Identity(2, 2); },
          [](const Vec& q, const Vec& qd) {
            Mat C = Mat::Zero(2, 2);
            C(0, 1) = std::cos(q[0] - q[1]) * qd[1];
            return C;
          },
          [g](const Vec& q) { return Vec{{-g * std::sin(q[0]), 0.0}}; },
          [](const Vec& q) { return Mat{{std::sin(q[0] - q[1])}, {1.0}}; },
          [](const Vec& q) { return RowVec{{1.0, -std::sin(q[0] - q[1])}}; },
          [](const Vec&) { return std::vector<Mat>{Mat::Zero(2, 2), Mat::Zero(2, 2)}; },
      },
      Vhc{},
      ""};
  b.vhc.constraint = [a1, b2](const Vec& q) {
    return Vec{{q[0] - pvtol_profile(q[1], a1, b2)}};
  };
  b.vhc.jacobian = [a1, b2](const Vec& q) {
    return Mat{{1.0, -pvtol_profile_d1(q[1], a1, b2)}};
  };
  b.vhc.hessians = [a1, b2](const Vec& q) {
    Mat H = Mat::Zero(2, 2);
    H(1, 1) = -pvtol_profile_d2(q[1], a1, b2);
    return std::vector<Mat>{H};
  };
  b.vhc.curve = [a1, b2](double th) {
    return Vec{{pvtol_profile(th, a1, b2), th}};
  };
  b.vhc.curve_d1 = [a1, b2](double th) {
    return Vec{{pvtol_profile_d1(th, a1, b2), 1.0}};
  };
  b.vhc.curve_d2 = [a1, b2](double th) {
    return Vec{{pvtol_profile_d2(th, a1, b2), 0.0}};
  };
  b.vhc.period = 2.0 * M_PI;
  b.vhc.graph_coordinate = 1;
  char buf[128];
  std::snprintf(buf, sizeof buf, "pvtol-circle;g=%.17g;a1=%.17g;b2=%.17g", g, a1, b2);
  b.canonical = buf;
  return b;
}

/// Registry used by the scenario front end.  Unknown keys in params throw.
inline BuiltinSystem make_builtin_system(
    const std::string& name, const std::map<std::string, double>& params = {}) {
  auto take = [&params](const std::string& key, double fallback) {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  };
  auto reject_unknown = [&params](std::initializer_list<const char*> known) {
    for (const auto& [k, v] : params) {
      (void)v;
      bool ok = false;
      for (const char* kn : known) ok = ok || k == kn;
      if (!ok) throw Error("unknown system parameter: " + k);
    }
  };
  if (name == "pendulum-fixture") {
    reject_unknown({"g", "beta", "mu"});
    return make_pendulum_fixture(take("g", 1.0), take("beta", 0.5),
                                 take("mu", 0.4));
  }
  if (name == "pvtol-circle") {
    reject_unknown({"g", "a1", "b2"});
    return make_pvtol_circle(take("g", 9.8), take("a1", 1.0), take("b2", 0.15));
  }
  throw Error("unknown built-in system: " + name);
}

}  // namespace dvhc
