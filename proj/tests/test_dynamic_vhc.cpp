#include <random>

#include "doctest.h"
#include "dvhc/dynamic_vhc.hpp"
#include "dvhc/rk4.hpp"
#include "dvhc/systems.hpp"

using namespace dvhc;

namespace {

// Unforced planar system whose input direction tilts with q2, paired with a
// steep constraint curve: the decoupling scalar of the translated constraint
// crosses zero at a finite translation.
BuiltinSystem make_crossing_fixture(double a = 1.5) {
  BuiltinSystem b{
      MechanicalSystem{
          ConfigSpace::torus(2, 2.0 * M_PI),
          [](const Vec&) { return Mat::Identity(2, 2); },
          [](const Vec&, const Vec&) { return Mat::Zero(2, 2); },
          [](const Vec&) { return Vec::Zero(2); },
          [](const Vec& q) { return Mat{{std::sin(q[1])}, {1.0}}; },
          [](const Vec& q) { return RowVec{{1.0, -std::sin(q[1])}}; },
          std::nullopt,
      },
      Vhc{},
      ""};
  b.vhc.constraint = [a](const Vec& q) { return Vec{{q[1] - a * std::sin(q[0])}}; };
  b.vhc.jacobian = [a](const Vec& q) { return Mat{{-a * std::cos(q[0]), 1.0}}; };
  b.vhc.curve = [a](double th) { return Vec{{th, a * std::sin(th)}}; };
  b.vhc.curve_d1 = [a](double th) { return Vec{{1.0, a * std::cos(th)}}; };
  b.vhc.curve_d2 = [a](double th) { return Vec{{0.0, -a * std::sin(th)}}; };
  b.vhc.period = 2.0 * M_PI;
  b.vhc.graph_coordinate = 0;
  return b;
}

// Full augmented closed loop under the translated-constraint stabilizer:
// state (q, qd, s, sd), input v supplied as a function of time.
template <class VFun>
Vec augmented_rhs(const MechanicalSystem& mech, const DynamicVhc& dvhc,
                  double kp, double kd, const VFun& vfun, double t,
                  const Vec& x) {
  const int n = mech.dof();
  const Vec q = x.segment(0, n), qd = x.segment(n, n);
  const double s = x[2 * n], sd = x[2 * n + 1];
  const double v = vfun(t);
  const Vec tau = tau_star(mech, dvhc, q, qd, s, sd, v, kp, kd);
  Vec dx(2 * n + 2);
  dx << qd, forward_dynamics(mech, q, qd, tau), sd, v;
  return dx;
}

}  // namespace

TEST_CASE("translation-invariant decoupling certifies the whole requested range") {
  auto b = make_pendulum_fixture();
  const double a = certify_regularity_interval(b.mech, b.vhc, Vec{{0.5, 0.5}}, 2.0);
  CHECK(a == doctest::Approx(2.0));
  const double ap = certify_regularity_interval(make_pvtol_circle().mech,
                                                make_pvtol_circle().vhc,
                                                Vec{{1.0, 1.0}}, 1.5);
  CHECK(ap == doctest::Approx(1.5));
}

TEST_CASE("certified interval stops at the decoupling zero crossing") {
  auto b = make_crossing_fixture();
  const Vec L{{0.0, 1.0}};
  CHECK(check_regularity(b.mech, b.vhc, 512).regular);

  // Independent oracle: bisection on the fine-grid minimum of the decoupling
  // scalar as a function of the translation parameter.
  auto min_decoupling = [&](double s) {
    double lo = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 8192; ++i) {
      const double th = 2.0 * M_PI * i / 8192.0;
      const double val =
          1.0 - 1.5 * std::cos(th) * std::sin(1.5 * std::sin(th) + s);
      lo = std::min(lo, val);
    }
    return lo;
  };
  REQUIRE(min_decoupling(0.0) > 0.0);
  REQUIRE(min_decoupling(0.5) < 0.0);
  double lo = 0.0, hi = 0.5;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (min_decoupling(mid) > 0.0 ? lo : hi) = mid;
  }
  const double s_star = 0.5 * (lo + hi);

  const double a = certify_regularity_interval(b.mech, b.vhc, L, 0.5, 64, 512);
  CHECK(a > 0.0);
  CHECK(a <= s_star + 1e-9);           // contained in (-|s*|, |s*|)
  CHECK(s_star - a <= 2.0 * 0.5 / 64); // and tight up to the s-grid spacing
}

TEST_CASE("zero translation is rejected, irregular base is rejected") {
  auto b = make_pendulum_fixture();
  CHECK_THROWS_AS(DynamicVhc(b.mech, b.vhc, Vec::Zero(2), 1.0), Error);
  auto bad = make_crossing_fixture(3.0);  // base already irregular
  CHECK_FALSE(check_regularity(bad.mech, bad.vhc, 512).regular);
  CHECK_THROWS_AS(
      certify_regularity_interval(bad.mech, bad.vhc, Vec{{0.0, 1.0}}, 0.5),
      RegularityError);
}

TEST_CASE("translated stabilizer keeps the translated manifold invariant under arbitrary v") {
  auto b = make_pendulum_fixture();
  const Vec L{{0.5, 0.5}};
  // The fixture's decoupling scalar is translation independent, so a wide
  // interval certifies; the double integrator drifts far over 10 s.
  DynamicVhc dvhc(b.mech, b.vhc, L, 100.0);
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> uth(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> uv(-1.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double th0 = uth(rng), thd0 = uv(rng), s0 = uv(rng), sd0 = 0.3 * uv(rng);
    // Piecewise-constant bounded input, frozen per trial.
    std::vector<double> vs(101);
    for (auto& v : vs) v = uv(rng);
    auto vfun = [&vs](double t) { return vs[static_cast<std::size_t>(t / 0.1)]; };
    Vec x(6);
    x << b.vhc.curve(th0) + L * s0, b.vhc.curve_d1(th0) * thd0 + L * sd0, s0, sd0;
    auto rhs = [&](double t, const Vec& xx) {
      return augmented_rhs(b.mech, dvhc, 100.0, 10.0, vfun, t, xx);
    };
    rk4_integrate(rhs, 0.0, x, 5e-3, 2000, [&](std::size_t, double, const Vec& xx) {
      const Vec qt = xx.head(2) - L * xx[4];
      const Vec qdt = xx.segment(2, 2) - L * xx[5];
      const double e = b.vhc.constraint(qt)[0];
      const double ed = (b.vhc.jacobian(qt) * qdt)(0);
      worst = std::max(worst, std::hypot(e, ed));
    });
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("constraint error under the translated stabilizer follows the linear model") {
  auto b = make_pendulum_fixture();
  const Vec L{{0.5, 0.5}};
  DynamicVhc dvhc(b.mech, b.vhc, L, 2.0);
  const double kp = 100.0, kd = 10.0, e0 = 0.05;
  const double th0 = 1.1, thd0 = 0.6, s0 = 0.2, sd0 = -0.1;
  auto vfun = [](double t) { return 0.8 * std::sin(3.0 * t); };
  Vec x(6);
  Vec q0 = b.vhc.curve(th0) + L * s0;
  q0[1] += e0;  // offsets h(q - L s) exactly by e0
  x << q0, b.vhc.curve_d1(th0) * thd0 + L * sd0, s0, sd0;
  const double omega = std::sqrt(kp - 0.25 * kd * kd);
  double worst = 0.0;
  auto rhs = [&](double t, const Vec& xx) {
    return augmented_rhs(b.mech, dvhc, kp, kd, vfun, t, xx);
  };
  rk4_integrate(rhs, 0.0, x, 1e-3, 5000, [&](std::size_t, double t, const Vec& xx) {
    const Vec qt = xx.head(2) - L * xx[4];
    const double e = b.vhc.constraint(qt)[0];
    const double ref = std::exp(-0.5 * kd * t) *
                       (e0 * std::cos(omega * t) +
                        (0.5 * kd * e0 / omega) * std::sin(omega * t));
    worst = std::max(worst, std::abs(e - ref));
  });
  CHECK(worst <= 1e-6);
}

TEST_CASE("zero translation reduces the stabilizer to the static one") {
  auto b = make_pendulum_fixture();
  std::mt19937 rng(29);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec q{{u(rng), u(rng)}}, qd{{u(rng), u(rng)}};
    const double v = u(rng);
    const Vec t1 = translated_vhc_stabilizer(b.mech, b.vhc, Vec::Zero(2), q, qd,
                                             u(rng), u(rng), v, 30.0, 7.0);
    const Vec t2 = static_vhc_stabilizer(b.mech, b.vhc, q, qd, 30.0, 7.0);
    CHECK(std::abs(t1[0] - t2[0]) <= 1e-13 * (1.0 + std::abs(t2[0])));
  }
}

TEST_CASE("stabilizer rejects translations outside the certified interval") {
  auto b = make_crossing_fixture();
  DynamicVhc dvhc(b.mech, b.vhc, Vec{{0.0, 1.0}}, 0.5, 64, 512);
  const Vec q = b.vhc.curve(0.3), qd = Vec::Zero(2);
  CHECK_THROWS_AS(
      tau_star(b.mech, dvhc, q, qd, 0.49, 0.0, 0.0, 10.0, 5.0),
      IntervalError);
}

TEST_CASE("restriction of the extended coefficients to s = 0 is the reduced dynamics") {
  for (auto b : {make_pendulum_fixture(), make_pvtol_circle()}) {
    DynamicVhc dvhc(b.mech, b.vhc, Vec{{0.7, 0.4}}, 0.8);
    const auto erd = extend(b.mech, dvhc);
    const auto& rd = erd.base();
    double worst = 0.0;
    for (int i = 0; i < 512; ++i) {
      const double th = 2.0 * M_PI * i / 512.0;
      worst = std::max(worst, std::abs(erd.psi1(th, 0.0) - rd.psi1(th)));
      worst = std::max(worst, std::abs(erd.psi2(th, 0.0) - rd.psi2(th)));
    }
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("flat-inertia decoupled fixture has the closed-form input coefficient") {
  auto b = make_pendulum_fixture();
  const Vec L{{0.6, -0.3}};
  DynamicVhc dvhc(b.mech, b.vhc, L, 1.0);
  const auto erd = extend(b.mech, dvhc);
  for (double th : {0.0, 0.9, 2.5, 5.0}) {
    for (double s : {-0.5, 0.0, 0.4}) {
      CHECK(erd.psi5(th, s) == doctest::Approx(-L[0]).epsilon(1e-12));
      CHECK(erd.psi3(th, s) == 0.0);
      CHECK(erd.psi4(th, s) == 0.0);
    }
  }
}

TEST_CASE("christoffel route and coriolis route agree on a curved mechanical system") {
  // D(q) with its own Christoffel Coriolis matrix; the extended coefficients
  // computed from C must match the inertia-derived quadratic forms.
  auto inertia = [](const Vec& q) {
    Mat D(2, 2);
    const double c = 0.2 * std::sin(q[0] + q[1]);
    D << 1.6 + 0.4 * std::cos(q[0]), c, c, 1.2;
    return D;
  };
  MechanicalSystem mech{
      ConfigSpace::torus(2, 2.0 * M_PI),
      inertia,
      {},
      [](const Vec& q) { return Vec{{std::sin(q[0]), 0.0}}; },
      [](const Vec&) { return Mat{{0.0}, {1.0}}; },
      [](const Vec&) { return RowVec{{1.0, 0.0}}; },
      std::nullopt,
  };
  mech.coriolis = [inertia](const Vec& q, const Vec& qd) {
    const double h = 1e-7;
    std::vector<Mat> dD(2);
    for (int i = 0; i < 2; ++i) {
      Vec qp = q, qm = q;
      qp[i] += h;
      qm[i] -= h;
      dD[i] = (inertia(qp) - inertia(qm)) / (2.0 * h);
    }
    Mat C = Mat::Zero(2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k)
          C(i, j) += 0.5 * (dD[k](i, j) + dD[j](i, k) - dD[i](k, j)) * qd[k];
    return C;
  };
  auto vhc = make_pendulum_fixture().vhc;
  const Vec L{{0.5, 0.2}};
  DynamicVhc dvhc(mech, vhc, L, 0.6);
  const auto erd = extend(mech, dvhc);

  for (double th : {0.3, 1.7, 4.2}) {
    for (double s : {-0.3, 0.0, 0.25}) {
      const Vec q = vhc.curve(th) + L * s;
      const Vec sd = vhc.curve_d1(th);
      const auto Q = christoffel_q(mech, q);
      const RowVec bp = mech.annihilator(q);
      const double den = (bp * (mech.inertia(q) * sd)).value();
      double n2 = (bp * (mech.inertia(q) * vhc.curve_d2(th))).value();
      double n3 = 0.0, n4 = 0.0;
      for (int i = 0; i < 2; ++i) {
        n2 += bp[i] * sd.dot(Q[i] * sd);
        n3 += bp[i] * 2.0 * sd.dot(Q[i] * L);
        n4 += bp[i] * L.dot(Q[i] * L);
      }
      CHECK(erd.psi2(th, s) == doctest::Approx(-n2 / den).epsilon(1e-7));
      CHECK(erd.psi3(th, s) == doctest::Approx(-n3 / den).epsilon(1e-7));
      CHECK(erd.psi4(th, s) == doctest::Approx(-n4 / den).epsilon(1e-7));
    }
  }
}

TEST_CASE("extended reduced model reproduces the full closed loop on the manifold") {
  // Integrate the full mechanical loop under tau_star and the constrained
  // model under the same input; on the manifold they must agree.
  for (auto b : {make_pendulum_fixture(), make_pvtol_circle()}) {
    const Vec L{{1.0, 1.0}};
    DynamicVhc dvhc(b.mech, b.vhc, L, 1.0);
    const auto erd = extend(b.mech, dvhc);
    auto vfun = [](double t) { return 0.3 * std::sin(2.0 * t) - 0.1; };
    const double th0 = 0.7, thd0 = 1.2;
    const int gc = *b.vhc.graph_coordinate;

    Vec x(6);
    x << b.vhc.curve(th0), b.vhc.curve_d1(th0) * thd0, 0.0, 0.0;
    Eigen::Vector4d z{th0, thd0, 0.0, 0.0};

    auto full = [&](double t, const Vec& xx) {
      return augmented_rhs(b.mech, dvhc, 100.0, 10.0, vfun, t, xx);
    };
    auto reduced = [&](double t, const Eigen::Vector4d& zz) {
      return erd.rhs(zz, vfun(t));
    };
    double worst = 0.0;
    const double dt = 1e-3;
    for (int i = 0; i < 5000; ++i) {
      const double t = i * dt;
      x = rk4_step(full, t, x, dt);
      z = rk4_step(reduced, t, z, dt);
      const double theta_full = x[gc] - L[gc] * x[4];
      worst = std::max(worst, std::abs(wrap_diff(theta_full - z[0], 2.0 * M_PI)));
      worst = std::max(worst, std::abs(x[4] - z[2]));
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("extended flow conserves the reduced energy when v = 0 on the zero leaf") {
  auto b = make_pendulum_fixture();
  DynamicVhc dvhc(b.mech, b.vhc, Vec{{0.5, 0.5}}, 1.0);
  const auto erd = extend(b.mech, dvhc);
  Eigen::Vector4d z{0.4, 1.6, 0.0, 0.0};
  const double E0 = erd.base().energy(z[0], z[1]);
  auto rhs = [&](double, const Eigen::Vector4d& zz) { return erd.rhs(zz, 0.0); };
  double worst = 0.0;
  rk4_integrate(rhs, 0.0, z, 1e-3, 100000,
                [&](std::size_t, double, const Eigen::Vector4d& zz) {
                  worst = std::max(worst,
                                   std::abs(erd.base().energy(zz[0], zz[1]) - E0));
                  worst = std::max(worst, std::abs(zz[2]));
                });
  CHECK(worst <= 1e-8);
}

TEST_CASE("distance to the translated manifold") {
  auto b = make_pendulum_fixture();
  DynamicVhc dvhc(b.mech, b.vhc, Vec{{0.5, 0.5}}, 1.5);
  CurveDistance dist(b.mech, b.vhc);
  const Vec L = dvhc.translation;

  SUBCASE("vanishes on the manifold") {
    const double th0 = 2.2, thd0 = -0.8, s0 = 0.6, sd0 = 0.3;
    const Vec q = b.vhc.curve(th0) + L * s0;
    const Vec qd = b.vhc.curve_d1(th0) * thd0 + L * sd0;
    CHECK(gammabar_distance(dist, L, q, qd, s0, sd0) <= 1e-8);
  }

  SUBCASE("matches a normal displacement to first order") {
    const double th0 = 1.0, thd0 = 0.9, s0 = 0.25, sd0 = -0.2;
    Vec w = b.vhc.curve_d1(th0);
    w = Vec{{-w[1], w[0]}} / w.norm();  // unit normal in configuration space
    for (double delta : {1e-3, 1e-4}) {
      const Vec q = b.vhc.curve(th0) + L * s0 + delta * w;
      const Vec qd = b.vhc.curve_d1(th0) * thd0 + L * sd0;
      const double d = gammabar_distance(dist, L, q, qd, s0, sd0);
      CHECK(std::abs(d - delta) <= 100.0 * delta * delta);
    }
  }

  SUBCASE("translation identity holds exactly") {
    std::mt19937 rng(41);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
      const Vec q{{u(rng), u(rng)}}, qd{{u(rng), u(rng)}};
      const double s = u(rng), sd = u(rng);
      const double d1 = gammabar_distance(dist, L, q, qd, s, sd);
      const double d2 =
          gammabar_distance(dist, L, Vec(q - L * s), Vec(qd - L * sd), 0.0, 0.0);
      CHECK(std::abs(d1 - d2) <= 1e-8);
    }
  }
}
