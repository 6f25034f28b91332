#include <cstdio>
#include <memory>

#include "doctest.h"
#include "dvhc/riccati.hpp"
#include "dvhc/systems.hpp"

using namespace dvhc;

namespace {

TransverseLTV constant_ltv(const Mat& A, const Mat& B, double period,
                           int nodes = 512) {
  return TransverseLTV(period, std::vector<Mat>(nodes, A),
                       std::vector<Mat>(nodes, B));
}

TransverseLTV pendulum_ltv(double e0, const Vec& L) {
  auto b = make_pendulum_fixture();
  DynamicVhc dvhc(b.mech, b.vhc, L, 2.0);
  const auto erd = extend(b.mech, dvhc);
  auto rd = std::make_shared<const ReducedDynamics>(erd.base());
  return transverse_linearize_vhc(erd, parameterize(rd, e0, +1));
}

}  // namespace

TEST_CASE("scalar constant problem has the unit solution") {
  const double T = 2.0 * M_PI;
  const auto ltv = constant_ltv(Mat{{0.0}}, Mat{{1.0}}, T);
  const auto weights = PeriodicWeights::constant(Mat{{1.0}}, Mat{{1.0}});
  const auto gain = solve_periodic_riccati(ltv, weights);
  double worst_pi = 0.0, worst_k = 0.0;
  for (int i = 0; i < 256; ++i) {
    const double t = T * i / 256.0;
    worst_pi = std::max(worst_pi, std::abs(gain.Pi(t)(0, 0) - 1.0));
    worst_k = std::max(worst_k, std::abs(gain.K(t)(0, 0) + 1.0));
  }
  CHECK(worst_pi <= 1e-6);
  CHECK(worst_k <= 1e-6);
  REQUIRE(gain.closed_loop_multipliers().size() == 1);
  CHECK(std::abs(gain.closed_loop_multipliers()[0] - std::exp(-T)) <= 1e-8);
  CHECK(symplectic_residual(ltv, weights) <= 1e-6);
}

TEST_CASE("double integrator matches the hand-solved algebraic solution") {
  Mat A = Mat::Zero(2, 2);
  A(0, 1) = 1.0;
  const auto ltv = constant_ltv(A, Mat{{0.0}, {1.0}}, 1.3);
  const auto weights = PeriodicWeights::constant(Mat::Identity(2, 2), Mat{{1.0}});
  const auto gain = solve_periodic_riccati(ltv, weights);
  Mat expected(2, 2);
  expected << std::sqrt(3.0), 1.0, 1.0, std::sqrt(3.0);
  for (double t : {0.0, 0.4, 1.1}) {
    CHECK((gain.Pi(t) - expected).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((gain.K(t) - Mat{{-1.0, -std::sqrt(3.0)}}).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("zero gain reproduces the open-loop multipliers") {
  const auto ltv = pendulum_ltv(2.5, Vec{{0.5, 0.5}});
  PeriodicGain zero(ltv.period(), std::vector<Mat>(64, Mat::Zero(1, 3)),
                    std::vector<Mat>(64, Mat::Zero(3, 3)), CVec());
  const auto open = monodromy(ltv, 4096).multipliers;
  const auto closed = closed_loop_multipliers(ltv, zero, 4096);
  Eigen::VectorXd a = open.cwiseAbs(), b = closed.cwiseAbs();
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("pendulum transverse design is stabilizing with a small residual") {
  const auto ltv = pendulum_ltv(2.5, Vec{{0.5, 0.5}});
  const auto weights =
      PeriodicWeights::constant(Mat::Identity(3, 3), Mat{{1.0}});
  const auto gain = solve_periodic_riccati(ltv, weights);
  for (int i = 0; i < gain.closed_loop_multipliers().size(); ++i)
    CHECK(std::abs(gain.closed_loop_multipliers()[i]) < 1.0);
  double pi_scale = 0.0;
  for (double t : {0.0, 1.0, 3.0, 5.0})
    pi_scale = std::max(pi_scale, gain.Pi(t).cwiseAbs().maxCoeff());
  CHECK(riccati_residual(ltv, weights, gain) <= 1e-4 * (1.0 + pi_scale));
  CHECK(symplectic_residual(ltv, weights) <= 1e-6);
}

TEST_CASE("solution is insensitive to doubling the integration grid") {
  const auto ltv = pendulum_ltv(2.5, Vec{{0.5, 0.5}});
  const auto weights =
      PeriodicWeights::constant(Mat::Identity(3, 3), Mat{{1.0}});
  const auto g1 = solve_periodic_riccati(ltv, weights, 4096);
  const auto g2 = solve_periodic_riccati(ltv, weights, 8192);
  const double scale = g1.Pi(0.0).cwiseAbs().maxCoeff();
  CHECK((g1.Pi(0.0) - g2.Pi(0.0)).cwiseAbs().maxCoeff() <= 1e-6 * (1.0 + scale));
}

TEST_CASE("unactuated neutral directions are rejected") {
  // Zero dynamics with an identity-flow period map: the Hamiltonian
  // multipliers tie on the unit circle.
  const auto ltv = constant_ltv(Mat(Mat::Zero(2, 2)), Mat(Mat::Zero(2, 1)), 1.0);
  const auto weights = PeriodicWeights::constant(Mat::Identity(2, 2), Mat{{1.0}});
  CHECK_THROWS_AS(solve_periodic_riccati(ltv, weights), StabilizabilityError);
}

TEST_CASE("weights must be symmetric positive definite") {
  const auto ltv = constant_ltv(Mat{{0.0}}, Mat{{1.0}}, 1.0);
  CHECK_THROWS_AS(
      solve_periodic_riccati(ltv, PeriodicWeights::constant(Mat{{-1.0}}, Mat{{1.0}})),
      Error);
  CHECK_THROWS_AS(
      solve_periodic_riccati(ltv, PeriodicWeights::constant(Mat{{1.0}}, Mat{{0.0}})),
      Error);
}

TEST_CASE("gain files round-trip through disk") {
  const auto ltv = pendulum_ltv(2.5, Vec{{0.5, 0.5}});
  const auto weights =
      PeriodicWeights::constant(Mat::Identity(3, 3), Mat{{1.0}});
  auto gain = solve_periodic_riccati(ltv, weights, 1024);
  gain.set_fingerprint("fixture-abc123");
  const std::string path = "gain_roundtrip_test.json";
  save_gain(gain, Mat::Identity(3, 3), Mat{{1.0}}, path);
  const auto loaded = load_gain(path);
  std::remove(path.c_str());
  CHECK(loaded.fingerprint() == "fixture-abc123");
  CHECK(loaded.period() == gain.period());
  CHECK(loaded.grid_size() == gain.grid_size());
  double worst = 0.0;
  for (double t : {0.0, 0.7, 2.9, 6.1}) {
    worst = std::max(worst, (loaded.K(t) - gain.K(t)).cwiseAbs().maxCoeff());
    worst = std::max(worst, (loaded.Pi(t) - gain.Pi(t)).cwiseAbs().maxCoeff());
  }
  CHECK(worst == 0.0);
  Eigen::VectorXd ma = gain.closed_loop_multipliers().cwiseAbs();
  Eigen::VectorXd mb = loaded.closed_loop_multipliers().cwiseAbs();
  CHECK((ma - mb).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gain csv dump is well formed") {
  const auto ltv = constant_ltv(Mat{{0.0}}, Mat{{1.0}}, 1.0);
  const auto gain = solve_periodic_riccati(
      ltv, PeriodicWeights::constant(Mat{{1.0}}, Mat{{1.0}}), 512);
  std::ostringstream os;
  write_gain_csv(gain, os, 4);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "t,K11");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 5);
}
