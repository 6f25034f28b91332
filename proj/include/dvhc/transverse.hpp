#pragma once

#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include "dvhc/core.hpp"
#include "dvhc/dynamic_vhc.hpp"
#include "dvhc/grid.hpp"
#include "dvhc/orbits.hpp"
#include "dvhc/rk4.hpp"

namespace dvhc {

/// Control-affine system xd = f(x) + g(x) u on R^n with m inputs.
struct ControlAffine {
  int n = 0;
  int m = 0;
  std::function<Vec(const Vec&)> drift;
  std::function<Mat(const Vec&)> input;
};

/// A closed orbit given two ways at once: a regular parameterization phi over
/// one period, and an implicit representation H whose zero set is the orbit
/// with full-rank Jacobian there.
struct OrbitImplicitization {
  std::function<Vec(double)> param;
  std::function<Vec(double)> param_d1;
  double period = 0.0;
  std::function<Vec(const Vec&)> implicit;           // (n-1) values
  std::function<Mat(const Vec&)> implicit_jacobian;  // (n-1) x n
  /// Optional analytic Jacobian of x -> dH_x f(x); finite differences with
  /// state-scaled step otherwise.
  std::optional<std::function<Mat(const Vec&)>> lie_derivative_jacobian;
};

/// Periodic linear system zd = A(t) z + B(t) u sampled on a uniform grid
/// with cubic periodic interpolation.
class TransverseLTV {
 public:
  TransverseLTV() = default;
  TransverseLTV(double period, std::vector<Mat> a_nodes, std::vector<Mat> b_nodes)
      : period_(period),
        dim_(static_cast<int>(a_nodes.front().rows())),
        inputs_(static_cast<int>(b_nodes.front().cols())),
        a_(period, std::move(a_nodes)),
        b_(period, std::move(b_nodes)) {}

  double period() const { return period_; }
  int dim() const { return dim_; }
  int inputs() const { return inputs_; }
  Mat A(double t) const { return a_.eval(t); }
  Mat B(double t) const { return b_.eval(t); }
  std::size_t grid_size() const { return a_.size(); }

 private:
  double period_ = 0.0;
  int dim_ = 0, inputs_ = 0;
  PeriodicTable<Mat> a_, b_;
};

/// Transverse linearization of a closed orbit of xd = f(x) + g(x) u along
/// the parameterization phi, expressed in the orbit parameter as time:
///   A(t) = (|phi'|^2 / <f(phi), phi'>) (dL_fH) dH^+,
///   B(t) = (|phi'|^2 / <f(phi), phi'>) dH g,
/// with dH^+ the right pseudoinverse.  The orbit is exponentially
/// stabilizable exactly when this periodic pair is stabilizable.
inline TransverseLTV transverse_linearize_general(const ControlAffine& sys,
                                                  const OrbitImplicitization& orb,
                                                  int nodes = 2048) {
  std::vector<Mat> As(nodes), Bs(nodes);
  for (int i = 0; i < nodes; ++i) {
    const double t = orb.period * static_cast<double>(i) / nodes;
    const Vec x = orb.param(t);
    const Vec xd = orb.param_d1(t);
    const Vec fx = sys.drift(x);
    const double denom = fx.dot(xd);
    if (std::abs(denom) <= 1e-10 * (1.0 + fx.norm() * xd.norm())) {
      std::ostringstream os;
      os << "transverse_linearize_general: <f, phi'> vanishes at t = " << t;
      throw NonTransversalityError(os.str());
    }
    const Vec Hx = orb.implicit(x);
    if (Hx.cwiseAbs().maxCoeff() > 1e-8 * (1.0 + x.norm()))
      throw ImplicitizationError(
          "transverse_linearize_general: H does not vanish on the supplied orbit");
    const Mat dH = orb.implicit_jacobian(x);
    Eigen::JacobiSVD<Mat> svd(dH);
    if (svd.singularValues().minCoeff() <=
        1e-10 * svd.singularValues().maxCoeff())
      throw ImplicitizationError(
          "transverse_linearize_general: dH is rank deficient on the orbit");

    Mat dLfH(dH.rows(), sys.n);
    if (orb.lie_derivative_jacobian) {
      dLfH = (*orb.lie_derivative_jacobian)(x);
    } else {
      auto lfh = [&](const Vec& y) -> Vec { return orb.implicit_jacobian(y) * sys.drift(y); };
      for (int j = 0; j < sys.n; ++j) {
        const double h = 1e-6 * (1.0 + x.norm());
        Vec xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        dLfH.col(j) = (lfh(xp) - lfh(xm)) / (2.0 * h);
      }
    }
    const double pref = xd.squaredNorm() / denom;
    const Mat pinv =
        Eigen::CompleteOrthogonalDecomposition<Mat>(dH).pseudoInverse();
    As[i] = pref * dLfH * pinv;
    Bs[i] = pref * dH * sys.input(x);
  }
  return TransverseLTV(orb.period, std::move(As), std::move(Bs));
}

/// Specialization to the constrained dynamics of a dynamic constraint with
/// implicit orbit representation H = (E - E0, s, sd).  The transverse pair
/// is 3 x 3 with one input,
///   A = [0 a12 a13; 0 0 eta; 0 0 0],  B = (b1, 0, eta)^T,
/// all entries scaled by the parameterization factor
///   eta = (phi1'^2 + phi2'^2) / (phi1' phi2 + phi2' (Psi1 + Psi2 phi2^2)).
inline TransverseLTV transverse_linearize_vhc(const ExtendedReducedDynamics& erd,
                                              const OrbitSpec& orbit,
                                              int nodes = 2048) {
  const auto& rd = erd.base();
  std::vector<Mat> As(nodes), Bs(nodes);
  const double ds = 1e-6;
  for (int i = 0; i < nodes; ++i) {
    const double t = orbit.period() * static_cast<double>(i) / nodes;
    const auto p = orbit.param(t);
    const auto pd = orbit.param_d1(t);
    const double th = p[0], p2 = p[1];
    const double psi1 = rd.psi1(th), psi2 = rd.psi2(th);
    const double den = pd[0] * p2 + pd[1] * (psi1 + psi2 * p2 * p2);
    if (std::abs(den) <= 1e-10 * (1.0 + pd.norm() * (std::abs(p2) + std::abs(psi1)))) {
      std::ostringstream os;
      os << "transverse_linearize_vhc: orbit tangency degenerates at t = " << t;
      throw NonTransversalityError(os.str());
    }
    const double eta = pd.squaredNorm() / den;
    const double M = rd.mass(th);
    const double dpsi1 = (erd.psi1(th, ds) - erd.psi1(th, -ds)) / (2.0 * ds);
    const double dpsi2 = (erd.psi2(th, ds) - erd.psi2(th, -ds)) / (2.0 * ds);
    const double a12 = eta * M * p2 * (dpsi1 + dpsi2 * p2 * p2);
    const double a13 = eta * M * p2 * p2 * erd.psi3(th, 0.0);
    const double b1 = eta * M * p2 * erd.psi5(th, 0.0);
    Mat A = Mat::Zero(3, 3);
    A(0, 1) = a12;
    A(0, 2) = a13;
    A(1, 2) = eta;
    Mat B = Mat::Zero(3, 1);
    B(0, 0) = b1;
    B(2, 0) = eta;
    As[i] = A;
    Bs[i] = B;
  }
  return TransverseLTV(orbit.period(), std::move(As), std::move(Bs));
}

/// Control-affine form of the constrained dynamics together with the energy
/// implicitization of the orbit, for feeding the general construction.
struct ExtendedAffineForm {
  ControlAffine sys;
  OrbitImplicitization orb;
};

inline ExtendedAffineForm make_extended_affine_form(
    std::shared_ptr<const ExtendedReducedDynamics> erd, const OrbitSpec& orbit) {
  ExtendedAffineForm out;
  out.sys.n = 4;
  out.sys.m = 1;
  out.sys.drift = [erd](const Vec& x) -> Vec {
    const Eigen::Vector4d dz = erd->rhs(Eigen::Vector4d(x), 0.0);
    return Vec{{dz[0], dz[1], dz[2], dz[3]}};
  };
  out.sys.input = [erd](const Vec& x) -> Mat {
    Mat g = Mat::Zero(4, 1);
    g(1, 0) = erd->psi5(x[0], x[2]);
    g(3, 0) = 1.0;
    return g;
  };
  const double e0 = orbit.energy_level();
  auto rd = std::make_shared<const ReducedDynamics>(erd->base());
  out.orb.period = orbit.period();
  OrbitSpec orbit_copy = orbit;
  out.orb.param = [orbit_copy](double t) -> Vec {
    const auto p = orbit_copy.param(t);
    return Vec{{p[0], p[1], 0.0, 0.0}};
  };
  out.orb.param_d1 = [orbit_copy](double t) -> Vec {
    const auto p = orbit_copy.param_d1(t);
    return Vec{{p[0], p[1], 0.0, 0.0}};
  };
  out.orb.implicit = [rd, e0](const Vec& x) -> Vec {
    return Vec{{rd->energy(x[0], x[1]) - e0, x[2], x[3]}};
  };
  out.orb.implicit_jacobian = [rd](const Vec& x) -> Mat {
    Mat J = Mat::Zero(3, 4);
    J(0, 0) = rd->potential_d1(x[0]) + 0.5 * rd->mass_d1(x[0]) * x[1] * x[1];
    J(0, 1) = rd->mass(x[0]) * x[1];
    J(1, 2) = 1.0;
    J(2, 3) = 1.0;
    return J;
  };
  return out;
}

struct Monodromy {
  Mat transition;   // state transition over one period
  CVec multipliers; // its eigenvalues
};

/// Monodromy of zd = A(t) z by fixed-step integration of the matrix flow.
inline Monodromy monodromy_of(const std::function<Mat(double)>& A, double period,
                              int steps = 2048) {
  if (steps < 256) throw Error("monodromy: need at least 256 steps");
  const int k = static_cast<int>(A(0.0).rows());
  auto rhs = [&A](double t, const Mat& Phi) -> Mat { return A(t) * Phi; };
  Mat Phi = rk4_integrate(rhs, 0.0, Mat(Mat::Identity(k, k)), period / steps,
                          static_cast<std::size_t>(steps));
  if (!all_finite(Phi))
    throw Error("monodromy: non-finite entries in the state transition matrix");
  Eigen::EigenSolver<Mat> eig(Phi);
  return {Phi, eig.eigenvalues()};
}

inline Monodromy monodromy(const TransverseLTV& ltv, int steps = 2048) {
  return monodromy_of([&ltv](double t) { return ltv.A(t); }, ltv.period(), steps);
}

enum class GramianVerdict { Controllable, Stabilizable, NotStabilizable };

struct GramianReport {
  Mat gramian;
  double min_eigenvalue = 0.0;
  double max_eigenvalue = 0.0;
  GramianVerdict verdict = GramianVerdict::NotStabilizable;
};

/// Controllability Gramian over one period,
///   W = int_0^T  Phi(T,t) B(t) B(t)^T Phi(T,t)^T dt,
/// co-integrated with the adjoint transition flow.  When W is singular the
/// verdict falls back to whether the period map restricted to the
/// uncontrolled subspace is contracting.
inline GramianReport stabilizability_gramian(const TransverseLTV& ltv,
                                             int steps = 2048) {
  if (steps < 256) throw Error("stabilizability_gramian: need at least 256 steps");
  const int k = ltv.dim();
  const double T = ltv.period();
  // State [Z | W] with Z(s) = Phi(T, T - s); ds runs forward from 0 to T.
  auto rhs = [&](double s, const Mat& S) -> Mat {
    const Mat Z = S.leftCols(k);
    const Mat Bt = ltv.B(T - s);
    Mat dS(k, 2 * k);
    dS.leftCols(k) = Z * ltv.A(T - s);
    dS.rightCols(k) = Z * Bt * Bt.transpose() * Z.transpose();
    return dS;
  };
  Mat S0(k, 2 * k);
  S0.leftCols(k) = Mat::Identity(k, k);
  S0.rightCols(k) = Mat::Zero(k, k);
  const Mat S = rk4_integrate(rhs, 0.0, S0, T / steps, static_cast<std::size_t>(steps));

  GramianReport rep;
  rep.gramian = 0.5 * (S.rightCols(k) + S.rightCols(k).transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(rep.gramian);
  rep.min_eigenvalue = eig.eigenvalues().minCoeff();
  rep.max_eigenvalue = eig.eigenvalues().maxCoeff();
  if (rep.max_eigenvalue > 0.0 &&
      rep.min_eigenvalue > 1e-8 * rep.max_eigenvalue) {
    rep.verdict = GramianVerdict::Controllable;
    return rep;
  }
  // Basis of the (numerically) unreachable subspace.
  std::vector<int> idx;
  for (int i = 0; i < k; ++i)
    if (eig.eigenvalues()[i] <= 1e-8 * std::max(rep.max_eigenvalue, 0.0))
      idx.push_back(i);
  Mat N(k, static_cast<int>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c)
    N.col(static_cast<int>(c)) = eig.eigenvectors().col(idx[c]);
  const Mat Phi = monodromy(ltv, steps).transition;
  const Mat R = N.transpose() * Phi * N;
  Eigen::EigenSolver<Mat> reig(R);
  const double rho = reig.eigenvalues().cwiseAbs().maxCoeff();
  rep.verdict = rho < 1.0 - 1e-9 ? GramianVerdict::Stabilizable
                                 : GramianVerdict::NotStabilizable;
  return rep;
}

/// CSV dump of the sampled pair, columns t, A11.., B11..
inline void write_ltv_csv(const TransverseLTV& ltv, std::ostream& os,
                          int samples = 512) {
  os << "t";
  for (int r = 0; r < ltv.dim(); ++r)
    for (int c = 0; c < ltv.dim(); ++c) os << ",A" << r + 1 << c + 1;
  for (int r = 0; r < ltv.dim(); ++r)
    for (int c = 0; c < ltv.inputs(); ++c) os << ",B" << r + 1 << c + 1;
  os << "\n";
  char buf[64];
  for (int i = 0; i <= samples; ++i) {
    const double t = ltv.period() * static_cast<double>(i) / samples;
    std::snprintf(buf, sizeof buf, "%.17g", t);
    os << buf;
    const Mat A = ltv.A(t), B = ltv.B(t);
    for (int r = 0; r < A.rows(); ++r)
      for (int c = 0; c < A.cols(); ++c) {
        std::snprintf(buf, sizeof buf, ",%.17g", A(r, c));
        os << buf;
      }
    for (int r = 0; r < B.rows(); ++r)
      for (int c = 0; c < B.cols(); ++c) {
        std::snprintf(buf, sizeof buf, ",%.17g", B(r, c));
        os << buf;
      }
    os << "\n";
  }
}

}  // namespace dvhc
