#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include "dvhc/core.hpp"
#include "dvhc/grid.hpp"
#include "dvhc/mechanics.hpp"

namespace dvhc {

/// Virtual holonomic constraint h(q) = 0 of order n-1, together with a
/// regular parameterization sigma of its zero set, closed with period T_c.
struct Vhc {
  std::function<Vec(const Vec&)> constraint;               // (n-1)
  std::function<Mat(const Vec&)> jacobian;                 // (n-1) x n
  /// Hessians of the components of h; when absent they are approximated by
  /// central differences of the Jacobian with step 1e-5.
  std::optional<std::function<std::vector<Mat>(const Vec&)>> hessians;
  std::function<Vec(double)> curve;     // sigma(theta)
  std::function<Vec(double)> curve_d1;  // sigma'(theta)
  std::function<Vec(double)> curve_d2;  // sigma''(theta)
  double period = 0.0;                  // T_c
  /// Index of the coordinate that equals theta along sigma, when the curve
  /// is a graph over one coordinate.  Enables the cheap retraction mode.
  std::optional<int> graph_coordinate;

  std::vector<Mat> hessians_at(const Vec& q) const {
    if (hessians) return (*hessians)(q);
    const int n = static_cast<int>(q.size());
    const Mat J0 = jacobian(q);
    const int m = static_cast<int>(J0.rows());
    std::vector<Mat> dJ(n);
    const double h = 1e-5;
    for (int k = 0; k < n; ++k) {
      Vec qp = q, qm = q;
      qp[k] += h;
      qm[k] -= h;
      dJ[k] = (jacobian(qp) - jacobian(qm)) / (2.0 * h);
    }
    std::vector<Mat> H(m, Mat::Zero(n, n));
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k)
          H[i](j, k) = 0.5 * (dJ[k](i, j) + dJ[j](i, k));
    return H;
  }
};

struct RegularityVerdict {
  bool regular = false;
  double min_abs = 0.0;     // min over the grid of |Bperp D sigma'|
  double argmin_theta = 0.0;
  double tolerance = 0.0;
};

/// Samples |Bperp(sigma) D(sigma) sigma'| on a uniform grid; the constraint
/// is regular when the sampled minimum stays above tolerance.  A failed
/// check is a verdict, not an error.
inline RegularityVerdict check_regularity(const MechanicalSystem& mech,
                                          const Vhc& vhc, int grid_size = 256) {
  if (grid_size < 64) throw Error("check_regularity: grid_size must be >= 64");
  RegularityVerdict v;
  v.min_abs = std::numeric_limits<double>::infinity();
  double scale = 0.0;
  bool sign_change = false;
  double prev = 0.0;
  for (int i = 0; i <= grid_size; ++i) {
    const double theta = vhc.period * static_cast<double>(i % grid_size) / grid_size;
    const Vec q = vhc.curve(theta);
    const RowVec bp = mech.annihilator(q);
    const Vec Ds = mech.inertia(q) * vhc.curve_d1(theta);
    const double val = (bp * Ds).value();
    scale = std::max(scale, bp.norm() * Ds.norm());
    // A sign flip between samples proves a zero between them.
    if (i > 0 && (val > 0.0) != (prev > 0.0)) sign_change = true;
    prev = val;
    if (std::abs(val) < v.min_abs) {
      v.min_abs = std::abs(val);
      v.argmin_theta = theta;
    }
  }
  v.tolerance = 1e-8 * (1.0 + scale);
  v.regular = !sign_change && v.min_abs > v.tolerance;
  return v;
}

/// Input-output linearizing feedback rendering the constraint manifold of a
/// static VHC attractive, with output dynamics edd + kd ed + kp e = 0.
inline Vec static_vhc_stabilizer(const MechanicalSystem& mech, const Vhc& vhc,
                                 const Vec& q, const Vec& qd, double kp,
                                 double kd) {
  const Mat J = vhc.jacobian(q);
  const Mat D = mech.inertia(q);
  Eigen::LLT<Mat> llt(D);
  if (llt.info() != Eigen::Success)
    throw ConditioningError("static_vhc_stabilizer: inertia matrix is not positive definite");
  const Mat JDinv = llt.solve(J.transpose()).transpose();
  const Mat A = JDinv * mech.input_matrix(q);
  Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (smin <= 1e-12 * (1.0 + smax)) {
    std::ostringstream os;
    os << "static_vhc_stabilizer: decoupling matrix is singular (sigma_min/sigma_max = "
       << smin / (smax > 0 ? smax : 1.0) << ")";
    throw RegularityError(os.str());
  }
  const Vec e = vhc.constraint(q);
  const Vec ed = J * qd;
  const auto hess = vhc.hessians_at(q);
  Vec Hq(e.size());
  for (int i = 0; i < e.size(); ++i) Hq[i] = qd.dot(hess[i] * qd);
  const Vec rhs = JDinv * (mech.coriolis(q, qd) * qd + mech.potential_gradient(q)) -
                  Hq - kp * e - kd * ed;
  return svd.solve(rhs);
}

/// Motion on the constraint manifold: thdd = Psi1(th) + Psi2(th) thd^2, with
/// the virtual mass M and potential V defined by
///   M(th) = exp(-2 int_0^th Psi2),  V(th) = -int_0^th Psi1 M.
/// The reduced dynamics are Lagrangian exactly when M and V are T_c-periodic,
/// in which case E = M thd^2 / 2 + V is conserved along the flow.
class ReducedDynamics {
 public:
  ReducedDynamics() = default;

  double period() const { return period_; }
  bool lagrangian() const { return lagrangian_; }
  double mass_period_residual() const { return mass_residual_; }
  double potential_period_residual() const { return potential_residual_; }

  double psi1(double theta) const { return psi1_(theta); }
  double psi2(double theta) const { return psi2_(theta); }

  double mass(double theta) const { return std::exp(-2.0 * psi2_int_.eval(theta)); }
  double potential(double theta) const { return -neg_v_int_.eval(theta); }

  /// Exact derivatives implied by the integral definitions.
  double mass_d1(double theta) const { return -2.0 * psi2(theta) * mass(theta); }
  double potential_d1(double theta) const { return -psi1(theta) * mass(theta); }

  double energy(double theta, double thetad) const {
    if (!lagrangian_)
      throw Error("energy: reduced dynamics are not Lagrangian (M or V is not periodic)");
    return 0.5 * mass(theta) * thetad * thetad + potential(theta);
  }

  /// d/dt of the energy along thdd = Psi1 + Psi2 thd^2; identically zero in
  /// exact arithmetic, useful as a consistency probe.
  double energy_rate(double theta, double thetad) const {
    const double thdd = psi1(theta) + psi2(theta) * thetad * thetad;
    return mass(theta) * thetad * thdd +
           0.5 * mass_d1(theta) * thetad * thetad * thetad +
           potential_d1(theta) * thetad;
  }

  double min_potential() const { return min_potential_; }
  double max_potential() const { return max_potential_; }
  int grid_size() const { return grid_size_; }

  /// Assemble from explicit coefficient functions (test fixtures, synthetic
  /// phase portraits).  Integrals are built on `nodes` grid points.
  static ReducedDynamics from_coefficients(std::function<double(double)> psi1,
                                           std::function<double(double)> psi2,
                                           double period, int nodes = 2048) {
    ReducedDynamics rd;
    rd.period_ = period;
    rd.psi1_ = std::move(psi1);
    rd.psi2_ = std::move(psi2);
    rd.grid_size_ = nodes;
    rd.build_tables();
    return rd;
  }

 private:
  friend ReducedDynamics reduce(const MechanicalSystem&, const Vhc&, int);

  void build_tables() {
    std::vector<double> p2(grid_size_);
    const double h = period_ / grid_size_;
    for (int i = 0; i < grid_size_; ++i) p2[i] = psi2_(i * h);
    psi2_int_ = CumulativeTable(period_, p2);

    std::vector<double> p1m(grid_size_);
    for (int i = 0; i < grid_size_; ++i)
      p1m[i] = psi1_(i * h) * std::exp(-2.0 * psi2_int_.eval(i * h));
    neg_v_int_ = CumulativeTable(period_, p1m);

    double m_scale = 0.0, v_scale = 0.0;
    min_potential_ = std::numeric_limits<double>::infinity();
    max_potential_ = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < grid_size_; ++i) {
      const double m = mass(i * h);
      const double v = potential(i * h);
      m_scale = std::max(m_scale, std::abs(m));
      v_scale = std::max(v_scale, std::abs(v));
      min_potential_ = std::min(min_potential_, v);
      max_potential_ = std::max(max_potential_, v);
    }
    mass_residual_ = std::abs(std::exp(-2.0 * psi2_int_.drift()) - 1.0);
    potential_residual_ = std::abs(neg_v_int_.drift());
    lagrangian_ = mass_residual_ < 1e-6 * (1.0 + m_scale) &&
                  potential_residual_ < 1e-6 * (1.0 + v_scale);
  }

  double period_ = 0.0;
  std::function<double(double)> psi1_, psi2_;
  CumulativeTable psi2_int_;   // int_0^th Psi2
  CumulativeTable neg_v_int_;  // int_0^th Psi1 M  (= -V)
  bool lagrangian_ = false;
  double mass_residual_ = 0.0, potential_residual_ = 0.0;
  double min_potential_ = 0.0, max_potential_ = 0.0;
  int grid_size_ = 2048;
};

namespace detail {

/// Shared coefficient kernel for the reduced dynamics of a (possibly
/// translated) constraint curve.  Everything is evaluated at q but with the
/// curve derivatives taken at theta; the denominator is Bperp D sigma'.
struct ReducedKernel {
  RowVec bp;
  Mat D;
  double den;

  ReducedKernel(const MechanicalSystem& mech, const Vec& q, const Vec& sd)
      : bp(mech.annihilator(q)), D(mech.inertia(q)), den((bp * (D * sd)).value()) {}
};

}  // namespace detail

/// Reduced dynamics induced by a regular VHC.  The quadratic velocity term
/// uses the system's Coriolis form directly, which coincides with the
/// inertia-Christoffel expression sum_i Bperp_i sigma'^T Q_i sigma' whenever
/// C derives from D.
inline ReducedDynamics reduce(const MechanicalSystem& mech, const Vhc& vhc,
                              int nodes = 2048) {
  ReducedDynamics rd;
  rd.period_ = vhc.period;
  rd.grid_size_ = nodes;

  // The coefficient closures own copies so the ReducedDynamics can outlive
  // its inputs.
  auto m = std::make_shared<const MechanicalSystem>(mech);
  auto v = std::make_shared<const Vhc>(vhc);

  auto kernel = [m, v](double theta, const Vec& q) -> detail::ReducedKernel {
    const Vec sd = v->curve_d1(theta);
    detail::ReducedKernel k(*m, q, sd);
    const double scale = k.bp.norm() * k.D.norm() * sd.norm();
    if (std::abs(k.den) <= 1e-10 * (1.0 + scale)) {
      std::ostringstream os;
      os << "reduce: regularity violated at theta = " << theta
         << " (Bperp D sigma' = " << k.den << ")";
      throw RegularityError(os.str(), theta);
    }
    return k;
  };

  rd.psi1_ = [m, v, kernel](double theta) {
    const Vec q = v->curve(theta);
    const auto k = kernel(theta, q);
    return -(k.bp * m->potential_gradient(q)).value() / k.den;
  };
  rd.psi2_ = [m, v, kernel](double theta) {
    const Vec q = v->curve(theta);
    const Vec sd = v->curve_d1(theta);
    const auto k = kernel(theta, q);
    const double num = (k.bp * (k.D * v->curve_d2(theta))).value() +
                       (k.bp * m->coriolis_bilinear(q, sd, sd)).value();
    return -num / k.den;
  };
  rd.build_tables();
  return rd;
}

/// theta state derivative of the reduced flow, for simulations.
inline Eigen::Vector2d reduced_rhs(const ReducedDynamics& rd,
                                   const Eigen::Vector2d& x) {
  return {x[1], rd.psi1(x[0]) + rd.psi2(x[0]) * x[1] * x[1]};
}

/// Emit (theta, thetad) polylines of constant-energy level sets as CSV with
/// columns level_index, energy, branch, theta, thetad.
inline void write_phase_portrait(const ReducedDynamics& rd,
                                 const std::vector<double>& energies,
                                 std::ostream& os, int samples = 512) {
  os << "level,energy,branch,theta,thetad\n";
  char buf[160];
  for (std::size_t li = 0; li < energies.size(); ++li) {
    const double e0 = energies[li];
    for (int branch = 0; branch < 2; ++branch) {
      const double sign = branch == 0 ? 1.0 : -1.0;
      for (int i = 0; i <= samples; ++i) {
        const double th = rd.period() * static_cast<double>(i) / samples;
        const double gap = e0 - rd.potential(th);
        if (gap < 0.0) continue;
        const double thd = sign * std::sqrt(2.0 * gap / rd.mass(th));
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%d,%.17g,%.17g\n", li, e0,
                      branch, th, thd);
        os << buf;
      }
    }
  }
}

}  // namespace dvhc
