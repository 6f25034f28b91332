#pragma once

#include <algorithm>
#include <memory>
#include <sstream>

#include "dvhc/core.hpp"
#include "dvhc/mechanics.hpp"
#include "dvhc/vhc.hpp"

namespace dvhc {

/// Feedback stabilizing the constraint manifold of the translated family
/// h(q - L s) = 0 on the double-integrator augmented system.  The output
/// dynamics under this input are edd + kd ed + kp e = 0 for any v.  L = 0
/// recovers the static stabilizer.
inline Vec translated_vhc_stabilizer(const MechanicalSystem& mech,
                                     const Vhc& vhc, const Vec& L, const Vec& q,
                                     const Vec& qd, double s, double sd,
                                     double v, double kp, double kd) {
  const Vec qt = q - L * s;
  const Vec qdt = qd - L * sd;
  const Mat J = vhc.jacobian(qt);
  const Mat D = mech.inertia(q);
  Eigen::LLT<Mat> llt(D);
  if (llt.info() != Eigen::Success)
    throw ConditioningError("translated_vhc_stabilizer: inertia matrix is not positive definite");
  const Mat JDinv = llt.solve(J.transpose()).transpose();
  const Mat As = JDinv * mech.input_matrix(q);
  Eigen::JacobiSVD<Mat> svd(As, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (smin <= 1e-12 * (1.0 + smax)) {
    std::ostringstream os;
    os << "translated_vhc_stabilizer: decoupling matrix singular at s = " << s;
    throw RegularityError(os.str(), s);
  }
  const Vec e = vhc.constraint(qt);
  const Vec ed = J * qdt;
  const auto hess = vhc.hessians_at(qt);
  Vec Hq(e.size());
  for (int i = 0; i < e.size(); ++i) Hq[i] = qdt.dot(hess[i] * qdt);
  const Vec rhs = JDinv * (mech.coriolis(q, qd) * qd + mech.potential_gradient(q)) +
                  (J * L) * v - Hq - kp * e - kd * ed;
  return svd.solve(rhs);
}

/// Symmetric interval (-a, a) of translation parameters over which the
/// translated constraint keeps the decoupling matrix invertible on its zero
/// set, certified on an s grid crossed with a theta grid.
inline double certify_regularity_interval(const MechanicalSystem& mech,
                                          const Vhc& vhc, const Vec& L,
                                          double s_max, int s_grid = 64,
                                          int theta_grid = 256) {
  const auto base = check_regularity(mech, vhc, theta_grid);
  if (!base.regular)
    throw RegularityError("certify_regularity_interval: base constraint is not regular",
                          base.argmin_theta);

  auto det_at = [&](double th, double s) {
    const Vec q = vhc.curve(th) + L * s;
    const Mat J = vhc.jacobian(vhc.curve(th));
    Eigen::LLT<Mat> llt(mech.inertia(q));
    if (llt.info() != Eigen::Success) return 0.0;
    const Mat As = Mat(llt.solve(J.transpose())).transpose() * mech.input_matrix(q);
    return As.determinant();
  };

  // Median |det A^0| over the curve sets the acceptance scale; the sign of
  // det A^0 is constant since the base constraint is regular.
  std::vector<double> det0(theta_grid);
  for (int i = 0; i < theta_grid; ++i)
    det0[i] = det_at(vhc.period * static_cast<double>(i) / theta_grid, 0.0);
  const double sign0 = det0[0] > 0.0 ? 1.0 : -1.0;
  std::vector<double> mag(theta_grid);
  for (int i = 0; i < theta_grid; ++i) mag[i] = std::abs(det0[i]);
  std::nth_element(mag.begin(), mag.begin() + theta_grid / 2, mag.end());
  const double tol = 1e-8 * mag[theta_grid / 2];

  // The signed determinant must stay on the base side of zero; a dip below
  // tolerance anywhere on the curve ends the certified range.
  auto ok = [&](double s) {
    for (int i = 0; i < theta_grid; ++i) {
      const double th = vhc.period * static_cast<double>(i) / theta_grid;
      if (sign0 * det_at(th, s) <= tol) return false;
    }
    return true;
  };

  double certified = 0.0;
  for (int k = 1; k <= s_grid; ++k) {
    const double s = s_max * static_cast<double>(k) / s_grid;
    if (!ok(s) || !ok(-s)) break;
    certified = s;
  }
  return certified;
}

/// Translated one-parameter constraint family h(q - L s) = 0 with a
/// certified symmetric regularity interval around s = 0.
struct DynamicVhc {
  Vhc base;
  Vec translation;
  double interval_half_width = 0.0;

  DynamicVhc(const MechanicalSystem& mech, Vhc base_in, Vec L, double s_max,
             int s_grid = 64, int theta_grid = 256)
      : base(std::move(base_in)), translation(std::move(L)) {
    if (translation.norm() == 0.0)
      throw Error("DynamicVhc: translation direction must be nonzero");
    interval_half_width = certify_regularity_interval(mech, base, translation,
                                                      s_max, s_grid, theta_grid);
    if (interval_half_width <= 0.0)
      throw RegularityError("DynamicVhc: no certifiable translation interval");
  }

  bool contains(double s) const { return std::abs(s) < interval_half_width; }

  void require(double s) const {
    if (!contains(s)) {
      std::ostringstream os;
      os << "translation parameter s = " << s
         << " is outside the certified interval (-" << interval_half_width
         << ", " << interval_half_width << ")";
      throw IntervalError(os.str());
    }
  }

  Vec constraint_error(const Vec& q, double s) const {
    return base.constraint(q - translation * s);
  }
};

/// Stabilizer of the dynamic constraint manifold; enforces s in the
/// certified interval before delegating.
inline Vec tau_star(const MechanicalSystem& mech, const DynamicVhc& dvhc,
                    const Vec& q, const Vec& qd, double s, double sd, double v,
                    double kp, double kd) {
  dvhc.require(s);
  return translated_vhc_stabilizer(mech, dvhc.base, dvhc.translation, q, qd, s,
                                   sd, v, kp, kd);
}

/// Constrained dynamics of the augmented system on the translated manifold:
///   thdd = Psi1(th,s) + Psi2(th,s) thd^2 + Psi3(th,s) thd sd
///        + Psi4(th,s) sd^2 + Psi5(th,s) v,   sdd = v,
/// all coefficients evaluated with the mechanics at q = sigma(th) + L s.
/// Restriction to s = 0 coincides with the reduced dynamics.
class ExtendedReducedDynamics {
 public:
  ExtendedReducedDynamics(const MechanicalSystem& mech, const DynamicVhc& dvhc,
                          ReducedDynamics base_rd)
      : mech_(std::make_shared<const MechanicalSystem>(mech)),
        vhc_(std::make_shared<const Vhc>(dvhc.base)),
        translation_(dvhc.translation),
        half_width_(dvhc.interval_half_width),
        base_rd_(std::move(base_rd)) {}

  const ReducedDynamics& base() const { return base_rd_; }
  const Vec& translation() const { return translation_; }
  double interval_half_width() const { return half_width_; }
  double period() const { return vhc_->period; }

  double psi1(double th, double s) const {
    const Frame f = frame(th, s);
    return -(f.bp * mech_->potential_gradient(f.q)).value() / f.den;
  }
  double psi2(double th, double s) const {
    const Frame f = frame(th, s);
    const double num = (f.bp * (f.D * vhc_->curve_d2(th))).value() +
                       (f.bp * mech_->coriolis_bilinear(f.q, f.sd, f.sd)).value();
    return -num / f.den;
  }
  double psi3(double th, double s) const {
    const Frame f = frame(th, s);
    const double num =
        2.0 * (f.bp * mech_->coriolis_bilinear(f.q, f.sd, translation_)).value();
    return -num / f.den;
  }
  double psi4(double th, double s) const {
    const Frame f = frame(th, s);
    const double num =
        (f.bp * mech_->coriolis_bilinear(f.q, translation_, translation_)).value();
    return -num / f.den;
  }
  double psi5(double th, double s) const {
    const Frame f = frame(th, s);
    return -(f.bp * (f.D * translation_)).value() / f.den;
  }

  /// Acceleration of the constrained coordinates for given (state, input).
  Eigen::Vector4d rhs(const Eigen::Vector4d& x, double v) const {
    const double th = x[0], thd = x[1], s = x[2], sd = x[3];
    const double thdd = psi1(th, s) + psi2(th, s) * thd * thd +
                        psi3(th, s) * thd * sd + psi4(th, s) * sd * sd +
                        psi5(th, s) * v;
    return {thd, thdd, sd, v};
  }

 private:
  struct Frame {
    Vec q, sd;
    RowVec bp;
    Mat D;
    double den;
  };

  Frame frame(double th, double s) const {
    Frame f;
    f.q = vhc_->curve(th) + translation_ * s;
    f.sd = vhc_->curve_d1(th);
    f.bp = mech_->annihilator(f.q);
    f.D = mech_->inertia(f.q);
    f.den = (f.bp * (f.D * f.sd)).value();
    const double scale = f.bp.norm() * f.D.norm() * f.sd.norm();
    if (std::abs(f.den) <= 1e-10 * (1.0 + scale)) {
      std::ostringstream os;
      os << "extended reduced dynamics: regularity violated at (theta, s) = ("
         << th << ", " << s << ")";
      throw RegularityError(os.str(), th);
    }
    return f;
  }

  std::shared_ptr<const MechanicalSystem> mech_;
  std::shared_ptr<const Vhc> vhc_;
  Vec translation_;
  double half_width_;
  ReducedDynamics base_rd_;
};

inline ExtendedReducedDynamics extend(const MechanicalSystem& mech,
                                      const DynamicVhc& dvhc, int nodes = 2048) {
  return ExtendedReducedDynamics(mech, dvhc, reduce(mech, dvhc.base, nodes));
}

/// Distance of a mechanical state to the constraint manifold, computed as a
/// nearest-point search over the (theta, thetad) cylinder: for each theta the
/// best thetad is the tangential projection, and theta is refined by golden
/// section after a coarse scan.  Configuration differences use the wrapped
/// metric of the configuration space.
class CurveDistance {
 public:
  CurveDistance(const MechanicalSystem& mech, const Vhc& vhc, int scan = 1024)
      : space_(mech.space), vhc_(std::make_shared<const Vhc>(vhc)), scan_(scan) {
    sigma_.reserve(scan_);
    sigma_d1_.reserve(scan_);
    for (int i = 0; i < scan_; ++i) {
      const double th = vhc.period * static_cast<double>(i) / scan_;
      sigma_.push_back(vhc.curve(th));
      sigma_d1_.push_back(vhc.curve_d1(th));
    }
  }

  /// || (q, qd) ||_Gamma.
  double to_constraint_manifold(const Vec& q, const Vec& qd) const {
    int best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (int i = 0; i < scan_; ++i) {
      const double val = sq_dist(q, qd, sigma_[i], sigma_d1_[i]);
      if (val < best_val) {
        best_val = val;
        best = i;
      }
    }
    const double h = vhc_->period / scan_;
    double lo = h * (best - 1), hi = h * (best + 1);
    // Golden section on the squared distance over the bracketing arc.
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = sq_at(q, qd, x1), f2 = sq_at(q, qd, x2);
    for (int it = 0; it < 60; ++it) {
      if (f1 < f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - gr * (hi - lo);
        f1 = sq_at(q, qd, x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + gr * (hi - lo);
        f2 = sq_at(q, qd, x2);
      }
    }
    return std::sqrt(std::min(f1, f2));
  }

 private:
  double sq_at(const Vec& q, const Vec& qd, double th) const {
    return sq_dist(q, qd, vhc_->curve(th), vhc_->curve_d1(th));
  }

  double sq_dist(const Vec& q, const Vec& qd, const Vec& sig,
                 const Vec& sigd) const {
    const Vec dq = space_.diff(q, sig);
    const double proj = sigd.dot(qd) / sigd.squaredNorm();
    const Vec dv = qd - sigd * proj;
    return dq.squaredNorm() + dv.squaredNorm();
  }

  ConfigSpace space_;
  std::shared_ptr<const Vhc> vhc_;
  int scan_;
  std::vector<Vec> sigma_, sigma_d1_;
};

/// || (q, qd, s, sd) ||_Gammabar via the translation identity
/// || (q - L s, qd - L sd) ||_Gamma.  Diagnostic only.
inline double gammabar_distance(const CurveDistance& dist, const Vec& L,
                                const Vec& q, const Vec& qd, double s,
                                double sd) {
  return dist.to_constraint_manifold(q - L * s, qd - L * sd);
}

inline double gammabar_distance(const MechanicalSystem& mech,
                                const DynamicVhc& dvhc, const Vec& q,
                                const Vec& qd, double s, double sd) {
  CurveDistance dist(mech, dvhc.base);
  return gammabar_distance(dist, dvhc.translation, q, qd, s, sd);
}

}  // namespace dvhc
