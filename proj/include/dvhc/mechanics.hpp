#pragma once

#include <functional>
#include <optional>
#include <sstream>
#include <utility>
#include <vector>

#include "dvhc/core.hpp"

namespace dvhc {

/// Generalized cylinder: each coordinate is either a displacement on the
/// real line or an angle identified modulo its period.
class ConfigSpace {
 public:
  ConfigSpace(int n, std::vector<std::optional<double>> periods)
      : n_(n), periods_(std::move(periods)) {
    if (n_ < 2) throw Error("ConfigSpace: need at least two degrees of freedom");
    if (static_cast<int>(periods_.size()) != n_)
      throw Error("ConfigSpace: one period entry per coordinate required");
    for (const auto& p : periods_)
      if (p && *p <= 0.0) throw Error("ConfigSpace: periods must be positive");
  }

  /// All coordinates angular with a common period.
  static ConfigSpace torus(int n, double period) {
    return ConfigSpace(n, std::vector<std::optional<double>>(n, period));
  }

  int dof() const { return n_; }
  bool is_periodic(int i) const { return periods_[i].has_value(); }
  double period(int i) const { return *periods_[i]; }

  /// Wrap periodic coordinates into [0, T_i); identity on displacements.
  Vec wrap(Vec q) const {
    for (int i = 0; i < n_; ++i)
      if (periods_[i]) q[i] = wrap_into(q[i], *periods_[i]);
    return q;
  }

  /// Componentwise difference a - b with periodic coordinates reduced to
  /// their shortest representative.
  Vec diff(const Vec& a, const Vec& b) const {
    Vec d = a - b;
    for (int i = 0; i < n_; ++i)
      if (periods_[i]) d[i] = wrap_diff(d[i], *periods_[i]);
    return d;
  }

 private:
  int n_;
  std::vector<std::optional<double>> periods_;
};

/// Underactuated mechanical system
///   D(q) qdd + C(q, qd) qd + grad P(q) = B(q) tau
/// with one fewer actuator than degrees of freedom.  C(q, qd) must be linear
/// in qd so that C(q, qd) qd is a quadratic velocity form.  All callbacks are
/// pure; instances are immutable and safe to share between threads.
struct MechanicalSystem {
  ConfigSpace space;
  std::function<Mat(const Vec&)> inertia;                 // n x n, SPD
  std::function<Mat(const Vec&, const Vec&)> coriolis;    // n x n
  std::function<Vec(const Vec&)> potential_gradient;      // n
  std::function<Mat(const Vec&)> input_matrix;            // n x (n-1)
  std::function<RowVec(const Vec&)> annihilator;          // 1 x n
  /// Optional analytic partials dD/dq_i; central differences otherwise.
  std::optional<std::function<std::vector<Mat>(const Vec&)>> inertia_partials;

  int dof() const { return space.dof(); }

  /// Symmetrized quadratic coupling 0.5 (C(q,w) v + C(q,v) w).  For systems
  /// whose C comes from the inertia Christoffel symbols this has components
  /// w^T Q_i v.
  Vec coriolis_bilinear(const Vec& q, const Vec& w, const Vec& v) const {
    return 0.5 * (coriolis(q, w) * v + coriolis(q, v) * w);
  }

  /// On-demand positive definiteness check of D(q).
  bool inertia_is_spd(const Vec& q) const {
    Mat D = inertia(q);
    if (!all_finite(D)) return false;
    Eigen::LLT<Mat> llt(D);
    return llt.info() == Eigen::Success;
  }
};

/// The n matrices Q_i with (Q_i)_{jk} = (dD_{ij}/dq_k + dD_{ik}/dq_j -
/// dD_{kj}/dq_i) / 2, from analytic inertia partials when available and from
/// central differences with step 1e-6 (1 + |q_i|) otherwise.
inline std::vector<Mat> christoffel_q(const MechanicalSystem& mech,
                                      const Vec& q) {
  const int n = mech.dof();
  std::vector<Mat> dD(n);
  if (mech.inertia_partials) {
    dD = (*mech.inertia_partials)(q);
  } else {
    for (int i = 0; i < n; ++i) {
      const double h = 1e-6 * (1.0 + std::abs(q[i]));
      Vec qp = q, qm = q;
      qp[i] += h;
      qm[i] -= h;
      const Mat Dp = mech.inertia(qp);
      const Mat Dm = mech.inertia(qm);
      if (!all_finite(Dp) || !all_finite(Dm)) {
        std::ostringstream os;
        os << "christoffel_q: inertia matrix is not finite near q[" << i
           << "] = " << q[i];
        throw EvaluationError(os.str(), i);
      }
      dD[i] = (Dp - Dm) / (2.0 * h);
    }
  }
  std::vector<Mat> Q(n, Mat::Zero(n, n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        Q[i](j, k) = 0.5 * (dD[k](i, j) + dD[j](i, k) - dD[i](k, j));
  return Q;
}

/// qdd from the model equation; throws ConditioningError if D(q) is not a
/// well-conditioned SPD matrix.
inline Vec forward_dynamics(const MechanicalSystem& mech, const Vec& q,
                            const Vec& qd, const Vec& tau) {
  const Mat D = mech.inertia(q);
  if (!all_finite(D))
    throw EvaluationError("forward_dynamics: inertia matrix is not finite");
  const Vec rhs = mech.input_matrix(q) * tau - mech.coriolis(q, qd) * qd -
                  mech.potential_gradient(q);
  Eigen::LLT<Mat> llt(D);
  if (llt.info() != Eigen::Success)
    throw ConditioningError("forward_dynamics: inertia matrix is not positive definite");
  if (llt.rcond() < 1e-14)
    throw ConditioningError("forward_dynamics: inertia matrix is numerically singular");
  return llt.solve(rhs);
}

}  // namespace dvhc
