#pragma once

#include <complex>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include "dvhc/core.hpp"
#include "dvhc/grid.hpp"
#include "dvhc/rk4.hpp"
#include "dvhc/transverse.hpp"

namespace dvhc {

/// Periodic state and input weights of the quadratic cost.  Symmetry and
/// positive definiteness are sampled when the solver runs.
struct PeriodicWeights {
  std::function<Mat(double)> Q;
  std::function<Mat(double)> R;

  static PeriodicWeights constant(Mat q, Mat r) {
    return {[q = std::move(q)](double) { return q; },
            [r = std::move(r)](double) { return r; }};
  }
};

/// Periodic stabilizing gain K(t) = -R(t)^{-1} B(t)^T Pi(t) together with the
/// Riccati solution it came from and the closed-loop multipliers, sampled on
/// a uniform grid with cubic periodic interpolation.
class PeriodicGain {
 public:
  PeriodicGain() = default;
  PeriodicGain(double period, std::vector<Mat> k_nodes, std::vector<Mat> pi_nodes,
               CVec multipliers, std::string fingerprint = {})
      : period_(period),
        k_(period, std::move(k_nodes)),
        pi_(period, std::move(pi_nodes)),
        multipliers_(std::move(multipliers)),
        fingerprint_(std::move(fingerprint)) {}

  double period() const { return period_; }
  Mat K(double t) const { return k_.eval(t); }
  Mat Pi(double t) const { return pi_.eval(t); }
  const CVec& closed_loop_multipliers() const { return multipliers_; }
  std::size_t grid_size() const { return k_.size(); }
  const std::string& fingerprint() const { return fingerprint_; }
  void set_fingerprint(std::string fp) { fingerprint_ = std::move(fp); }
  const std::vector<Mat>& k_nodes() const { return k_.nodes(); }
  const std::vector<Mat>& pi_nodes() const { return pi_.nodes(); }
  /// || Pi(T) - Pi(0) || from the generating subspace propagation.
  double periodicity_residual() const { return periodicity_residual_; }
  void set_periodicity_residual(double r) { periodicity_residual_ = r; }

 private:
  double period_ = 0.0;
  PeriodicTable<Mat> k_;
  PeriodicTable<Mat> pi_;
  CVec multipliers_;
  std::string fingerprint_;
  double periodicity_residual_ = 0.0;
};

namespace detail {

/// Real basis of the stable invariant subspace of a symplectic period map.
/// Eigenvalues are required to split k inside / k outside the unit circle.
inline Mat stable_subspace(const Mat& monodromy, int k) {
  Eigen::ComplexEigenSolver<Mat> eig(monodromy);
  if (eig.info() != Eigen::Success)
    throw StabilizabilityError("periodic Riccati: eigen decomposition of the Hamiltonian period map failed");
  const auto& vals = eig.eigenvalues();
  std::vector<int> sel;
  for (int i = 0; i < vals.size(); ++i) {
    const double mag = std::abs(vals[i]);
    if (std::abs(mag - 1.0) < 1e-9)
      throw StabilizabilityError(
          "periodic Riccati: Hamiltonian multiplier on the unit circle (pair not stabilizable)");
    if (mag < 1.0) sel.push_back(i);
  }
  if (static_cast<int>(sel.size()) != k) {
    std::ostringstream os;
    os << "periodic Riccati: stable subspace has dimension " << sel.size()
       << ", expected " << k;
    throw StabilizabilityError(os.str());
  }
  Mat basis(2 * k, k);
  int col = 0;
  std::vector<bool> used(sel.size(), false);
  for (std::size_t i = 0; i < sel.size() && col < k; ++i) {
    if (used[i]) continue;
    const auto v = eig.eigenvectors().col(sel[i]);
    if (std::abs(vals[sel[i]].imag()) < 1e-12 * std::abs(vals[sel[i]])) {
      basis.col(col++) = v.real();
      used[i] = true;
    } else {
      basis.col(col++) = v.real();
      if (col < k) basis.col(col++) = v.imag();
      used[i] = true;
      // Mark the conjugate partner as consumed.
      for (std::size_t j = i + 1; j < sel.size(); ++j) {
        if (!used[j] &&
            std::abs(vals[sel[j]] - std::conj(vals[sel[i]])) <
                1e-8 * (1.0 + std::abs(vals[sel[i]]))) {
          used[j] = true;
          break;
        }
      }
    }
  }
  if (col != k)
    throw StabilizabilityError("periodic Riccati: could not realify the stable subspace");
  // Orthonormal representative of the same column space.
  Eigen::HouseholderQR<Mat> qr(basis);
  return Mat(qr.householderQ()) * Mat::Identity(2 * k, k);
}

}  // namespace detail

/// Solves the periodic matrix Riccati equation
///   -dPi/dt = A^T Pi + Pi A - Pi B R^{-1} B^T Pi + Q
/// by the one-shot generator method: integrate the 2(n-1)-dimensional
/// Hamiltonian flow over one period, take the stable invariant subspace
/// [X0; Y0] of its monodromy, set Pi(0) = Y0 X0^{-1}, and propagate the
/// subspace across the period with periodic QR re-orthonormalization to fill
/// the gain grid.  Validates periodicity, symmetry, positive semidefiniteness
/// and that every closed-loop multiplier lies strictly inside the unit disk.
inline PeriodicGain solve_periodic_riccati(const TransverseLTV& ltv,
                                           const PeriodicWeights& weights,
                                           int steps = 4096,
                                           int reorthonormalize_every = 32) {
  const int k = ltv.dim();
  const double T = ltv.period();
  const double dt = T / steps;

  auto weight_checked = [&](double t) {
    const Mat Q = weights.Q(t);
    const Mat R = weights.R(t);
    if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + Q.cwiseAbs().maxCoeff()) ||
        (R - R.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + R.cwiseAbs().maxCoeff()))
      throw Error("periodic Riccati: weights must be symmetric");
    Eigen::LLT<Mat> qc(Q), rc(R);
    if (qc.info() != Eigen::Success || rc.info() != Eigen::Success)
      throw Error("periodic Riccati: weights must be positive definite");
    return std::make_pair(Q, R);
  };
  weight_checked(0.0);
  weight_checked(0.37 * T);

  auto hamiltonian = [&](double t) -> Mat {
    const Mat A = ltv.A(t);
    const Mat B = ltv.B(t);
    const Mat Q = weights.Q(t);
    const Mat R = weights.R(t);
    Mat H(2 * k, 2 * k);
    H.topLeftCorner(k, k) = A;
    H.topRightCorner(k, k) = -B * R.llt().solve(B.transpose());
    H.bottomLeftCorner(k, k) = -Q;
    H.bottomRightCorner(k, k) = -A.transpose();
    return H;
  };
  auto ham_rhs = [&](double t, const Mat& X) -> Mat { return hamiltonian(t) * X; };

  // Period map of the Hamiltonian flow (no re-orthonormalization here; the
  // full transition matrix is needed, growth over one period is bounded).
  const Mat M = rk4_integrate(ham_rhs, 0.0, Mat(Mat::Identity(2 * k, 2 * k)), dt,
                              static_cast<std::size_t>(steps));
  if (!all_finite(M))
    throw StabilizabilityError("periodic Riccati: Hamiltonian period map diverged");

  Mat Z = detail::stable_subspace(M, k);

  auto pi_of = [&](const Mat& Zc, double t) -> Mat {
    const Mat X = Zc.topRows(k);
    const Mat Y = Zc.bottomRows(k);
    Eigen::FullPivLU<Mat> lu(X);
    if (!lu.isInvertible()) {
      std::ostringstream os;
      os << "periodic Riccati: leading subspace block singular at t = " << t;
      throw ConjugatePointError(os.str(), t);
    }
    const Mat Pi = Y * lu.inverse();
    return 0.5 * (Pi + Pi.transpose());
  };

  std::vector<Mat> pi_nodes(steps), k_nodes(steps);
  const Mat Pi0 = pi_of(Z, 0.0);
  for (int i = 0; i < steps; ++i) {
    const double t = dt * i;
    const Mat Pi = pi_of(Z, t);
    pi_nodes[i] = Pi;
    const Mat B = ltv.B(t);
    const Mat R = weights.R(t);
    k_nodes[i] = -R.llt().solve(B.transpose() * Pi);
    Z = rk4_step(ham_rhs, t, Z, dt);
    if ((i + 1) % reorthonormalize_every == 0) {
      Eigen::HouseholderQR<Mat> qr(Z);
      Z = Mat(qr.householderQ()) * Mat::Identity(2 * k, k);
    }
  }
  const Mat PiT = pi_of(Z, T);
  const double per_res = (PiT - Pi0).cwiseAbs().maxCoeff();
  if (per_res > 1e-6 * (1.0 + Pi0.cwiseAbs().maxCoeff())) {
    std::ostringstream os;
    os << "periodic Riccati: solution is not periodic (residual " << per_res << ")";
    throw StabilizabilityError(os.str());
  }
  for (int i = 0; i < steps; i += std::max(1, steps / 64)) {
    Eigen::SelfAdjointEigenSolver<Mat> eg(pi_nodes[i]);
    if (eg.eigenvalues().minCoeff() <
        -1e-9 * (1.0 + eg.eigenvalues().cwiseAbs().maxCoeff()))
      throw StabilizabilityError("periodic Riccati: solution is not positive semidefinite");
  }

  PeriodicGain gain(T, std::move(k_nodes), std::move(pi_nodes), CVec());
  const auto cl = monodromy_of(
      [&](double t) -> Mat { return ltv.A(t) + ltv.B(t) * gain.K(t); }, T,
      steps);
  for (int i = 0; i < cl.multipliers.size(); ++i)
    if (std::abs(cl.multipliers[i]) >= 1.0)
      throw StabilizabilityError(
          "periodic Riccati: a closed-loop multiplier left the unit disk");
  PeriodicGain out(T, std::vector<Mat>(gain.k_nodes()),
                   std::vector<Mat>(gain.pi_nodes()), cl.multipliers);
  out.set_periodicity_residual(per_res);
  return out;
}

/// Multipliers of zd = (A + B K) z for an externally supplied gain.
inline CVec closed_loop_multipliers(const TransverseLTV& ltv,
                                    const PeriodicGain& gain, int steps = 4096) {
  return monodromy_of(
             [&](double t) -> Mat { return ltv.A(t) + ltv.B(t) * gain.K(t); },
             ltv.period(), steps)
      .multipliers;
}

/// Residual of the interpolated solution plugged back into the Riccati
/// equation, max norm over a refined grid; limited by interpolation error.
inline double riccati_residual(const TransverseLTV& ltv,
                               const PeriodicWeights& weights,
                               const PeriodicGain& gain, int samples = 4096) {
  double worst = 0.0;
  const double h = 1e-6 * gain.period();
  for (int i = 0; i < samples; ++i) {
    const double t = gain.period() * (i + 0.37) / samples;
    const Mat Pid = (gain.Pi(t + h) - gain.Pi(t - h)) / (2.0 * h);
    const Mat A = ltv.A(t);
    const Mat B = ltv.B(t);
    const Mat Pi = gain.Pi(t);
    const Mat res = Pid + A.transpose() * Pi + Pi * A -
                    Pi * B * weights.R(t).llt().solve(B.transpose()) * Pi +
                    weights.Q(t);
    worst = std::max(worst, res.cwiseAbs().maxCoeff());
  }
  return worst;
}

/// Deviation of the Hamiltonian period map from the symplectic group,
/// || M^T J M - J ||_max.
inline double symplectic_residual(const TransverseLTV& ltv,
                                  const PeriodicWeights& weights,
                                  int steps = 4096) {
  const int k = ltv.dim();
  auto ham = [&](double t, const Mat& X) -> Mat {
    const Mat A = ltv.A(t), B = ltv.B(t);
    Mat H(2 * k, 2 * k);
    H.topLeftCorner(k, k) = A;
    H.topRightCorner(k, k) = -B * weights.R(t).llt().solve(B.transpose());
    H.bottomLeftCorner(k, k) = -weights.Q(t);
    H.bottomRightCorner(k, k) = -A.transpose();
    return H * X;
  };
  const Mat M = rk4_integrate(ham, 0.0, Mat(Mat::Identity(2 * k, 2 * k)),
                              ltv.period() / steps, static_cast<std::size_t>(steps));
  Mat J = Mat::Zero(2 * k, 2 * k);
  J.topRightCorner(k, k) = Mat::Identity(k, k);
  J.bottomLeftCorner(k, k) = -Mat::Identity(k, k);
  return (M.transpose() * J * M - J).cwiseAbs().maxCoeff();
}

/// Gain files carry the sample grid verbatim plus period, weights and a
/// scenario fingerprint, so design and simulation can run separately.
inline void save_gain(const PeriodicGain& gain, const Mat& Q, const Mat& R,
                      const std::string& path) {
  nlohmann::json j;
  j["format"] = "dvhc-gain-v1";
  j["fingerprint"] = gain.fingerprint();
  j["period"] = gain.period();
  const auto& ks = gain.k_nodes();
  j["rows"] = ks.front().rows();
  j["cols"] = ks.front().cols();
  auto flatten = [](const std::vector<Mat>& nodes) {
    std::vector<double> out;
    out.reserve(nodes.size() * nodes.front().size());
    for (const auto& m : nodes)
      for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    return out;
  };
  j["k_grid"] = flatten(ks);
  j["pi_grid"] = flatten(gain.pi_nodes());
  j["pi_rows"] = gain.pi_nodes().front().rows();
  std::vector<double> w;
  for (int r = 0; r < Q.rows(); ++r)
    for (int c = 0; c < Q.cols(); ++c) w.push_back(Q(r, c));
  j["weights_q"] = w;
  w.clear();
  for (int r = 0; r < R.rows(); ++r)
    for (int c = 0; c < R.cols(); ++c) w.push_back(R(r, c));
  j["weights_r"] = w;
  std::vector<std::vector<double>> mults;
  for (int i = 0; i < gain.closed_loop_multipliers().size(); ++i)
    mults.push_back({gain.closed_loop_multipliers()[i].real(),
                     gain.closed_loop_multipliers()[i].imag()});
  j["multipliers"] = mults;
  std::ofstream os(path);
  if (!os) throw Error("save_gain: cannot open " + path);
  os << j.dump(1) << "\n";
}

inline PeriodicGain load_gain(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("load_gain: cannot open " + path);
  nlohmann::json j;
  is >> j;
  if (j.value("format", "") != std::string("dvhc-gain-v1"))
    throw Error("load_gain: unrecognized gain file format");
  const int rows = j["rows"], cols = j["cols"], pi_rows = j["pi_rows"];
  const std::vector<double> kf = j["k_grid"], pf = j["pi_grid"];
  const auto nk = kf.size() / (rows * cols);
  std::vector<Mat> ks(nk, Mat(rows, cols)), pis(nk, Mat(pi_rows, pi_rows));
  std::size_t p = 0;
  for (auto& m : ks)
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = kf[p++];
  p = 0;
  for (auto& m : pis)
    for (int r = 0; r < pi_rows; ++r)
      for (int c = 0; c < pi_rows; ++c) m(r, c) = pf[p++];
  CVec mults(j["multipliers"].size());
  for (std::size_t i = 0; i < j["multipliers"].size(); ++i)
    mults[i] = std::complex<double>(j["multipliers"][i][0], j["multipliers"][i][1]);
  return PeriodicGain(j["period"], std::move(ks), std::move(pis), std::move(mults),
                      j.value("fingerprint", ""));
}

/// CSV dump of the gain entries over one period.
inline void write_gain_csv(const PeriodicGain& gain, std::ostream& os,
                           int samples = 512) {
  const Mat K0 = gain.K(0.0);
  os << "t";
  for (int r = 0; r < K0.rows(); ++r)
    for (int c = 0; c < K0.cols(); ++c) os << ",K" << r + 1 << c + 1;
  os << "\n";
  char buf[64];
  for (int i = 0; i <= samples; ++i) {
    const double t = gain.period() * static_cast<double>(i) / samples;
    std::snprintf(buf, sizeof buf, "%.17g", t);
    os << buf;
    const Mat K = gain.K(t);
    for (int r = 0; r < K.rows(); ++r)
      for (int c = 0; c < K.cols(); ++c) {
        std::snprintf(buf, sizeof buf, ",%.17g", K(r, c));
        os << buf;
      }
    os << "\n";
  }
}

}  // namespace dvhc
