#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dvhc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;
using CVec = Eigen::VectorXcd;

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A user-supplied callback produced a non-finite value.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, int coordinate = -1)
      : Error(what), coordinate_(coordinate) {}
  int coordinate() const { return coordinate_; }

 private:
  int coordinate_;
};

/// A linear solve hit an ill-conditioned or indefinite matrix.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

/// A constraint-regularity condition failed (vanishing decoupling term).
class RegularityError : public Error {
 public:
  explicit RegularityError(const std::string& what,
                           double where = std::numeric_limits<double>::quiet_NaN())
      : Error(what), where_(where) {}
  double where() const { return where_; }

 private:
  double where_;
};

/// An energy level does not select a supported closed orbit.
class ClassificationError : public Error {
 public:
  using Error::Error;
};

/// The orbit tangency assumption of the transverse linearization failed.
class NonTransversalityError : public Error {
 public:
  using Error::Error;
};

/// The implicit representation of the orbit is rank deficient.
class ImplicitizationError : public Error {
 public:
  using Error::Error;
};

/// The periodic pair is not stabilizable (or the stable subspace is defective).
class StabilizabilityError : public Error {
 public:
  using Error::Error;
};

/// The Riccati subspace flow hit a singular leading block at some time.
class ConjugatePointError : public Error {
 public:
  ConjugatePointError(const std::string& what, double time)
      : Error(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

/// A state left the retraction tube around the constraint curve.
class OutOfTubeError : public Error {
 public:
  using Error::Error;
};

/// The translation parameter left its certified interval.
class IntervalError : public Error {
 public:
  using Error::Error;
};

/// A gain file does not belong to the scenario asking to use it.
class FingerprintError : public Error {
 public:
  using Error::Error;
};

/// Scenario file syntax or schema problem, with a 1-based location.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line, int column)
      : Error(what), line_(line), column_(column) {}
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

/// x reduced modulo period into [0, period).
inline double wrap_into(double x, double period) {
  double r = std::fmod(x, period);
  if (r < 0.0) r += period;
  // fmod of a slightly negative x can land exactly on period.
  if (r >= period) r -= period;
  return r;
}

/// Signed difference reduced into [-period/2, period/2).
inline double wrap_diff(double d, double period) {
  return d - period * std::round(d / period);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace dvhc
