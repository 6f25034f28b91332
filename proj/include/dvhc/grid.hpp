#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "dvhc/core.hpp"

namespace dvhc {

// Uniform-grid sampled functions with local cubic (Catmull-Rom)
// interpolation.  Two boundary behaviours are needed: plain periodic
// extension for the function tables (A(t), K(t), orbit coordinates) and
// periodic-plus-linear-drift extension for cumulative integrals, whose
// value over one period need not return to zero.

namespace detail {

template <class T>
T catmull_rom(const T& p0, const T& p1, const T& p2, const T& p3, double u) {
  const double u2 = u * u;
  const double u3 = u2 * u;
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * u +
                (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u2 +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u3);
}

template <class T>
T catmull_rom_deriv(const T& p0, const T& p1, const T& p2, const T& p3,
                    double u, double h) {
  const double u2 = u * u;
  return (0.5 * ((-p0 + p2) + 2.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u +
                 3.0 * (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u2)) *
         (1.0 / h);
}

// Integral of the Catmull-Rom segment over u in [0,1], times h.
template <class T>
T catmull_rom_segment_integral(const T& p0, const T& p1, const T& p2,
                               const T& p3, double h) {
  return h * 0.5 *
         ((2.0 * p1) + (-p0 + p2) * 0.5 +
          (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * (1.0 / 3.0) +
          (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * 0.25);
}

}  // namespace detail

/// T-periodic function sampled at N uniform nodes t_j = j T / N.
template <class T>
class PeriodicTable {
 public:
  PeriodicTable() = default;
  PeriodicTable(double period, std::vector<T> nodes)
      : period_(period), nodes_(std::move(nodes)) {}

  double period() const { return period_; }
  std::size_t size() const { return nodes_.size(); }
  double step() const { return period_ / static_cast<double>(nodes_.size()); }
  const std::vector<T>& nodes() const { return nodes_; }

  T eval(double t) const {
    const double h = step();
    const double x = wrap_into(t, period_) / h;
    const auto j = static_cast<std::ptrdiff_t>(std::floor(x));
    const double u = x - static_cast<double>(j);
    return detail::catmull_rom(at(j - 1), at(j), at(j + 1), at(j + 2), u);
  }

  T deriv(double t) const {
    const double h = step();
    const double x = wrap_into(t, period_) / h;
    const auto j = static_cast<std::ptrdiff_t>(std::floor(x));
    const double u = x - static_cast<double>(j);
    return detail::catmull_rom_deriv(at(j - 1), at(j), at(j + 1), at(j + 2), u,
                                     h);
  }

 private:
  const T& at(std::ptrdiff_t j) const {
    const auto n = static_cast<std::ptrdiff_t>(nodes_.size());
    std::ptrdiff_t k = j % n;
    if (k < 0) k += n;
    return nodes_[static_cast<std::size_t>(k)];
  }

  double period_ = 0.0;
  std::vector<T> nodes_;
};

/// Cumulative integral of a T-periodic scalar function, extended beyond one
/// period by its per-period drift: P(t + T) = P(t) + P(T).
class CumulativeTable {
 public:
  CumulativeTable() = default;

  /// values[j] = f(j T / N) for j = 0..N-1; builds P with P(0) = 0 by exact
  /// integration of the interpolating cubic on each segment.
  CumulativeTable(double period, const std::vector<double>& values)
      : period_(period) {
    const std::size_t n = values.size();
    prefix_.resize(n + 1);
    prefix_[0] = 0.0;
    const double h = period / static_cast<double>(n);
    auto at = [&](std::ptrdiff_t j) {
      std::ptrdiff_t k = j % static_cast<std::ptrdiff_t>(n);
      if (k < 0) k += static_cast<std::ptrdiff_t>(n);
      return values[static_cast<std::size_t>(k)];
    };
    for (std::size_t j = 0; j < n; ++j) {
      const auto sj = static_cast<std::ptrdiff_t>(j);
      prefix_[j + 1] =
          prefix_[j] + detail::catmull_rom_segment_integral(
                           at(sj - 1), at(sj), at(sj + 1), at(sj + 2), h);
    }
  }

  double period() const { return period_; }

  /// Integral of f from 0 to t.
  double eval(double t) const {
    const auto n = static_cast<std::ptrdiff_t>(prefix_.size() - 1);
    const double h = period_ / static_cast<double>(n);
    const double laps = std::floor(t / period_);
    const double tw = t - laps * period_;
    const double x = tw / h;
    auto j = static_cast<std::ptrdiff_t>(std::floor(x));
    if (j >= n) j = n - 1;
    const double u = x - static_cast<double>(j);
    const double v = detail::catmull_rom(at(j - 1), at(j), at(j + 1), at(j + 2), u);
    return v + laps * drift();
  }

  /// Integral over one full period.
  double drift() const { return prefix_.back(); }

 private:
  double at(std::ptrdiff_t j) const {
    const auto n = static_cast<std::ptrdiff_t>(prefix_.size() - 1);
    if (j < 0) return prefix_[static_cast<std::size_t>(j + n)] - drift();
    if (j > n) return prefix_[static_cast<std::size_t>(j - n)] + drift();
    return prefix_[static_cast<std::size_t>(j)];
  }

  double period_ = 0.0;
  std::vector<double> prefix_;
};

}  // namespace dvhc
