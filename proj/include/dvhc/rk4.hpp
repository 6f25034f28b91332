#pragma once

#include <cstddef>
#include <functional>

#include "dvhc/core.hpp"

namespace dvhc {

/// One classical Runge-Kutta step.  State must support a*x + y with double
/// coefficients (double, Eigen vectors and matrices all qualify).
template <class State, class Rhs>
State rk4_step(const Rhs& rhs, double t, const State& x, double dt) {
  const State k1 = rhs(t, x);
  const State k2 = rhs(t + 0.5 * dt, State(x + 0.5 * dt * k1));
  const State k3 = rhs(t + 0.5 * dt, State(x + 0.5 * dt * k2));
  const State k4 = rhs(t + dt, State(x + dt * k3));
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Fixed-step integration over [t0, t0 + n_steps*dt].  The observer, when
/// provided, sees (step index, time, state) including the initial state.
template <class State, class Rhs, class Observer>
State rk4_integrate(const Rhs& rhs, double t0, State x, double dt,
                    std::size_t n_steps, Observer&& observe) {
  observe(std::size_t{0}, t0, x);
  double t = t0;
  for (std::size_t i = 0; i < n_steps; ++i) {
    x = rk4_step(rhs, t, x, dt);
    t = t0 + static_cast<double>(i + 1) * dt;
    observe(i + 1, t, x);
  }
  return x;
}

template <class State, class Rhs>
State rk4_integrate(const Rhs& rhs, double t0, State x, double dt,
                    std::size_t n_steps) {
  return rk4_integrate(rhs, t0, std::move(x), dt, n_steps,
                       [](std::size_t, double, const State&) {});
}

}  // namespace dvhc
