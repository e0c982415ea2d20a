#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include "tinyode/fixed.hpp"
#include "tinyode/tensor.hpp"

namespace tinyode {

// Explicit Euler integration over t in [0, 1] with step h = 1 / iterations:
// z_{j+1} = z_j + h * f(z_j, t_j).
template <class Z>
struct OdeState {
  Z z;
  double t = 0.0;
  int j = 0;
};

class OdeSchedule {
 public:
  explicit OdeSchedule(int iterations) : iterations_(iterations) {
    if (iterations < 1) throw std::invalid_argument("ODE solver needs at least one iteration");
  }

  int iterations() const { return iterations_; }
  double step() const { return 1.0 / iterations_; }
  // t_j = j * h, evaluated as j / C so that t_C is exactly 1.
  double time(int j) const { return static_cast<double>(j) / iterations_; }
  // h on the fixed datapath.
  FixedScalar fixed_step() const { return quantize_to_fixed(step(), kStepFormat); }

 private:
  int iterations_;
};

double euler_update(double z, double f, double h);
FloatTensor euler_update(const FloatTensor& z, const FloatTensor& f, double h);
// z + h * f with h in kStepFormat; one rounding back into z's format.
FixedTensor euler_update(const FixedTensor& z, const FixedTensor& f, const FixedScalar& h);

namespace detail {

inline double step_for(const OdeSchedule& s, double) { return s.step(); }
inline double step_for(const OdeSchedule& s, const FloatTensor&) { return s.step(); }
inline FixedScalar step_for(const OdeSchedule& s, const FixedTensor&) { return s.fixed_step(); }

}  // namespace detail

// One Euler iteration. `rhs(z, t)` must return a value shaped like z.
template <class Z, class Rhs>
OdeState<Z> ode_step(const OdeState<Z>& state, const OdeSchedule& schedule, Rhs&& rhs) {
  if (state.j < 0 || state.j >= schedule.iterations()) {
    throw std::out_of_range("ODE step index " + std::to_string(state.j) + " outside [0, " +
                            std::to_string(schedule.iterations()) + ")");
  }
  const double t = schedule.time(state.j);
  Z f = rhs(state.z, t);
  return {euler_update(state.z, f, detail::step_for(schedule, state.z)), schedule.time(state.j + 1), state.j + 1};
}

template <class Z, class Rhs>
OdeState<Z> ode_solve_state(Z z0, const OdeSchedule& schedule, Rhs&& rhs) {
  OdeState<Z> state{std::move(z0), 0.0, 0};
  while (state.j < schedule.iterations()) state = ode_step(state, schedule, rhs);
  return state;
}

template <class Z, class Rhs>
Z ode_solve(Z z0, const OdeSchedule& schedule, Rhs&& rhs) {
  return ode_solve_state(std::move(z0), schedule, std::forward<Rhs>(rhs)).z;
}

}  // namespace tinyode
