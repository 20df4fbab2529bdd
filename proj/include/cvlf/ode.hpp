#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cvlf/common.hpp"

// Explicit Runge-Kutta steppers shared by the plant simulator and the comparison system.
// State types are Eigen column vectors of any scalar type.

namespace cvlf::ode {

/// One classical fourth-order Runge-Kutta step of x' = rhs(t, x).
template <class State, class Rhs>
State rk4_step(const Rhs& rhs, typename State::Scalar t, const State& x,
               typename State::Scalar h) {
  using S = typename State::Scalar;
  const State k1 = rhs(t, x);
  const State k2 = rhs(t + h / S(2), (x + (h / S(2)) * k1).eval());
  const State k3 = rhs(t + h / S(2), (x + (h / S(2)) * k2).eval());
  const State k4 = rhs(t + h, (x + h * k3).eval());
  return x + (h / S(6)) * (k1 + S(2) * k2 + S(2) * k3 + k4);
}

struct AdaptiveOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double dt_min = 1e-12;
  double dt_max = 0.1;
  double dt_initial = 1e-3;
};

struct AdaptiveStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

/// Accepted node of an adaptive integration: time, state and derivative at that state
/// (the derivative makes cubic Hermite resampling possible).
template <class State>
struct DenseNode {
  double t;
  State x;
  State dx;
};

/// Dormand-Prince 5(4) with the standard step-size controller.
///
/// `observe(node)` is called for every accepted node including the initial one and may
/// return false to stop early. Throws IntegrationFault if the step size underflows dt_min.
template <class State, class Rhs, class Observer>
AdaptiveStats dopri5(const Rhs& rhs, double t0, double t1, State x, const AdaptiveOptions& opt,
                     Observer&& observe) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  // b - b* (error weights).
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  AdaptiveStats stats;
  double t = t0;
  State k1 = rhs(t, x);
  if (!observe(DenseNode<State>{t, x, k1})) return stats;
  double h = std::clamp(opt.dt_initial, opt.dt_min, opt.dt_max);

  while (t < t1) {
    bool last = false;
    if (t + h >= t1) {
      h = t1 - t;
      last = true;
    }
    const State k2 = rhs(t + c2 * h, (x + h * (a21 * k1)).eval());
    const State k3 = rhs(t + c3 * h, (x + h * (a31 * k1 + a32 * k2)).eval());
    const State k4 = rhs(t + c4 * h, (x + h * (a41 * k1 + a42 * k2 + a43 * k3)).eval());
    const State k5 =
        rhs(t + c5 * h, (x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)).eval());
    const State k6 =
        rhs(t + h, (x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5)).eval());
    const State x_new = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const State k7 = rhs(t + h, x_new);
    const State err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double err_norm = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double scale =
          opt.atol + opt.rtol * std::max(std::abs(double(x[i])), std::abs(double(x_new[i])));
      const double r = double(err[i]) / scale;
      err_norm += r * r;
    }
    err_norm = x.size() > 0 ? std::sqrt(err_norm / double(x.size())) : 0.0;
    if (!std::isfinite(err_norm)) err_norm = 1e10;

    if (err_norm <= 1.0) {
      t = last ? t1 : t + h;
      x = x_new;
      k1 = k7;
      ++stats.accepted;
      if (!observe(DenseNode<State>{t, x, k1})) return stats;
      const double factor = err_norm == 0.0 ? 5.0 : 0.9 * std::pow(err_norm, -0.2);
      h = std::min(opt.dt_max, h * std::clamp(factor, 0.2, 5.0));
    } else {
      ++stats.rejected;
      h *= std::clamp(0.9 * std::pow(err_norm, -0.2), 0.1, 1.0);
      if (h < opt.dt_min) {
        throw IntegrationFault("adaptive step size underflow at t=" + std::to_string(t));
      }
    }
  }
  return stats;
}

/// Cubic Hermite interpolation between two dense nodes.
template <class State>
State hermite(const DenseNode<State>& a, const DenseNode<State>& b, double t) {
  const double h = b.t - a.t;
  if (h <= 0.0) return a.x;
  const double s = (t - a.t) / h;
  const double h00 = (1 + 2 * s) * (1 - s) * (1 - s);
  const double h10 = s * (1 - s) * (1 - s);
  const double h01 = s * s * (3 - 2 * s);
  const double h11 = s * s * (s - 1);
  return h00 * a.x + (h10 * h) * a.dx + h01 * b.x + (h11 * h) * b.dx;
}

}  // namespace cvlf::ode
