#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cvlf/common.hpp"
#include "cvlf/comparison.hpp"
#include "cvlf/model.hpp"
#include "cvlf/report.hpp"
#include "cvlf/sampling.hpp"

namespace cvlf {

/// Storage function of one subsystem. Scalar storage has width 1; vector storage
/// (several stacked functions of the same x_i) has larger width.
struct StorageFunction {
  int width = 1;
  std::function<Vec(const Vec& x_i)> value;
  /// width x n_i Jacobian of `value`.
  std::function<Mat(const Vec& x_i)> gradient;
};

/// Vector Lyapunov function V(x) = (V_1(x_1), ..., V_N(x_N)), each V_i possibly vector valued.
struct VectorLyapunov {
  std::vector<StorageFunction> components;

  std::size_t subsystems() const { return components.size(); }

  int width(std::size_t i) const { return components.at(i).width; }

  int total_width() const {
    int w = 0;
    for (const auto& c : components) w += c.width;
    return w;
  }

  int offset(std::size_t i) const {
    int w = 0;
    for (std::size_t j = 0; j < i; ++j) w += components[j].width;
    return w;
  }
};

namespace detail {

inline void require_compatible(const VectorLyapunov& V, const StatePartition& p) {
  if (V.subsystems() != p.subsystems()) {
    throw DimensionError("VectorLyapunov has " + std::to_string(V.subsystems()) +
                         " components, partition has " + std::to_string(p.subsystems()));
  }
}

}  // namespace detail

/// Stacked values V_i(x_i).
inline Vec eval_v(const VectorLyapunov& V, const StatePartition& p, const Vec& x) {
  detail::require_compatible(V, p);
  detail::require_dim(x.size(), p.n(), "eval_v state");
  Vec out(V.total_width());
  for (std::size_t i = 0; i < p.subsystems(); ++i) {
    const Vec vi = V.components[i].value(p.state_block(x, i));
    detail::require_dim(vi.size(), V.width(i), "storage value");
    out.segment(V.offset(i), V.width(i)) = vi;
  }
  return out;
}

/// L_{f_i} V_i(x) and L_{g_i} V_i(x) for one subsystem, given f(x) already evaluated.
struct LieSplit {
  Vec drift;  // width
  Mat input;  // width x m_i
};

inline LieSplit lie_split(const VectorLyapunov& V, const CompositeSystem& sys, const Vec& x,
                          const Vec& f, std::size_t i) {
  const auto& p = sys.partition;
  const Mat grad = V.components[i].gradient(p.state_block(x, i));
  if (grad.rows() != V.width(i) || grad.cols() != p.state_dim(i)) {
    throw DimensionError("storage gradient " + std::to_string(i) + " has wrong shape");
  }
  LieSplit s;
  s.drift = grad * f.segment(p.state_offset(i), p.state_dim(i));
  if (p.input_dim(i) > 0) {
    s.input = grad * sys.input_block(x, i);
  } else {
    s.input = Mat(V.width(i), 0);
  }
  return s;
}

/// dV/dt along x' = f(x) + g(x) u, component i = grad V_i(x_i) (f_i(x) + g_i(x) u_i).
inline Vec lie_derivative(const VectorLyapunov& V, const CompositeSystem& sys, const Vec& x,
                          const Vec& u) {
  const auto& p = sys.partition;
  detail::require_compatible(V, p);
  const Vec dx = eval_dynamics(sys, x, u);
  Vec out(V.total_width());
  for (std::size_t i = 0; i < p.subsystems(); ++i) {
    const Mat grad = V.components[i].gradient(p.state_block(x, i));
    if (grad.rows() != V.width(i) || grad.cols() != p.state_dim(i)) {
      throw DimensionError("storage gradient " + std::to_string(i) + " has wrong shape");
    }
    out.segment(V.offset(i), V.width(i)) = grad * dx.segment(p.state_offset(i), p.state_dim(i));
  }
  return out;
}

/// Central finite-difference Jacobian of a storage function.
inline Mat finite_difference_gradient(const StorageFunction& s, const Vec& xi, double h = 1e-6) {
  Mat J(s.width, xi.size());
  for (Eigen::Index c = 0; c < xi.size(); ++c) {
    Vec plus = xi, minus = xi;
    const double step = h * std::max(1.0, std::abs(xi[c]));
    plus[c] += step;
    minus[c] -= step;
    J.col(c) = (s.value(plus) - s.value(minus)) / (2.0 * step);
  }
  return J;
}

/// Sampling configuration for the OCVLF and small-control falsifiers.
struct OcvlfCheckConfig {
  std::size_t output_samples = 64;
  std::size_t fiber_samples = 64;
  /// Candidate controls lie on the grid step * j, |step * j| <= control_radius (per axis).
  double control_radius = 100.0;
  double control_step = 0.5;
  /// Strict inequalities pass when lhs - rhs <= -tolerance.
  double tolerance = 1e-9;
  std::uint64_t seed = 0;
  /// Radius of the sampled domain; defaults to the system's rho.
  std::optional<double> radius;

  void validate() const {
    if (output_samples < 1 || fiber_samples < 1) {
      throw ConfigError("OcvlfCheckConfig: sample counts must be >= 1");
    }
    if (!(control_radius > 0.0)) throw ConfigError("OcvlfCheckConfig: control radius must be > 0");
    if (!(control_step > 0.0)) throw ConfigError("OcvlfCheckConfig: control step must be > 0");
    if (tolerance < 0.0) throw ConfigError("OcvlfCheckConfig: tolerance must be >= 0");
    if (radius && !(*radius > 0.0)) throw ConfigError("OcvlfCheckConfig: radius must be > 0");
  }
};

namespace detail {

/// Affine pieces a_j + b_j . u of the upper envelope max_j (a_j + b_j . u).
struct Envelope {
  std::vector<double> a;
  std::vector<Vec> b;
  std::vector<std::size_t> point;  // fiber point each piece came from

  double eval(const Vec& u, std::size_t* arg = nullptr) const {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double v = a[j] + (u.size() ? b[j].dot(u) : 0.0);
      if (v > best) {
        best = v;
        if (arg) *arg = point[j];
      }
    }
    return best;
  }
};

/// Golden-section minimization of a convex scalar function on [lo, hi].
template <class F>
double golden_section(const F& f, double lo, double hi, int iterations = 200) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - inv_phi * (hi - lo);
  double d = lo + inv_phi * (hi - lo);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < iterations && hi - lo > 1e-13 * std::max(1.0, std::abs(lo) + std::abs(hi));
       ++it) {
    if (fc <= fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - inv_phi * (hi - lo);
      fc = f(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (hi - lo);
      fd = f(d);
    }
  }
  return fc <= fd ? c : d;
}

/// Minimizes the convex envelope over a control set: either the grid box
/// |u_k| <= radius (step-spaced) or, when `ball` is set, the open ball |u| < *ball.
/// Returns the best control and its envelope value.
inline std::pair<Vec, double> minimize_envelope(const Envelope& env, int m, double radius,
                                                double step, std::optional<double> ball) {
  if (m == 0) return {Vec(0), env.eval(Vec(0))};

  double box = radius;
  if (ball) box = std::min(radius, *ball * (1.0 - 1e-9));
  std::vector<double> axis;
  const auto jmax = static_cast<long>(std::floor(box / step));
  for (long j = -jmax; j <= jmax; ++j) axis.push_back(static_cast<double>(j) * step);
  if (ball) {
    axis.insert(axis.begin(), -box);
    axis.push_back(box);
  }

  std::size_t total = 1;
  for (int k = 0; k < m; ++k) {
    total *= axis.size();
    if (total > 2'000'000) throw ConfigError("control grid too large; increase control_step");
  }

  Vec best_u = Vec::Zero(m);
  double best = env.eval(best_u);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    Vec u(m);
    for (int k = 0; k < m; ++k) {
      u[k] = axis[rem % axis.size()];
      rem /= axis.size();
    }
    if (ball && u.norm() >= *ball) continue;
    const double v = env.eval(u);
    if (v < best) {
      best = v;
      best_u = u;
    }
  }

  // Coordinate-wise golden refinement within one grid cell of the best point.
  for (int sweep = 0; sweep < (m == 1 ? 1 : 4); ++sweep) {
    for (int k = 0; k < m; ++k) {
      double lo = std::max(-box, best_u[k] - step);
      double hi = std::min(box, best_u[k] + step);
      if (ball) {
        Vec others = best_u;
        others[k] = 0.0;
        const double rest = *ball * (1.0 - 1e-9);
        const double lim2 = rest * rest - others.squaredNorm();
        if (lim2 <= 0.0) continue;
        lo = std::max(lo, -std::sqrt(lim2));
        hi = std::min(hi, std::sqrt(lim2));
      }
      if (!(hi > lo)) continue;
      Vec trial = best_u;
      const auto f = [&](double s) {
        trial[k] = s;
        return env.eval(trial);
      };
      const double s = golden_section(f, lo, hi);
      trial[k] = s;
      const double v = env.eval(trial);
      if (v < best) {
        best = v;
        best_u = trial;
      }
    }
  }
  return {best_u, best};
}

inline std::vector<int> global_output_indices(const CompositeSystem& sys, std::size_t i) {
  if (!sys.output_coordinates) {
    throw ConfigError("fiber sampling needs coordinate outputs (output_coordinates unset)");
  }
  const auto& p = sys.partition;
  std::vector<int> g;
  for (int c : sys.output_coordinates->at(i)) g.push_back(p.state_offset(i) + c);
  return g;
}

/// x with the output coordinates of subsystem i set to y and the rest taken from `free`.
inline Vec assemble_fiber_point(int n, const std::vector<int>& out_idx, const Vec& y,
                                const Vec& free) {
  Vec x(n);
  std::vector<bool> is_out(static_cast<std::size_t>(n), false);
  for (std::size_t k = 0; k < out_idx.size(); ++k) {
    x[out_idx[k]] = y[static_cast<Eigen::Index>(k)];
    is_out[static_cast<std::size_t>(out_idx[k])] = true;
  }
  Eigen::Index f = 0;
  for (int c = 0; c < n; ++c) {
    if (!is_out[static_cast<std::size_t>(c)]) x[c] = free[f++];
  }
  return x;
}

/// Envelope pieces L_fV_i(x) - Lambda_i(V(x)) + L_gV_i(x) u over a set of fiber points.
inline Envelope fiber_envelope(const VectorLyapunov& V, const ComparisonMap& lambda,
                               const CompositeSystem& sys, const std::vector<Vec>& points,
                               std::size_t i) {
  Envelope env;
  const auto& p = sys.partition;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const Vec& x = points[k];
    const Vec f = sys.drift(x);
    const LieSplit s = lie_split(V, sys, x, f, i);
    const Vec rhs = lambda.apply(eval_v(V, p, x)).segment(V.offset(i), V.width(i));
    for (int c = 0; c < V.width(i); ++c) {
      env.a.push_back(s.drift[c] - rhs[c]);
      env.b.push_back(s.input.row(c).transpose());
      env.point.push_back(k);
    }
  }
  return env;
}

using ControlBound = std::function<double(const Vec& y)>;

/// Shared search behind check_ocvlf and check_small_control.
inline std::vector<CheckReport> fiber_search(const VectorLyapunov& V, const ComparisonMap& lambda,
                                             const CompositeSystem& sys,
                                             const OcvlfCheckConfig& cfg,
                                             const std::vector<ControlBound>* bounds,
                                             const std::string& label) {
  cfg.validate();
  const auto& p = sys.partition;
  require_compatible(V, p);
  if (lambda.dim() != static_cast<std::size_t>(V.total_width())) {
    throw DimensionError("comparison map dimension differs from the storage width");
  }
  const double rho = cfg.radius.value_or(sys.domain_radius);
  const int n = p.n();

  std::vector<CheckReport> reports;
  for (std::size_t i = 0; i < p.subsystems(); ++i) {
    CheckReport rep;
    rep.name = label + "[" + std::to_string(i + 1) + "]";
    rep.threshold = -cfg.tolerance;
    const auto out_idx = global_output_indices(sys, i);
    const auto li = static_cast<std::size_t>(out_idx.size());
    const auto free_dim = static_cast<std::size_t>(n) - li;
    const int mi = p.input_dim(i);
    BallSampler y_sampler(li, cfg.seed * 7919 + 1000 * i + 1);
    BallSampler free_sampler(free_dim, cfg.seed * 7919 + 1000 * i + 500);
    std::size_t empty_fibers = 0, zero_outputs = 0;

    const auto sample_fiber = [&](const Vec& y) {
      std::vector<Vec> pts;
      const double r2 = rho * rho - y.squaredNorm();
      if (r2 <= 0.0) return pts;
      const double r = std::sqrt(r2);
      for (std::size_t s = 0; s < cfg.fiber_samples; ++s) {
        Vec x = assemble_fiber_point(n, out_idx, y, free_sampler.next(r));
        if (x.squaredNorm() == 0.0) continue;  // origin excluded
        pts.push_back(std::move(x));
      }
      return pts;
    };

    for (std::size_t s = 0; s < cfg.output_samples; ++s) {
      const Vec y = y_sampler.next(rho);
      if (y.norm() == 0.0) {
        ++zero_outputs;
        continue;
      }
      const auto pts = sample_fiber(y);
      if (pts.empty()) {
        ++empty_fibers;
        continue;
      }
      const Envelope env = fiber_envelope(V, lambda, sys, pts, i);
      std::optional<double> ball;
      if (bounds) ball = (*bounds)[i](y);
      const auto [u, val] =
          minimize_envelope(env, mi, cfg.control_radius, cfg.control_step, ball);
      std::size_t arg = 0;
      env.eval(u, &arg);
      rep.observe(val, Witness{pts[arg], y, u, {}, {}});
    }

    if (!bounds) {
      // y_i = 0: the drift alone must satisfy the strict inequality off the origin.
      const Vec y0 = Vec::Zero(static_cast<Eigen::Index>(li));
      const auto pts = sample_fiber(y0);
      if (!pts.empty()) {
        const Envelope env = fiber_envelope(V, lambda, sys, pts, i);
        std::size_t arg = 0;
        const double val = env.eval(Vec::Zero(mi), &arg);
        rep.observe(val, Witness{pts[arg], y0, Vec::Zero(mi), {}, {}});
      }
    } else {
      rep.notes.push_back("y_i = 0 excluded (bound quantifies over nonzero outputs)");
    }
    if (empty_fibers) {
      rep.notes.push_back(std::to_string(empty_fibers) + " sampled outputs had empty fibers");
    }
    if (zero_outputs) rep.notes.push_back(std::to_string(zero_outputs) + " zero outputs skipped");
    rep.notes.push_back("sampled falsifier: a pass means no violation found, not a proof");
    reports.push_back(rep.finalize());
  }
  return reports;
}

}  // namespace detail

/// Sampled falsifier for the output-control vector Lyapunov function conditions.
///
/// For each subsystem and each sampled nonzero output y_i, searches one control u_i that
/// makes L_fV_i(x) + L_gV_i(x) u_i < Lambda_i(V(x)) at every sampled state of the fiber
/// {x in S_rho : h_i(x_i) = y_i}. On the fiber of y_i = 0 the drift alone is tested.
inline std::vector<CheckReport> check_ocvlf(const VectorLyapunov& V, const ComparisonMap& lambda,
                                            const CompositeSystem& sys,
                                            const OcvlfCheckConfig& cfg) {
  return detail::fiber_search(V, lambda, sys, cfg, nullptr, "ocvlf");
}

/// Same search as check_ocvlf with controls restricted to |u_i| < mu_i(y_i).
inline std::vector<CheckReport> check_small_control(
    const VectorLyapunov& V, const ComparisonMap& lambda, const CompositeSystem& sys,
    const std::vector<std::function<double(const Vec&)>>& mu, const OcvlfCheckConfig& cfg) {
  const auto& p = sys.partition;
  if (mu.size() != p.subsystems()) throw DimensionError("check_small_control: one bound per subsystem");
  // Spot-check positive definiteness of each bound.
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const auto li = static_cast<Eigen::Index>(p.output_dim(i));
    if (mu[i](Vec::Zero(li)) != 0.0) throw ConfigError("control bound must vanish at y = 0");
    BallSampler probe(static_cast<std::size_t>(li), cfg.seed + 17 * i);
    for (int s = 0; s < 16; ++s) {
      const Vec y = probe.next(cfg.radius.value_or(sys.domain_radius));
      if (y.norm() > 0.0 && !(mu[i](y) > 0.0)) {
        throw ConfigError("control bound must be positive for y != 0");
      }
    }
  }
  return detail::fiber_search(V, lambda, sys, cfg, &mu, "small-control");
}

}  // namespace cvlf
