#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "cvlf/common.hpp"
#include "cvlf/lyapunov.hpp"
#include "cvlf/model.hpp"
#include "cvlf/ode.hpp"
#include "cvlf/scenario.hpp"
#include "cvlf/synthesis.hpp"

namespace cvlf {

enum class Method { Rk4Fixed, Rk45Adaptive };

inline std::string to_string(Method m) { return m == Method::Rk4Fixed ? "rk4" : "rk45"; }

struct IntegratorConfig {
  Method method = Method::Rk4Fixed;
  /// Step of RK4, and the output grid spacing of RK45.
  double dt = 1e-3;
  double horizon = 10.0;
  double rtol = 1e-8;
  double atol = 1e-10;
  double dt_min = 1e-12;
  double dt_max = 0.1;
  /// Abort when |x| exceeds this multiple of rho.
  double divergence_factor = 10.0;

  void validate() const {
    if (!(dt > 0.0) || !(horizon > 0.0)) throw ConfigError("integrator: dt and horizon must be > 0");
    if (method == Method::Rk45Adaptive) {
      if (!(rtol > 0.0) || !(atol > 0.0)) throw ConfigError("integrator: tolerances must be > 0");
      if (!(dt_min > 0.0) || dt_min > dt_max) throw ConfigError("integrator: need 0 < dt_min <= dt_max");
    }
  }
};

struct TrajectoryMetadata {
  std::string scenario;
  ControllerProvenance controller;
  std::string integrator;
  double dt = 0.0;
  std::uint64_t seed = 0;
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  std::vector<std::string> warnings;
};

/// Closed-loop record; all arrays share one index.
struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> inputs;
  std::vector<Vec> outputs;
  std::vector<Vec> lyapunov;
  TrajectoryMetadata meta;
  /// Set when integration stopped early; the arrays hold everything before the fault.
  std::optional<std::string> fault;

  std::size_t size() const { return times.size(); }
};

namespace detail {

struct Recorder {
  const CompositeSystem& sys;
  const DecentralizedController& ctrl;
  const VectorLyapunov* V;
  Trajectory& traj;

  void record(double t, const Vec& x) {
    const Vec y = eval_output(sys, x);
    traj.times.push_back(t);
    traj.states.push_back(x);
    traj.outputs.push_back(y);
    traj.inputs.push_back(ctrl(y));
    traj.lyapunov.push_back(V ? eval_v(*V, sys.partition, x) : Vec(0));
  }
};

}  // namespace detail

/// Integrates x' = f(x) + g(x) Gamma(h(x)) from x0 over [0, horizon].
///
/// The controller is evaluated at every right-hand-side evaluation. RK45 runs are resampled
/// onto the uniform grid k * dt by cubic Hermite interpolation.
inline Trajectory integrate(const CompositeSystem& sys, const DecentralizedController& ctrl,
                            const Vec& x0, const IntegratorConfig& cfg,
                            const VectorLyapunov* V = nullptr, std::string scenario_name = {}) {
  cfg.validate();
  detail::require_dim(x0.size(), sys.partition.n(), "integrate x0");
  Trajectory traj;
  traj.meta.scenario = std::move(scenario_name);
  traj.meta.controller = ctrl.provenance();
  traj.meta.integrator = to_string(cfg.method);
  traj.meta.dt = cfg.dt;
  if (x0.norm() > sys.domain_radius) {
    traj.meta.warnings.push_back("initial state lies outside S_rho; guarantees are local");
  }

  const auto rhs = [&](double, const Vec& x) { return eval_dynamics(sys, x, ctrl(eval_output(sys, x))); };
  const double limit = cfg.divergence_factor * sys.domain_radius;
  const auto steps = static_cast<std::size_t>(std::llround(cfg.horizon / cfg.dt));
  detail::Recorder rec{sys, ctrl, V, traj};

  const auto bad = [&](const Vec& x) -> std::optional<std::string> {
    if (!x.allFinite()) return std::string("state is not finite");
    if (x.norm() > limit) return "divergence: |x| exceeded " + std::to_string(limit);
    return std::nullopt;
  };

  if (cfg.method == Method::Rk4Fixed) {
    Vec x = x0;
    rec.record(0.0, x);
    for (std::size_t k = 1; k <= steps; ++k) {
      x = ode::rk4_step(rhs, static_cast<double>(k - 1) * cfg.dt, x, cfg.dt);
      const double t = static_cast<double>(k) * cfg.dt;
      if (auto why = bad(x)) {
        traj.fault = *why + " at t=" + std::to_string(t);
        break;
      }
      rec.record(t, x);
      ++traj.meta.accepted_steps;
    }
    return traj;
  }

  ode::AdaptiveOptions opt;
  opt.rtol = cfg.rtol;
  opt.atol = cfg.atol;
  opt.dt_min = cfg.dt_min;
  opt.dt_max = cfg.dt_max;
  opt.dt_initial = std::min(cfg.dt, cfg.dt_max);
  std::optional<ode::DenseNode<Vec>> prev;
  std::size_t next_k = 0;
  const double t_end = static_cast<double>(steps) * cfg.dt;
  try {
    const auto stats = ode::dopri5<Vec>(rhs, 0.0, t_end, x0, opt, [&](const ode::DenseNode<Vec>& node) {
      if (auto why = bad(node.x)) {
        traj.fault = *why + " at t=" + std::to_string(node.t);
        return false;
      }
      while (next_k <= steps) {
        const double t = static_cast<double>(next_k) * cfg.dt;
        if (t > node.t + 1e-12 * std::max(1.0, t)) break;
        rec.record(t, prev ? ode::hermite(*prev, node, t) : node.x);
        ++next_k;
      }
      prev = node;
      return true;
    });
    traj.meta.accepted_steps = stats.accepted;
    traj.meta.rejected_steps = stats.rejected;
  } catch (const IntegrationFault& e) {
    traj.fault = e.what();
  }
  return traj;
}

/// Convenience overload recording the scenario's storage functions.
inline Trajectory integrate(const Scenario& sc, const DecentralizedController& ctrl, const Vec& x0,
                            const IntegratorConfig& cfg) {
  return integrate(sc.system, ctrl, x0, cfg, &sc.lyapunov, sc.name);
}

/// Smallest t_k with values[j] <= threshold for every j >= k; nullopt if the last sample
/// is above the threshold.
inline std::optional<double> settling_time(const std::vector<double>& times,
                                           const std::vector<double>& values, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("settling_time: threshold must be positive");
  if (times.size() != values.size()) throw DimensionError("settling_time: length mismatch");
  if (times.empty()) return std::nullopt;
  for (std::size_t k = values.size(); k-- > 0;) {
    if (values[k] > threshold) {
      if (k + 1 == values.size()) return std::nullopt;
      return times[k + 1];
    }
  }
  return times.front();
}

inline std::optional<double> settling_time(const Trajectory& traj, double threshold) {
  std::vector<double> norms;
  norms.reserve(traj.size());
  for (const auto& x : traj.states) norms.push_back(x.norm());
  return settling_time(traj.times, norms, threshold);
}

struct BatchRun {
  std::size_t variant = 0;
  std::size_t initial_state = 0;
  Trajectory trajectory;
};

/// One trajectory per (controller variant, initial state) pair, run on worker threads.
/// Faults stay inside each trajectory; the batch itself never aborts on them.
inline std::vector<BatchRun> batch_run(const Scenario& sc,
                                       const std::vector<DecentralizedController>& variants,
                                       const std::vector<Vec>& initial_states,
                                       const IntegratorConfig& cfg, unsigned workers = 0) {
  if (variants.empty()) throw ConfigError("batch_run: no controller variants");
  if (initial_states.empty()) throw ConfigError("batch_run: no initial states");
  cfg.validate();
  std::vector<BatchRun> runs;
  for (std::size_t v = 0; v < variants.size(); ++v)
    for (std::size_t s = 0; s < initial_states.size(); ++s) runs.push_back({v, s, {}});

  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  std::size_t next = 0;
  while (next < runs.size()) {
    std::vector<std::future<void>> wave;
    for (unsigned w = 0; w < workers && next < runs.size(); ++w, ++next) {
      BatchRun* run = &runs[next];
      wave.push_back(std::async(std::launch::async, [&sc, &variants, &initial_states, &cfg, run] {
        try {
          run->trajectory = integrate(sc, variants[run->variant], initial_states[run->initial_state], cfg);
        } catch (const std::exception& e) {
          run->trajectory.fault = e.what();
        }
      }));
    }
    for (auto& f : wave) f.get();
  }
  return runs;
}

/// Trajectory CSV: t, x1..xn, u1..um, y1..yl, V1..VN, one row per recorded step.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const auto width = [&](const std::vector<Vec>& v) { return v.empty() ? 0 : v.front().size(); };
  os << "t";
  for (Eigen::Index i = 0; i < width(traj.states); ++i) os << ",x" << (i + 1);
  for (Eigen::Index i = 0; i < width(traj.inputs); ++i) os << ",u" << (i + 1);
  for (Eigen::Index i = 0; i < width(traj.outputs); ++i) os << ",y" << (i + 1);
  for (Eigen::Index i = 0; i < width(traj.lyapunov); ++i) os << ",V" << (i + 1);
  os << '\n';
  const auto old_precision = os.precision(12);
  for (std::size_t k = 0; k < traj.size(); ++k) {
    os << traj.times[k];
    for (const auto* col : {&traj.states, &traj.inputs, &traj.outputs, &traj.lyapunov}) {
      for (Eigen::Index i = 0; i < (*col)[k].size(); ++i) os << ',' << (*col)[k][i];
    }
    os << '\n';
  }
  os.precision(old_precision);
}

/// gnuplot script plotting the state columns of a trajectory CSV against time.
inline void write_gnuplot_script(std::ostream& os, const std::string& csv_path, const Trajectory& traj) {
  const auto n = traj.states.empty() ? 0 : traj.states.front().size();
  os << "set datafile separator ','\n"
     << "set key autotitle columnhead\n"
     << "set xlabel 't'\nset ylabel 'state'\n"
     << "plot ";
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i) os << ", \\\n     ";
    os << "'" << csv_path << "' using 1:" << (i + 2) << " with lines";
  }
  os << "\n";
}

}  // namespace cvlf
