#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvlf/comparison.hpp"
#include "cvlf/lyapunov.hpp"
#include "cvlf/report.hpp"
#include "cvlf/scenario.hpp"
#include "cvlf/sim.hpp"

namespace cvlf {

inline constexpr const char* kToolVersion = "0.3.0";

/// Checks dV/dt <= Lambda(V(x)) + tol at every recorded (x, u) of a trajectory, with dV/dt
/// from the analytic gradients. Points outside S_rho are flagged and skipped. At roughly
/// `fd_fraction` of the points the analytic rate is compared with a central difference of
/// V along the recorded vector field; a mismatch fails the check.
inline CheckReport monitor_dissipation(const Trajectory& traj, const CompositeSystem& sys,
                                       const VectorLyapunov& V, const ComparisonMap& lambda,
                                       double tol, double fd_fraction = 0.01) {
  CheckReport rep;
  rep.name = "dissipation";
  rep.threshold = tol;
  if (traj.inputs.size() != traj.size()) throw DimensionError("monitor_dissipation: trajectory lacks inputs");
  const double rho = sys.domain_radius;
  const std::size_t stride =
      fd_fraction > 0.0 ? std::max<std::size_t>(1, static_cast<std::size_t>(1.0 / fd_fraction)) : 0;
  std::size_t outside = 0, fd_checked = 0, fd_bad = 0;
  double fd_worst = 0.0;

  for (std::size_t k = 0; k < traj.size(); ++k) {
    const Vec& x = traj.states[k];
    const Vec& u = traj.inputs[k];
    if (x.norm() > rho * (1.0 + 1e-12)) {
      ++outside;
      continue;
    }
    const Vec vx = eval_v(V, sys.partition, x);
    const Vec vdot = lie_derivative(V, sys, x, u);
    const Vec bound = lambda.apply(vx);
    rep.observe((vdot - bound).maxCoeff(), Witness{x, traj.outputs[k], u, traj.times[k], k});

    if (stride && k % stride == 0) {
      const Vec d = eval_dynamics(sys, x, u);
      const double h = 1e-6 / std::max(1.0, d.norm());
      const Vec fd = (eval_v(V, sys.partition, x + h * d) - eval_v(V, sys.partition, x - h * d)) / (2.0 * h);
      const double err = (fd - vdot).cwiseAbs().maxCoeff() / std::max(1.0, vdot.cwiseAbs().maxCoeff());
      fd_worst = std::max(fd_worst, err);
      ++fd_checked;
      if (err > 1e-4) ++fd_bad;
    }
  }
  if (rep.samples == 0) rep.worst_violation = 0.0;
  rep.finalize();
  if (outside) {
    rep.notes.push_back(std::to_string(outside) + " recorded points outside S_rho were not checked");
  }
  if (stride) {
    std::ostringstream os;
    os << "finite-difference cross-check on " << fd_checked << " points, worst relative error " << fd_worst;
    rep.notes.push_back(os.str());
  }
  if (fd_bad) {
    rep.passed = false;
    rep.notes.push_back(std::to_string(fd_bad) + " points disagree with finite differences");
  }
  return rep;
}

struct VerifyConfig {
  IntegratorConfig integrator;
  double convergence_threshold = 1e-3;
  double dissipation_tol = 1e-9;
  double domination_tol = 1e-6;
  double hurwitz_margin = 1e-9;
  std::uint64_t seed = 0;
};

struct Provenance {
  std::string tool_version = kToolVersion;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct VerificationReport {
  std::string scenario;
  std::vector<CheckReport> checks;
  bool overall = true;
  Provenance provenance;
  std::vector<std::string> notes;

  const CheckReport* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }

  void add(CheckReport c) {
    overall = overall && c.passed;
    checks.push_back(std::move(c));
  }
};

inline nlohmann::json to_json(const VerificationReport& r) {
  nlohmann::json j;
  j["scenario"] = r.scenario;
  j["overall"] = r.overall;
  j["checks"] = nlohmann::json::array();
  for (const auto& c : r.checks) j["checks"].push_back(to_json(c));
  j["provenance"] = {{"tool_version", r.provenance.tool_version},
                     {"seed", r.provenance.seed},
                     {"config_hash", r.provenance.config_hash}};
  j["notes"] = r.notes;
  return j;
}

inline std::string to_text(const VerificationReport& r) {
  std::ostringstream os;
  os << "scenario " << r.scenario << ": " << (r.overall ? "PASS" : "FAIL") << "\n";
  for (const auto& c : r.checks) {
    os << "  [" << (c.passed ? "pass" : "FAIL") << "] " << c.name << "  worst=" << c.worst_violation
       << " threshold=" << c.threshold << " samples=" << c.samples << "\n";
    for (const auto& n : c.notes) os << "         " << n << "\n";
  }
  for (const auto& n : r.notes) os << "  note: " << n << "\n";
  os << "  tool " << r.provenance.tool_version << ", seed " << r.provenance.seed << ", config "
     << r.provenance.config_hash << "\n";
  return os.str();
}

namespace detail {

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace detail

/// Canonical description of a verification run; its hash identifies the configuration.
inline nlohmann::json run_config_json(const Scenario& sc, const DecentralizedController& ctrl,
                                      const Vec& x0, const VerifyConfig& cfg) {
  nlohmann::json j;
  j["scenario"] = sc.name;
  j["parameters"] = sc.parameters;
  j["controller"] = to_json(ctrl.provenance());
  j["x0"] = detail::to_json_array(x0);
  j["integrator"] = {{"method", to_string(cfg.integrator.method)},
                     {"dt", cfg.integrator.dt},
                     {"T", cfg.integrator.horizon},
                     {"rtol", cfg.integrator.rtol},
                     {"atol", cfg.integrator.atol}};
  j["thresholds"] = {{"convergence", cfg.convergence_threshold},
                     {"dissipation", cfg.dissipation_tol},
                     {"domination", cfg.domination_tol},
                     {"hurwitz_margin", cfg.hurwitz_margin}};
  j["seed"] = cfg.seed;
  return j;
}

/// Simulates the closed loop and bundles convergence, dissipation, domination and the
/// comparison-map certificates into one report. Integration faults produce a failed report.
inline VerificationReport verify_closed_loop(const Scenario& sc, const DecentralizedController& ctrl,
                                             const Vec& x0, const VerifyConfig& cfg) {
  VerificationReport rep;
  rep.scenario = sc.name;
  rep.provenance.seed = cfg.seed;
  rep.provenance.config_hash = detail::fnv1a_hex(run_config_json(sc, ctrl, x0, cfg).dump());

  rep.notes = sc.notes;
  const Trajectory traj = integrate(sc, ctrl, x0, cfg.integrator);
  for (const auto& w : traj.meta.warnings) rep.notes.push_back(w);

  CheckReport integration;
  integration.name = "integration";
  integration.worst_violation = traj.fault ? 1.0 : 0.0;
  integration.samples = traj.size();
  integration.finalize();
  if (traj.fault) integration.notes.push_back(*traj.fault);
  rep.add(integration);

  CheckReport conv;
  conv.name = "convergence";
  conv.threshold = 0.0;
  const double final_norm = traj.states.empty() ? 0.0 : traj.states.back().norm();
  conv.observe(traj.fault ? std::numeric_limits<double>::infinity() : final_norm - cfg.convergence_threshold,
               Witness{traj.states.empty() ? Vec() : traj.states.back(), Vec(), Vec(),
                       traj.times.empty() ? 0.0 : traj.times.back(), {}});
  std::ostringstream conv_note;
  conv_note << "|x(T)| = " << final_norm << ", threshold " << cfg.convergence_threshold;
  conv.notes.push_back(conv_note.str());
  rep.add(conv.finalize());

  rep.add(monitor_dissipation(traj, sc.system, sc.lyapunov, sc.comparison, cfg.dissipation_tol));

  CheckReport dom;
  dom.name = "domination";
  try {
    const Vec z0 = eval_v(sc.lyapunov, sc.system.partition, x0);
    const double T = traj.times.empty() ? cfg.integrator.dt : traj.times.back();
    const auto z = simulate_comparison(sc.comparison, z0, std::max(T, cfg.integrator.dt), cfg.integrator.dt);
    dom = check_domination(traj.times, traj.lyapunov, z, cfg.domination_tol);
  } catch (const std::exception& e) {
    dom.worst_violation = std::numeric_limits<double>::infinity();
    dom.finalize();
    dom.notes.push_back(e.what());
  }
  rep.add(dom);

  if (sc.comparison.is_linear()) {
    const Mat& M = sc.comparison.matrix();
    CheckReport metzler;
    metzler.name = "metzler";
    double worst_off = -std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < M.rows(); ++r)
      for (Eigen::Index c = 0; c < M.cols(); ++c)
        if (r != c) worst_off = std::max(worst_off, -M(r, c));
    metzler.worst_violation = M.rows() > 1 ? worst_off : 0.0;
    metzler.samples = 1;
    metzler.finalize();
    metzler.passed = is_metzler(M);
    rep.add(metzler);

    CheckReport mm;
    mm.name = "m-matrix";
    const auto minors = leading_principal_minors(-M);
    mm.threshold = -1e-12;
    mm.worst_violation = -*std::min_element(minors.begin(), minors.end());
    mm.samples = minors.size();
    mm.passed = is_m_matrix_negation(M);
    rep.add(mm);

    CheckReport hw;
    hw.name = "hurwitz";
    hw.threshold = -cfg.hurwitz_margin;
    hw.observe(spectral_abscissa(M), Witness{});
    std::ostringstream hw_note;
    hw_note << "max Re(lambda) = " << hw.worst_violation;
    hw.notes.push_back(hw_note.str());
    rep.add(hw.finalize());
  } else {
    rep.add(comparison_certificate(sc.comparison, cfg.hurwitz_margin, cfg.seed));
  }
  return rep;
}

}  // namespace cvlf
