#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cvlf/comparison.hpp"
#include "cvlf/scenario.hpp"
#include "cvlf/sim.hpp"
#include "cvlf/synthesis.hpp"
#include "cvlf/verify.hpp"

namespace cvlf::cli {

inline constexpr std::uint64_t kDefaultSeed = 0;

/// Parsed command line.
struct RunConfig {
  std::string command;
  std::string scenario;
  std::string overrides;
  std::string sigma;
  std::optional<double> k;
  std::vector<std::string> sets;
  std::optional<double> T;
  std::optional<double> dt;
  std::string method = "rk4";
  std::string out;
  std::string report;
  std::string gnuplot;
  std::optional<std::uint64_t> seed;
};

namespace detail {

/// CVLF_SEED replaces the built-in default; --seed replaces both.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("CVLF_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("CVLF_SEED is not an unsigned integer: ") + env);
    }
  }
  return kDefaultSeed;
}

/// Writes the whole file to a sibling temporary and renames it into place.
template <class Writer>
void write_atomically(const std::string& path, Writer&& write) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw ConfigError("cannot write " + path);
    write(os);
    os.flush();
    if (!os) throw ConfigError("write failed: " + path);
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw ConfigError("cannot rename into " + path + ": " + ec.message());
  }
}

inline SigmaDesign parse_sigma(const std::string& s) {
  if (s == "zero") return SigmaDesign::zero();
  if (s == "sontag") return SigmaDesign::sontag();
  if (s == "classical") return SigmaDesign::classical();
  if (s.rfind("quadratic:", 0) == 0) {
    try {
      return SigmaDesign::quadratic(std::stod(s.substr(10)));
    } catch (const std::invalid_argument&) {
    }
  }
  throw ConfigError("unknown sigma '" + s + "' (zero | sontag | classical | quadratic:<c>)");
}

inline std::pair<std::string, double> parse_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects name=value, got '" + s + "'");
  try {
    std::size_t used = 0;
    const std::string rhs = s.substr(eq + 1);
    const double v = std::stod(rhs, &used);
    if (used != rhs.size()) throw std::invalid_argument(rhs);
    return {s.substr(0, eq), v};
  } catch (const std::exception&) {
    throw ConfigError("--set value is not a number: '" + s + "'");
  }
}

struct Resolved {
  Scenario scenario;
  Vec x0;
  Horizon horizon;
  std::uint64_t seed = 0;
};

/// Loads overrides, applies --k/--set, builds the scenario.
inline Resolved resolve(ScenarioRegistry& reg, const RunConfig& rc) {
  std::optional<OverrideSpec> spec;
  if (!rc.overrides.empty()) {
    spec = load_override_file(rc.overrides);
    if (spec->base) apply_override(reg, *spec);
  }
  std::string name = rc.scenario;
  if (name.empty() && spec) name = spec->name;
  if (name.empty()) throw ConfigError("--scenario is required");
  const auto& entry = reg.entry(name);

  ParameterMap prm;
  const bool spec_applies = spec && !spec->base && spec->name == name;
  if (spec_applies) prm = spec->parameters;
  if (rc.k) {
    if (entry.defaults.count("k")) {
      prm["k"] = *rc.k;
    } else if (entry.defaults.count("kappa")) {
      prm["kappa"] = *rc.k;
    } else {
      throw ConfigError("scenario " + name + " has no gain parameter for --k");
    }
  }
  for (const auto& s : rc.sets) {
    const auto [key, value] = parse_assignment(s);
    prm[key] = value;
  }

  Resolved r;
  r.scenario = reg.build(name, prm);
  r.x0 = r.scenario.default_initial_state;
  r.horizon = r.scenario.default_horizon;
  if (spec_applies && spec->initial_state) {
    cvlf::detail::require_dim(spec->initial_state->size(), r.scenario.system.partition.n(),
                              "override initial_state");
    r.x0 = *spec->initial_state;
  }
  if (spec_applies && spec->horizon) r.horizon = *spec->horizon;
  if (rc.T) r.horizon.T = *rc.T;
  if (rc.dt) r.horizon.dt = *rc.dt;
  r.seed = resolve_seed(rc.seed);
  return r;
}

/// The scenario's reference controller unless a sigma design is requested.
inline DecentralizedController pick_controller(const Scenario& sc, const std::string& sigma) {
  if (sigma.empty() && sc.reference_controller) return *sc.reference_controller;
  if (!sc.synthesis_data) {
    throw ConfigError("scenario " + sc.name + " has no synthesis data; drop --sigma");
  }
  return make_controller(sc.system.partition, *sc.synthesis_data, parse_sigma(sigma.empty() ? "zero" : sigma));
}

inline IntegratorConfig integrator_config(const RunConfig& rc, const Horizon& h) {
  IntegratorConfig cfg;
  if (rc.method == "rk4") {
    cfg.method = Method::Rk4Fixed;
  } else if (rc.method == "rk45") {
    cfg.method = Method::Rk45Adaptive;
  } else {
    throw ConfigError("unknown --method '" + rc.method + "' (rk4 | rk45)");
  }
  cfg.horizon = h.T;
  cfg.dt = h.dt;
  cfg.validate();
  return cfg;
}

inline const char* yes_no(bool b) { return b ? "true" : "false"; }

inline int list_scenarios(const ScenarioRegistry& reg, std::ostream& out) {
  out << std::left << std::setw(20) << "name" << std::setw(6) << "n" << "defaults\n";
  for (const auto& name : reg.names()) {
    const auto& e = reg.entry(name);
    std::ostringstream d;
    bool first = true;
    for (const auto& [k, v] : e.defaults) {
      d << (first ? "" : ", ") << k << "=" << v;
      first = false;
    }
    out << std::setw(20) << name << std::setw(6) << e.state_dim << d.str() << "\n";
  }
  return 0;
}

inline int simulate(ScenarioRegistry& reg, const RunConfig& rc, std::ostream& out) {
  const Resolved r = resolve(reg, rc);
  const auto ctrl = pick_controller(r.scenario, rc.sigma);
  const auto cfg = integrator_config(rc, r.horizon);
  const Trajectory traj = integrate(r.scenario, ctrl, r.x0, cfg);
  if (!rc.out.empty()) {
    write_atomically(rc.out, [&](std::ostream& os) { write_trajectory_csv(os, traj); });
  }
  if (!rc.gnuplot.empty()) {
    const std::string csv = rc.out.empty() ? "trajectory.csv" : rc.out;
    write_atomically(rc.gnuplot, [&](std::ostream& os) { write_gnuplot_script(os, csv, traj); });
  }
  out << "scenario " << r.scenario.name << ", controller " << ctrl.provenance().kind << " ("
      << ctrl.provenance().sigma << "), " << to_string(cfg.method) << " dt=" << cfg.dt
      << " T=" << cfg.horizon << "\n";
  out << "  rows " << traj.size() << ", |x(0)| = " << r.x0.norm();
  if (traj.size()) out << ", |x(T)| = " << traj.states.back().norm();
  out << "\n";
  if (const auto ts = settling_time(traj, 1e-2)) out << "  settling time (1e-2): " << *ts << "\n";
  for (const auto& w : traj.meta.warnings) out << "  warning: " << w << "\n";
  if (traj.fault) {
    out << "  fault: " << *traj.fault << "\n";
    return 1;
  }
  if (!rc.out.empty()) out << "  wrote " << rc.out << "\n";
  return 0;
}

inline int check_matrix(ScenarioRegistry& reg, const RunConfig& rc, std::ostream& out) {
  const Resolved r = resolve(reg, rc);
  const auto& lambda = r.scenario.comparison;
  if (!lambda.is_linear()) {
    const auto rep = comparison_certificate(lambda, 1e-9, r.seed);
    out << "comparison map is nonlinear; sampled certificate: " << yes_no(rep.passed) << "\n";
    return rep.passed ? 0 : 1;
  }
  const Mat& M = lambda.matrix();
  const bool metzler = is_metzler(M);
  const bool mm = is_m_matrix_negation(M);
  const bool hurwitz = is_hurwitz(M);
  out << "scenario " << r.scenario.name << " (" << M.rows() << "x" << M.cols() << ")\n";
  out << "Metzler: " << yes_no(metzler) << "\n";
  out << "M-matrix(−Λ): " << yes_no(mm) << "\n";
  out << "Hurwitz: " << yes_no(hurwitz) << "\n";
  out << "max Re(lambda) = " << spectral_abscissa(M) << "\n";
  if (r.scenario.constants) {
    const auto& dc = *r.scenario.constants;
    const Vec rows = dc.coupling_row_sums();
    for (Eigen::Index i = 0; i < dc.c1.size(); ++i) {
      out << "gain bound [" << (i + 1) << "]: k > " << gain_bound(dc.c1[i], dc.c2p[i], rows[i]) << "\n";
    }
  }
  return metzler && mm && hurwitz ? 0 : 1;
}

inline int synthesize(ScenarioRegistry& reg, const RunConfig& rc, std::ostream& out) {
  const Resolved r = resolve(reg, rc);
  const auto& sc = r.scenario;
  if (!sc.synthesis_data) throw ConfigError("scenario " + sc.name + " has no synthesis data");
  const auto ctrl = make_controller(sc.system.partition, *sc.synthesis_data,
                                    parse_sigma(rc.sigma.empty() ? "zero" : rc.sigma));
  OcvlfCheckConfig occ;
  occ.seed = r.seed;
  occ.output_samples = 32;
  occ.fiber_samples = 32;
  const auto c1 = check_condition1(sc.system, sc.lyapunov, sc.comparison, *sc.synthesis_data, occ);

  nlohmann::json j;
  j["scenario"] = sc.name;
  j["controller"] = to_json(ctrl.provenance());
  j["condition1"] = {{"passed", c1.passed()}, {"comparison", to_json(c1.comparison)}};
  for (const auto* group : {&c1.dissipation, &c1.inner_loop, &c1.zero_set}) {
    for (const auto& rep : *group) j["condition1"]["checks"].push_back(to_json(rep));
  }
  j["condition1"]["zero_set_vacuous"] = c1.zero_set_vacuous;
  j["seed"] = r.seed;
  if (!rc.report.empty()) {
    write_atomically(rc.report, [&](std::ostream& os) { os << j.dump(2) << "\n"; });
  }

  out << "scenario " << sc.name << ", sigma " << ctrl.provenance().sigma << "\n";
  for (const auto& [key, value] : ctrl.provenance().constants) out << "  " << key << " = " << value << "\n";
  out << "  [" << (c1.comparison.passed ? "pass" : "FAIL") << "] " << c1.comparison.name << "\n";
  for (const auto* group : {&c1.dissipation, &c1.inner_loop, &c1.zero_set}) {
    for (const auto& rep : *group) {
      out << "  [" << (rep.passed ? "pass" : "FAIL") << "] " << rep.name << " worst=" << rep.worst_violation
          << "\n";
    }
  }
  out << "condition 1: " << (c1.passed() ? "PASS" : "FAIL") << "\n";
  return c1.passed() ? 0 : 1;
}

inline int verify(ScenarioRegistry& reg, const RunConfig& rc, std::ostream& out) {
  const Resolved r = resolve(reg, rc);
  const auto ctrl = pick_controller(r.scenario, rc.sigma);
  VerifyConfig vc;
  vc.integrator = integrator_config(rc, r.horizon);
  vc.seed = r.seed;
  const auto rep = verify_closed_loop(r.scenario, ctrl, r.x0, vc);
  if (!rc.report.empty()) {
    write_atomically(rc.report, [&](std::ostream& os) { os << to_json(rep).dump(2) << "\n"; });
  }
  out << to_text(rep);
  return rep.overall ? 0 : 1;
}

inline void add_scenario_flags(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--scenario", rc.scenario, "registered scenario name");
  cmd->add_option("--overrides", rc.overrides, "scenario override JSON file");
  cmd->add_option("--k", rc.k, "feedback gain (k for lorenz-network, kappa for example1)");
  cmd->add_option("--set", rc.sets, "parameter override name=value (repeatable)");
  cmd->add_option("--seed", rc.seed, "seed for sampled checks (default 0, or CVLF_SEED)");
}

inline void add_run_flags(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--sigma", rc.sigma, "zero | sontag | classical | quadratic:<c>");
  cmd->add_option("--T", rc.T, "horizon");
  cmd->add_option("--dt", rc.dt, "step (rk4) or output spacing (rk45)");
  cmd->add_option("--method", rc.method, "rk4 | rk45");
}

}  // namespace detail

/// Runs one command. `args` excludes the program name. Exit code 2 on usage or
/// configuration errors, 1 when a check fails, 0 otherwise.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
               ScenarioRegistry registry = ScenarioRegistry::builtin()) {
  CLI::App app{"vector Lyapunov synthesis and verification for composite systems", "cvlf"};
  app.require_subcommand(1);
  RunConfig rc;

  auto* list = app.add_subcommand("list-scenarios", "print registered scenarios");
  list->add_option("--overrides", rc.overrides, "override file that may register a scenario");

  auto* sim = app.add_subcommand("simulate", "integrate the closed loop and export CSV");
  detail::add_scenario_flags(sim, rc);
  detail::add_run_flags(sim, rc);
  sim->add_option("--out", rc.out, "trajectory CSV path");
  sim->add_option("--gnuplot", rc.gnuplot, "gnuplot script path");

  auto* syn = app.add_subcommand("synthesize", "build the controller and check its preconditions");
  detail::add_scenario_flags(syn, rc);
  syn->add_option("--sigma", rc.sigma, "zero | sontag | classical | quadratic:<c>");
  syn->add_option("--report", rc.report, "JSON report path");

  auto* chk = app.add_subcommand("check-matrix", "Metzler, M-matrix and Hurwitz certificates");
  detail::add_scenario_flags(chk, rc);

  auto* ver = app.add_subcommand("verify", "simulate and run every monitor");
  detail::add_scenario_flags(ver, rc);
  detail::add_run_flags(ver, rc);
  ver->add_option("--report", rc.report, "JSON report path");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (list->parsed()) {
      if (!rc.overrides.empty()) {
        const auto spec = load_override_file(rc.overrides);
        if (spec.base) apply_override(registry, spec);
      }
      return detail::list_scenarios(registry, out);
    }
    if (sim->parsed()) return detail::simulate(registry, rc, out);
    if (syn->parsed()) return detail::synthesize(registry, rc, out);
    if (chk->parsed()) return detail::check_matrix(registry, rc, out);
    if (ver->parsed()) return detail::verify(registry, rc, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace cvlf::cli
