#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvlf/common.hpp"
#include "cvlf/comparison.hpp"
#include "cvlf/lorenz.hpp"
#include "cvlf/lyapunov.hpp"
#include "cvlf/model.hpp"
#include "cvlf/synthesis.hpp"

namespace cvlf {

using ParameterMap = std::map<std::string, double>;

struct Horizon {
  double T = 10.0;
  double dt = 1e-3;
};

/// A registered plant with its storage functions, comparison map and defaults.
struct Scenario {
  std::string name;
  CompositeSystem system;
  VectorLyapunov lyapunov;
  ComparisonMap comparison;
  std::optional<SynthesisData> synthesis_data;
  std::optional<lorenz::DerivedConstants> constants;
  /// Hand-designed controller shipped with the scenario, when there is one.
  std::optional<DecentralizedController> reference_controller;
  Vec default_initial_state;
  Horizon default_horizon;
  ParameterMap parameters;
  /// Caveats copied into verification reports.
  std::vector<std::string> notes;
};

// ---------------------------------------------------------------------------------------
// Example 1: three scalar subsystems, only the second one actuated.
//   x1' = -x1 + 2 x1 x3^2,  x2' = x1 - x2 - x1 x3 + u2,  x3' = x1 x2 - x3,  y_i = x_i.

inline Mat example1_lambda(double kappa, double eps) {
  Mat L(3, 3);
  L << -2 + eps, eps, 8 + eps,  //
      1 + eps, 3 + eps - kappa, 1 + eps,  //
      eps, 4 + eps, -1 + eps;
  return L;
}

inline StorageFunction half_square() {
  return {1, [](const Vec& x) { return Vec::Constant(1, 0.5 * x.squaredNorm()); },
          [](const Vec& x) { return Mat(x.transpose()); }};
}

inline Scenario make_example1(const ParameterMap& prm) {
  const double rho = prm.at("rho"), kappa = prm.at("kappa"), eps = prm.at("epsilon");
  Scenario sc;
  sc.name = "example1";
  sc.parameters = prm;
  auto& sys = sc.system;
  sys.partition = StatePartition({1, 1, 1}, {0, 1, 0}, {1, 1, 1});
  sys.drift = [](const Vec& x) {
    Vec f(3);
    f << -x[0] + 2 * x[0] * x[2] * x[2], x[0] - x[1] - x[0] * x[2], x[0] * x[1] - x[2];
    return f;
  };
  sys.input_block = [](const Vec&, std::size_t) { return Mat::Ones(1, 1); };
  sys.output_block = [](const Vec& xi, std::size_t) { return xi; };
  sys.domain_radius = rho;
  sys.output_coordinates = std::vector<std::vector<int>>{{0}, {0}, {0}};

  sc.lyapunov.components = {half_square(), half_square(), half_square()};
  sc.comparison = ComparisonMap(LinearMetzler{example1_lambda(kappa, eps)});
  sc.reference_controller =
      linear_output_feedback(sys.partition, {0.0, kappa, 0.0}, "u2 = -kappa y2");
  sc.default_initial_state = Vec::Constant(3, 0.5);
  sc.notes.push_back(
      "the V1 row of Lambda needs x1^2 <= 2: initial states are taken in the radius-sqrt(2) ball, "
      "and on |x| <= rho = 2 the monitors may report genuine violations");
  sc.default_horizon = {20.0, 1e-3};
  return sc;
}

// ---------------------------------------------------------------------------------------
// Lorenz network with y-coupling.

inline lorenz::Params lorenz_params(const ParameterMap& prm) {
  lorenz::Params p;
  p.w1 = prm.at("w1");
  p.w2 = prm.at("w2");
  p.w3 = prm.at("w3");
  p.rho = prm.at("rho");
  p.k = prm.at("k");
  p.varpi = prm.at("varpi");
  return p;
}

inline StorageFunction lorenz_storage() {
  return {2,
          [](const Vec& x) {
            const Eigen::Vector3d xi = x;
            return Vec(Eigen::Vector2d(lorenz::storage1(xi), lorenz::storage2(xi)));
          },
          [](const Vec& x) {
            Mat g = Mat::Zero(2, 3);
            g.row(0) = lorenz::storage1_gradient(Eigen::Vector3d(x)).transpose();
            g(1, 1) = x[1];
            return g;
          }};
}

/// Synthesis data of the network: W_i = block * V_i + [0; sum_j varpi_ij V_j2],
/// p_i1 = k_i y_i^2, p_i2 = y_i, no inner loop.
inline SynthesisData lorenz_synthesis_data(const lorenz::DerivedConstants& dc, const Vec& k) {
  const auto N = static_cast<std::size_t>(dc.c1.size());
  SynthesisData data;
  for (std::size_t i = 0; i < N; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    SubsystemSynthesis s;
    s.m1 = 0;
    s.m2 = 1;
    s.supply_component = 1;
    const double c1 = dc.c1[ii], c2p = dc.c2p[ii], ki = k[ii];
    const Vec row = dc.coupling.row(ii).transpose();
    s.W = [=](const Vec& x, const Vec&) {
      const Eigen::Vector3d xi = x.segment<3>(3 * ii);
      const double v1 = lorenz::storage1(xi), v2 = lorenz::storage2(xi);
      double others = 0.0;
      for (Eigen::Index j = 0; j < row.size(); ++j) {
        if (j != ii) others += row[j] * 0.5 * x[3 * j + 1] * x[3 * j + 1];
      }
      return Vec(Eigen::Vector2d(-c1 * v1 + c2p * v2, 0.5 * c1 * v1 + (-2.0 * ki + c2p) * v2 + others));
    };
    s.p1 = [ki](const Vec& y, const Vec&) { return ki * y.squaredNorm(); };
    s.p2 = [](const Vec& y) { return y; };
    data.subsystems.push_back(std::move(s));
    const std::string tag = "_" + std::to_string(i + 1);
    data.constants["k" + tag] = ki;
    data.constants["c1" + tag] = c1;
    data.constants["c2p" + tag] = c2p;
    data.constants["varpi" + tag] = row.sum() - row[ii];
  }
  data.constants["rho"] = dc.rho;
  return data;
}

inline constexpr std::size_t kDefaultConstantSamples = 4096;

inline Scenario make_lorenz_network(const ParameterMap& prm) {
  const lorenz::Params p = lorenz_params(prm);
  const int N = p.subsystems;
  Scenario sc;
  sc.name = "lorenz-network";
  sc.parameters = prm;
  auto& sys = sc.system;
  sys.partition = StatePartition(std::vector<int>(N, 3), std::vector<int>(N, 1), std::vector<int>(N, 1));
  sys.drift = [p, N](const Vec& x) {
    Vec f(3 * N);
    double ysum = 0.0;
    for (int j = 0; j < N; ++j) ysum += x[3 * j + 1];
    for (int i = 0; i < N; ++i) {
      const Eigen::Vector3d xi = x.segment<3>(3 * i);
      Eigen::Vector3d fi = lorenz::local_field(p, xi);
      fi[1] += p.varpi * (ysum - xi[1]);
      f.segment<3>(3 * i) = fi;
    }
    return f;
  };
  sys.input_block = [](const Vec&, std::size_t) {
    Mat g = Mat::Zero(3, 1);
    g(1, 0) = 1.0;
    return g;
  };
  sys.output_block = [](const Vec& xi, std::size_t) { return Vec::Constant(1, xi[1]); };
  sys.domain_radius = p.rho;
  sys.output_coordinates = std::vector<std::vector<int>>(static_cast<std::size_t>(N), {1});

  sc.lyapunov.components.assign(static_cast<std::size_t>(N), lorenz_storage());
  sc.constants = lorenz::derive_constants(p, kDefaultConstantSamples, 0);
  const Vec k = Vec::Constant(N, p.k);
  sc.comparison = ComparisonMap(LinearMetzler{
      example2_lambda(sc.constants->c1, sc.constants->c2p, k, sc.constants->coupling)});
  sc.synthesis_data = lorenz_synthesis_data(*sc.constants, k);
  sc.default_initial_state.resize(3 * N);
  const double base_x0[9] = {0.9, 0.1, 0.6, -0.6, 0.8, -0.5, -0.5, 0.7, 0.4};
  for (int c = 0; c < 3 * N; ++c) sc.default_initial_state[c] = base_x0[c % 9];
  sc.default_horizon = {10.0, 1e-3};
  return sc;
}

// ---------------------------------------------------------------------------------------

/// Name -> (defaults, builder). Parameter overrides are shallow scalar replacements.
class ScenarioRegistry {
 public:
  struct Entry {
    std::string name;
    std::string description;
    int state_dim = 0;
    ParameterMap defaults;
    std::function<void(const ParameterMap&)> validate;
    std::function<Scenario(const ParameterMap&)> build;
    std::optional<Vec> initial_state;
    std::optional<Horizon> horizon;
  };

  static ScenarioRegistry empty() { return {}; }

  static ScenarioRegistry builtin() {
    ScenarioRegistry reg;
    reg.add({"example1", "three scalar subsystems, only subsystem 2 actuated", 3,
             {{"rho", 2.0}, {"kappa", 33.0}, {"epsilon", 0.001}},
             [](const ParameterMap& p) {
               require_positive(p, {"rho", "kappa"});
               if (p.at("epsilon") < 0.0) throw ConfigError("parameter epsilon must be >= 0");
             },
             make_example1, std::nullopt, std::nullopt});
    reg.add({"lorenz-network", "three y-coupled Lorenz subsystems, scalar input/output each", 9,
             {{"w1", 10.0}, {"w2", 8.0 / 3.0}, {"w3", 28.0}, {"rho", 2.0}, {"k", 30.0}, {"varpi", 1.0}},
             [](const ParameterMap& p) {
               require_positive(p, {"w1", "w2", "w3", "rho", "k"});
               if (p.at("varpi") < 0.0) throw ConfigError("parameter varpi must be >= 0");
             },
             make_lorenz_network, std::nullopt, std::nullopt});
    return reg;
  }

  void add(Entry e) {
    const std::string key = e.name;
    entries_[key] = std::move(e);
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown scenario: " + name);
    return it->second;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }
  std::size_t size() const { return entries_.size(); }

  Scenario build(const std::string& name, const ParameterMap& overrides = {}) const {
    const Entry& e = entry(name);
    ParameterMap prm = e.defaults;
    for (const auto& [key, value] : overrides) {
      if (!prm.count(key)) throw ConfigError("unknown parameter '" + key + "' for scenario " + name);
      prm[key] = value;
    }
    if (e.validate) e.validate(prm);
    Scenario sc = e.build(prm);
    sc.name = e.name;
    if (e.initial_state) sc.default_initial_state = *e.initial_state;
    if (e.horizon) sc.default_horizon = *e.horizon;
    if (sc.default_initial_state.norm() > sc.system.domain_radius) {
      throw ConfigError("default initial state lies outside S_rho");
    }
    return sc;
  }

 private:
  static void require_positive(const ParameterMap& p, std::initializer_list<const char*> keys) {
    for (const char* k : keys) {
      if (!(p.at(k) > 0.0)) throw ConfigError(std::string("parameter ") + k + " must be positive");
    }
  }

  std::map<std::string, Entry> entries_;
};

inline Scenario build_scenario(const std::string& name, const ParameterMap& overrides = {}) {
  return ScenarioRegistry::builtin().build(name, overrides);
}

/// Constants of a lorenz-network scenario re-derived at a given radius and sample budget.
inline lorenz::DerivedConstants derive_constants(const Scenario& sc, double rho,
                                                 std::size_t sample_count, std::uint64_t seed = 0) {
  if (sc.synthesis_data == std::nullopt || !sc.parameters.count("w1")) {
    throw ConfigError("derive_constants applies to lorenz-network scenarios only");
  }
  lorenz::Params p = lorenz_params(sc.parameters);
  p.rho = rho;
  return lorenz::derive_constants(p, sample_count, seed);
}

/// Contents of a scenario override file.
///   {"name": ..., "base": optional, "parameters": {...}, "initial_state": [...],
///    "horizon": {"T": ..., "dt": ...}}
/// With "base", the file registers a new scenario `name` derived from `base`.
struct OverrideSpec {
  std::string name;
  std::optional<std::string> base;
  ParameterMap parameters;
  std::optional<Vec> initial_state;
  std::optional<Horizon> horizon;
};

inline OverrideSpec parse_override(const nlohmann::json& j) {
  OverrideSpec spec;
  if (!j.is_object() || !j.contains("name")) throw ConfigError("override file: 'name' is required");
  for (const auto& [key, value] : j.items()) {
    if (key != "name" && key != "base" && key != "parameters" && key != "initial_state" &&
        key != "horizon") {
      throw ConfigError("override file: unknown key '" + key + "'");
    }
  }
  spec.name = j.at("name").get<std::string>();
  if (j.contains("base")) spec.base = j.at("base").get<std::string>();
  if (j.contains("parameters")) {
    for (const auto& [key, value] : j.at("parameters").items()) spec.parameters[key] = value.get<double>();
  }
  if (j.contains("initial_state")) spec.initial_state = detail::vec_from_json(j.at("initial_state"));
  if (j.contains("horizon")) {
    Horizon h;
    h.T = j.at("horizon").value("T", h.T);
    h.dt = j.at("horizon").value("dt", h.dt);
    if (!(h.T > 0.0) || !(h.dt > 0.0)) throw ConfigError("override file: horizon must be positive");
    spec.horizon = h;
  }
  return spec;
}

inline OverrideSpec load_override_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open override file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("override file " + path + ": " + e.what());
  }
  return parse_override(j);
}

/// Registers a derived scenario when the spec names a base; returns the scenario to build
/// with its overrides applied.
inline Scenario apply_override(ScenarioRegistry& reg, const OverrideSpec& spec) {
  if (spec.base) {
    ScenarioRegistry::Entry e = reg.entry(*spec.base);
    e.name = spec.name;
    e.description = "derived from " + *spec.base;
    for (const auto& [key, value] : spec.parameters) {
      if (!e.defaults.count(key)) throw ConfigError("unknown parameter '" + key + "'");
      e.defaults[key] = value;
    }
    if (spec.initial_state) e.initial_state = spec.initial_state;
    if (spec.horizon) e.horizon = spec.horizon;
    reg.add(std::move(e));
    return reg.build(spec.name);
  }
  Scenario sc = reg.build(spec.name, spec.parameters);
  if (spec.initial_state) {
    detail::require_dim(spec.initial_state->size(), sc.system.partition.n(), "override initial_state");
    sc.default_initial_state = *spec.initial_state;
  }
  if (spec.horizon) sc.default_horizon = *spec.horizon;
  return sc;
}

}  // namespace cvlf
