#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvlf/common.hpp"
#include "cvlf/comparison.hpp"
#include "cvlf/lyapunov.hpp"
#include "cvlf/model.hpp"
#include "cvlf/report.hpp"
#include "cvlf/sampling.hpp"

namespace cvlf {

/// Two-channel dissipation data of one subsystem:
///   dV_i/dt <= W_i(x, u_i1) + e_c (p_i1(y_i, u_i1) + p_i2(y_i) u_i2)
/// where e_c selects the storage component `supply_component` that carries the supply rate.
struct SubsystemSynthesis {
  int m1 = 0;
  int m2 = 1;
  /// Inner-loop law u_i1 = phi_i1(y_i); unused when m1 == 0.
  std::function<Vec(const Vec& y)> phi1;
  std::function<Vec(const Vec& x, const Vec& u1)> W;
  std::function<double(const Vec& y, const Vec& u1)> p1;
  /// Row p_i2(y_i) of width m2, returned as a column vector.
  std::function<Vec(const Vec& y)> p2;
  int supply_component = 0;

  Vec inner(const Vec& y) const { return m1 > 0 ? phi1(y) : Vec(0); }
  double p1_tilde(const Vec& y) const { return p1(y, inner(y)); }
};

struct SynthesisData {
  std::vector<SubsystemSynthesis> subsystems;
  /// Constants the data was built from (recorded in controller provenance).
  std::map<std::string, double> constants;

  void validate(const StatePartition& p) const {
    if (subsystems.size() != p.subsystems()) {
      throw DimensionError("SynthesisData: one entry per subsystem required");
    }
    for (std::size_t i = 0; i < subsystems.size(); ++i) {
      const auto& s = subsystems[i];
      if (s.m1 < 0 || s.m2 < 0 || s.m1 + s.m2 != p.input_dim(i)) {
        throw DimensionError("SynthesisData: channel split of subsystem " + std::to_string(i + 1) +
                             " does not sum to its input dimension");
      }
      if (s.m1 > 0 && !s.phi1) throw ConfigError("SynthesisData: phi1 missing");
      if (!s.p1 || !s.p2 || !s.W) throw ConfigError("SynthesisData: W, p1 and p2 are required");
    }
  }
};

/// sqrt(p1_tilde^2 + |p2|^2), the Sontag-like design function.
inline double sontag_sigma(double p1_tilde, const Vec& p2) {
  return std::sqrt(p1_tilde * p1_tilde + p2.squaredNorm());
}

enum class SigmaKind { Zero, SontagLike, Custom };

/// Design function sigma_i >= 0 vanishing at y_i = 0. Custom designs see (y, p1_tilde, p2).
struct SigmaDesign {
  SigmaKind kind = SigmaKind::Zero;
  std::function<double(const Vec& y, double p1_tilde, const Vec& p2)> custom;
  std::string label = "zero";

  static SigmaDesign zero() { return {}; }
  static SigmaDesign sontag() { return {SigmaKind::SontagLike, {}, "sontag"}; }
  /// Classical universal-formula choice sqrt(p1_tilde^2 + |p2|^4).
  static SigmaDesign classical() {
    return {SigmaKind::Custom,
            [](const Vec&, double a, const Vec& b) {
              const double b2 = b.squaredNorm();
              return std::sqrt(a * a + b2 * b2);
            },
            "classical"};
  }
  /// sigma(y) = c |y|^2.
  static SigmaDesign quadratic(double c) {
    if (c < 0.0) throw ConfigError("quadratic sigma needs c >= 0");
    return {SigmaKind::Custom, [c](const Vec& y, double, const Vec&) { return c * y.squaredNorm(); },
            "quadratic:" + std::to_string(c)};
  }

  double operator()(const Vec& y, double p1_tilde, const Vec& p2) const {
    switch (kind) {
      case SigmaKind::Zero:
        return 0.0;
      case SigmaKind::SontagLike:
        return sontag_sigma(p1_tilde, p2);
      case SigmaKind::Custom:
        return custom(y, p1_tilde, p2);
    }
    return 0.0;
  }
};

/// Thresholds standing in for the exact tests y_i = 0 and p_i2(y_i) = 0.
struct Thresholds {
  double eps_y = 1e-9;
  double eps_p = 1e-12;
};

enum class Phi2Branch { Origin, P2Zero, Formula };

/// Outer-loop law u_i2 = phi_i2(y_i).
class Phi2Law {
 public:
  Phi2Law(std::shared_ptr<const SubsystemSynthesis> data, SigmaDesign sigma, Thresholds th)
      : data_(std::move(data)), sigma_(std::move(sigma)), th_(th) {}

  Vec operator()(const Vec& y, Phi2Branch* branch = nullptr) const {
    if (y.norm() <= th_.eps_y) {
      if (branch) *branch = Phi2Branch::Origin;
      return Vec::Zero(data_->m2);
    }
    const Vec p2 = data_->p2(y);
    detail::require_dim(p2.size(), data_->m2, "p2");
    const double p2_sq = p2.squaredNorm();
    if (std::sqrt(p2_sq) <= th_.eps_p) {
      if (branch) *branch = Phi2Branch::P2Zero;
      return Vec::Zero(data_->m2);
    }
    if (branch) *branch = Phi2Branch::Formula;
    const double p1t = data_->p1_tilde(y);
    const double sigma = sigma_(y, p1t, p2);
    // |p2|^2 stays in double so it cancels the rounding of the same square inside p1; the
    // ratio and product are rounded once.
    const long double factor = -(static_cast<long double>(p1t) + sigma) / static_cast<long double>(p2_sq);
    return (factor * p2.cast<long double>()).cast<double>();
  }

 private:
  std::shared_ptr<const SubsystemSynthesis> data_;
  SigmaDesign sigma_;
  Thresholds th_;
};

inline std::vector<Phi2Law> make_phi2(const SynthesisData& data, const SigmaDesign& sigma,
                                      Thresholds th = {}) {
  if (th.eps_y < 0.0 || th.eps_p < 0.0) throw ConfigError("thresholds must be nonnegative");
  std::vector<Phi2Law> laws;
  for (const auto& s : data.subsystems) {
    laws.emplace_back(std::make_shared<const SubsystemSynthesis>(s), sigma, th);
  }
  return laws;
}

/// How a controller came to be; enough to rebuild the law.
struct ControllerProvenance {
  std::string kind = "user-supplied";
  std::string sigma;
  double eps_y = 0.0;
  double eps_p = 0.0;
  std::map<std::string, double> constants;
  std::vector<double> gains;
  std::string description;
};

inline nlohmann::json to_json(const ControllerProvenance& p) {
  nlohmann::json j;
  j["kind"] = p.kind;
  j["sigma"] = p.sigma;
  j["eps_y"] = p.eps_y;
  j["eps_p"] = p.eps_p;
  j["constants"] = p.constants;
  j["gains"] = p.gains;
  j["description"] = p.description;
  return j;
}

/// Decentralized output feedback u_i = Gamma_i(y_i).
class DecentralizedController {
 public:
  using Law = std::function<Vec(const Vec& y_i)>;

  DecentralizedController(StatePartition partition, std::vector<Law> laws,
                          ControllerProvenance provenance)
      : partition_(std::move(partition)), laws_(std::move(laws)), provenance_(std::move(provenance)) {
    if (laws_.size() != partition_.subsystems()) {
      throw DimensionError("DecentralizedController: one law per subsystem required");
    }
  }

  /// Stacked input; block i reads only the output block y_i.
  Vec operator()(const Vec& y) const {
    detail::require_dim(y.size(), partition_.l(), "controller output vector");
    Vec u(partition_.m());
    for (std::size_t i = 0; i < laws_.size(); ++i) {
      const int mi = partition_.input_dim(i);
      if (mi == 0) continue;
      const Vec ui = laws_[i](partition_.output_block(y, i));
      detail::require_dim(ui.size(), mi, "controller law");
      u.segment(partition_.input_offset(i), mi) = ui;
    }
    return u;
  }

  Vec law(std::size_t i, const Vec& yi) const {
    if (partition_.input_dim(i) == 0) return Vec(0);
    return laws_.at(i)(yi);
  }

  const StatePartition& partition() const { return partition_; }
  const ControllerProvenance& provenance() const { return provenance_; }

 private:
  StatePartition partition_;
  std::vector<Law> laws_;
  ControllerProvenance provenance_;
};

/// u_i = [phi_i1(y_i); phi_i2(y_i)] per subsystem.
inline DecentralizedController make_controller(const StatePartition& partition,
                                               const SynthesisData& data, const SigmaDesign& sigma,
                                               Thresholds th = {}) {
  data.validate(partition);
  auto phi2 = make_phi2(data, sigma, th);
  std::vector<DecentralizedController::Law> laws;
  for (std::size_t i = 0; i < data.subsystems.size(); ++i) {
    auto sub = std::make_shared<const SubsystemSynthesis>(data.subsystems[i]);
    laws.push_back([sub, law2 = phi2[i]](const Vec& y) {
      Vec u(sub->m1 + sub->m2);
      if (sub->m1 > 0) u.head(sub->m1) = sub->phi1(y);
      u.tail(sub->m2) = law2(y);
      return u;
    });
  }
  ControllerProvenance prov;
  prov.kind = "synthesized";
  prov.sigma = sigma.label;
  prov.eps_y = th.eps_y;
  prov.eps_p = th.eps_p;
  prov.constants = data.constants;
  for (const auto& [key, value] : data.constants) {
    if (key.rfind("k", 0) == 0 && key.size() > 1 && key[1] == '_') prov.gains.push_back(value);
  }
  prov.description = "two-channel synthesis, phi2 = -(p1~ + sigma)/|p2|^2 p2^T";
  return DecentralizedController(partition, std::move(laws), std::move(prov));
}

/// User-supplied linear law u_i = -gain_i y_i (requires m_i = l_i where m_i > 0).
inline DecentralizedController linear_output_feedback(const StatePartition& partition,
                                                      const std::vector<double>& gains,
                                                      std::string description = {}) {
  if (gains.size() != partition.subsystems()) throw DimensionError("one gain per subsystem");
  std::vector<DecentralizedController::Law> laws;
  for (std::size_t i = 0; i < gains.size(); ++i) {
    if (partition.input_dim(i) > 0 && partition.input_dim(i) != partition.output_dim(i)) {
      throw DimensionError("linear_output_feedback needs m_i = l_i");
    }
    laws.push_back([g = gains[i]](const Vec& y) -> Vec { return -g * y; });
  }
  ControllerProvenance prov;
  prov.kind = "user-supplied";
  prov.sigma = "none";
  prov.gains = gains;
  prov.description = description.empty() ? "u_i = -gain_i y_i" : std::move(description);
  return DecentralizedController(partition, std::move(laws), std::move(prov));
}

/// Minimal (exclusive) gain c1/2 + c2p + sum of couplings.
inline double gain_bound(double c1, double c2p, double coupling_row_sum) {
  if (c1 < 0.0 || c2p < 0.0 || coupling_row_sum < 0.0) {
    throw ConfigError("gain_bound: inputs must be nonnegative");
  }
  return c1 / 2.0 + c2p + coupling_row_sum;
}

/// Item-by-item outcome of the sampled check of the synthesis preconditions.
struct Condition1Report {
  CheckReport comparison;               // (i)
  std::vector<CheckReport> dissipation;  // (ii)
  std::vector<CheckReport> inner_loop;   // (iii)
  std::vector<CheckReport> zero_set;     // (iv)
  bool zero_set_vacuous = false;

  bool passed() const {
    bool ok = comparison.passed;
    for (const auto* group : {&dissipation, &inner_loop, &zero_set})
      for (const auto& r : *group) ok = ok && r.passed;
    return ok;
  }
};

/// Certificates for item (i): Metzler + Hurwitz for a linear map; sampled quasimonotonicity
/// plus empirical decay otherwise.
inline CheckReport comparison_certificate(const ComparisonMap& lambda, double margin = 1e-9,
                                          std::uint64_t seed = 0) {
  CheckReport rep;
  rep.name = "comparison-stability";
  if (lambda.is_linear()) {
    const Mat& M = lambda.matrix();
    rep.threshold = -margin;
    rep.observe(spectral_abscissa(M), Witness{});
    rep.finalize();
    const bool metzler = is_metzler(M);
    const bool mmatrix = is_m_matrix_negation(M);
    rep.notes.push_back(std::string("metzler: ") + (metzler ? "true" : "false"));
    rep.notes.push_back(std::string("m-matrix(-Lambda): ") + (mmatrix ? "true" : "false"));
    rep.notes.push_back("max Re(lambda) = " + std::to_string(rep.worst_violation));
    rep.passed = rep.passed && metzler;
    return rep;
  }
  rep = check_quasimonotone(lambda, 1.0, 256, seed);
  rep.name = "comparison-stability";
  const auto n = static_cast<Eigen::Index>(lambda.dim());
  // Empirical decay from the all-ones state.
  try {
    const auto traj = simulate_comparison(lambda, Vec::Ones(n), 50.0, 1e-2);
    const double final_norm = static_cast<double>(traj.states.back().norm());
    rep.notes.push_back("|z(50)| from ones = " + std::to_string(final_norm));
    if (!(final_norm < 1e-3)) rep.passed = false;
  } catch (const IntegrationFault& e) {
    rep.notes.push_back(e.what());
    rep.passed = false;
  }
  rep.notes.push_back("general map: stability checked empirically only");
  return rep;
}

/// Sampled falsifiers for the synthesis preconditions.
///
/// (ii) dV_i/dt <= W_i(x,u_i1) + e_c (p_i1 + p_i2 u_i2) over sampled x in S_rho and controls,
/// (iii) W_i(x, phi_i1(y_i)) <= Lambda_i(V(x)) over sampled x,
/// (iv) p_i1(y_i, phi_i1(y_i)) <= 0 on the sampled zero set of p_i2,
/// (i) comparison-map certificates.
inline Condition1Report check_condition1(const CompositeSystem& sys, const VectorLyapunov& V,
                                         const ComparisonMap& lambda, const SynthesisData& data,
                                         const OcvlfCheckConfig& cfg,
                                         const Thresholds& th = {}) {
  cfg.validate();
  const auto& p = sys.partition;
  data.validate(p);
  detail::require_compatible(V, p);
  const double rho = cfg.radius.value_or(sys.domain_radius);
  const std::size_t state_samples = cfg.output_samples * cfg.fiber_samples;

  Condition1Report out;
  out.comparison = comparison_certificate(lambda, 1e-9, cfg.seed);

  BallSampler xs(static_cast<std::size_t>(p.n()), cfg.seed * 131 + 3);
  std::vector<Vec> states;
  states.reserve(state_samples);
  for (std::size_t s = 0; s < state_samples; ++s) states.push_back(xs.next(rho));

  for (std::size_t i = 0; i < p.subsystems(); ++i) {
    const auto& sub = data.subsystems[i];
    const int w = V.width(i);
    const int mi = p.input_dim(i);
    if (sub.supply_component < 0 || sub.supply_component >= w) {
      throw DimensionError("supply component out of range");
    }
    CheckReport ii, iii, iv;
    ii.name = "condition1.ii[" + std::to_string(i + 1) + "]";
    iii.name = "condition1.iii[" + std::to_string(i + 1) + "]";
    iv.name = "condition1.iv[" + std::to_string(i + 1) + "]";
    ii.threshold = iii.threshold = iv.threshold = cfg.tolerance;

    QuasiRandom controls(static_cast<std::size_t>(std::max(mi, 1)), cfg.seed * 31 + i + 11);
    for (const Vec& x : states) {
      const Vec f = sys.drift(x);
      const LieSplit ls = lie_split(V, sys, x, f, i);
      const Vec yi = eval_subsystem_output(sys, x, i);
      const Vec vx = eval_v(V, p, x);

      // (ii): one zero control and two sampled controls per state.
      for (int c = 0; c < 3; ++c) {
        Vec u = Vec::Zero(mi);
        if (c > 0 && mi > 0) u = cfg.control_radius * (2.0 * controls.next().head(mi).array() - 1.0).matrix();
        const Vec u1 = u.head(sub.m1);
        const Vec u2 = u.tail(sub.m2);
        Vec rhs = sub.W(x, u1);
        detail::require_dim(rhs.size(), w, "W_i");
        rhs[sub.supply_component] += sub.p1(yi, u1) + sub.p2(yi).dot(u2);
        const Vec lhs = ls.drift + ls.input * u;
        ii.observe((lhs - rhs).maxCoeff(), Witness{x, yi, u, {}, {}});
      }

      // (iii)
      const Vec u1 = sub.inner(yi);
      const Vec W = sub.W(x, u1);
      const Vec bound = lambda.apply(vx).segment(V.offset(i), w);
      iii.observe((W - bound).maxCoeff(), Witness{x, yi, u1, {}, {}});
    }

    // (iv): the origin plus sampled outputs where p_i2 vanishes.
    BallSampler ys(static_cast<std::size_t>(p.output_dim(i)), cfg.seed * 53 + i + 7);
    std::vector<Vec> candidates{Vec::Zero(p.output_dim(i))};
    for (std::size_t s = 0; s < state_samples; ++s) candidates.push_back(ys.next(rho));
    for (const Vec& y : candidates) {
      if (sub.p2(y).norm() > th.eps_p) continue;
      const Vec u1 = sub.inner(y);
      iv.observe(sub.p1(y, u1), Witness{Vec(), y, u1, {}, {}});
    }
    if (iv.samples == 0) {
      out.zero_set_vacuous = true;
      iv.notes.push_back("zero set of p2 not sampled: vacuously passed");
      iv.worst_violation = -std::numeric_limits<double>::infinity();
    }

    out.dissipation.push_back(ii.finalize());
    out.inner_loop.push_back(iii.finalize());
    out.zero_set.push_back(iv.finalize());
  }
  return out;
}

}  // namespace cvlf
