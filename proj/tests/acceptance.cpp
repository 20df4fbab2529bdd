// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>

#include "cvlf/cvlf.hpp"

using namespace cvlf;

namespace {

struct Outcome {
  bool passed = true;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double budget_s;
  std::function<Outcome()> body;
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

const Scenario& lorenz_sc() {
  static const Scenario sc = build_scenario("lorenz-network");
  return sc;
}

Vec random_in_ball(std::mt19937_64& rng, Eigen::Index n, double rho) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v.normalized() * rho * std::pow(u(rng), 1.0 / static_cast<double>(n));
}

Mat random_metzler(std::mt19937_64& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> off(0.0, 1.0), diag(-4.0, 0.5);
  Mat m(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) m(r, c) = r == c ? diag(rng) : off(rng);
  return m;
}

std::int64_t ulp_distance(double a, double b) {
  if (a == b) return 0;
  if (std::signbit(a) != std::signbit(b)) return std::numeric_limits<std::int64_t>::max();
  std::int64_t ia, ib;
  std::memcpy(&ia, &a, sizeof a);
  std::memcpy(&ib, &b, sizeof b);
  return std::llabs(ia - ib);
}

Trajectory criterion3_run() {
  const auto& sc = lorenz_sc();
  const auto ctrl = make_controller(sc.system.partition, *sc.synthesis_data, SigmaDesign::zero());
  IntegratorConfig cfg;
  cfg.dt = 1e-3;
  cfg.horizon = 10.0;
  return integrate(sc, ctrl, sc.default_initial_state, cfg);
}

Outcome example1_certificates() {
  const Mat L = example1_lambda(33.0, 0.001);
  const bool metzler = is_metzler(L);
  const auto minors = leading_principal_minors(-L);
  bool minors_ok = true;
  for (double m : minors) minors_ok = minors_ok && m > 1e-12;
  const double abscissa = spectral_abscissa(L);
  return {metzler && minors_ok && abscissa < -1e-6,
          std::string("metzler=") + (metzler ? "yes" : "no") + " minors>1e-12=" + (minors_ok ? "yes" : "no") +
              " max Re=" + fmt(abscissa)};
}

Outcome gain_law() {
  const auto dc = derive_constants(lorenz_sc(), 2.0, kDefaultConstantSamples, 0);
  const Vec rows = dc.coupling_row_sums();
  Vec bound(dc.c1.size());
  for (Eigen::Index i = 0; i < bound.size(); ++i) bound[i] = gain_bound(dc.c1[i], dc.c2p[i], rows[i]);
  const double above = spectral_abscissa(example2_lambda(dc.c1, dc.c2p, bound.array() + 0.1, dc.coupling));
  const double below = spectral_abscissa(example2_lambda(dc.c1, dc.c2p, bound.array() - 0.1, dc.coupling));
  const bool hurwitz_above = above < 0.0;
  const bool not_hurwitz_below = below >= 0.0;
  return {hurwitz_above && not_hurwitz_below, "bound=" + fmt(bound.maxCoeff()) + " max Re at +0.1=" + fmt(above) +
                                                  " at -0.1=" + fmt(below)};
}

Outcome convergence() {
  const auto traj = criterion3_run();
  const double n = traj.states.back().norm();
  return {!traj.fault && n < 1e-3, "|x(10)|=" + fmt(n)};
}

Outcome settling_order() {
  const auto& sc = lorenz_sc();
  const auto zero = make_controller(sc.system.partition, *sc.synthesis_data, SigmaDesign::zero());
  const auto sontag = make_controller(sc.system.partition, *sc.synthesis_data, SigmaDesign::sontag());
  const auto runs = batch_run(sc, {zero, sontag}, {sc.default_initial_state}, IntegratorConfig{});
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double tz = settling_time(runs[0].trajectory, 1e-2).value_or(inf);
  const double ts = settling_time(runs[1].trajectory, 1e-2).value_or(inf);
  return {ts <= tz * 1.02 && std::isfinite(ts), "sontag=" + fmt(ts) + " zero=" + fmt(tz) +
                                                    (std::isfinite(tz) ? "" : " (zero never settles on [0,10])")};
}

Outcome domination() {
  const auto& sc = lorenz_sc();
  const auto traj = criterion3_run();
  const auto z = simulate_comparison(sc.comparison, traj.lyapunov.front(), 10.0, 1e-3);
  const auto rep = check_domination(traj.times, traj.lyapunov, z, 1e-6);
  return {rep.passed, "worst V-z=" + fmt(rep.worst_violation) + " over " + std::to_string(rep.samples) + " samples"};
}

Outcome zero_sigma_reduction() {
  const auto laws = make_phi2(*lorenz_sc().synthesis_data, SigmaDesign::zero());
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> mag(-6.0, 1.0);
  std::uniform_int_distribution<int> sign(0, 1);
  std::int64_t worst = 0;
  for (int s = 0; s < 10000; ++s) {
    const double y = (sign(rng) ? 1.0 : -1.0) * std::pow(10.0, mag(rng));
    worst = std::max(worst, ulp_distance(laws[s % 3](Vec::Constant(1, y))[0], -30.0 * y));
  }
  return {worst <= 1, "worst ulp=" + std::to_string(worst)};
}

Outcome property_suites() {
  std::mt19937_64 rng(7);
  std::ostringstream detail;
  bool ok = true;

  std::uniform_real_distribution<double> unit(0.0, 2.0);
  double min_z = 0.0;
  for (int s = 0; s < 100; ++s) {
    const Mat m = random_metzler(rng, 2 + s % 5);
    Vec z0(m.rows());
    for (Eigen::Index i = 0; i < z0.size(); ++i) z0[i] = unit(rng);
    for (const auto& st : simulate_comparison(ComparisonMap(LinearMetzler{m}), z0, 1.0, 1e-2).states) {
      min_z = std::min(min_z, static_cast<double>(st.minCoeff()));
    }
  }
  ok = ok && min_z >= -1e-12;
  detail << "nonneg min=" << min_z;

  int agree = 0, checked = 0;
  while (checked < 100) {
    const Mat m = random_metzler(rng, 2 + checked % 5);
    if (std::abs(spectral_abscissa(m)) < 1e-6) continue;
    ++checked;
    agree += is_m_matrix_negation(m) == is_hurwitz(m, 1e-12);
  }
  ok = ok && agree == 100;
  detail << "; M/Hurwitz agree " << agree << "/100";

  double fd_worst = 0.0;
  int points = 0;
  for (const auto* name : {"example1", "lorenz-network"}) {
    const auto sc = build_scenario(name);
    const auto& p = sc.system.partition;
    for (int s = 0; s < 500; ++s, ++points) {
      const Vec x = random_in_ball(rng, p.n(), sc.system.domain_radius);
      for (std::size_t i = 0; i < p.subsystems(); ++i) {
        const auto& V = sc.lyapunov.components[i];
        const Vec xi = p.state_block(x, i);
        const Mat g = V.gradient(xi);
        for (Eigen::Index c = 0; c < xi.size(); ++c) {
          const double h = 1e-5;
          Vec a = xi, b = xi;
          a[c] += h;
          b[c] -= h;
          const Vec fd = (V.value(a) - V.value(b)) / (2 * h);
          for (Eigen::Index r = 0; r < fd.size(); ++r) {
            fd_worst = std::max(fd_worst, std::abs(fd[r] - g(r, c)) / std::max(1.0, std::abs(g(r, c))));
          }
        }
      }
    }
  }
  ok = ok && fd_worst < 1e-5;
  detail << "; gradient fd rel err " << fd_worst << " on " << points << " points";

  CompositeSystem decay;
  decay.partition = StatePartition({1}, {0}, {1});
  decay.drift = [](const Vec& x) { return Vec(-x); };
  decay.output_block = [](const Vec& x, std::size_t) { return x; };
  decay.domain_radius = 10.0;
  const DecentralizedController none(decay.partition, {[](const Vec&) { return Vec(0); }}, {});
  const auto err = [&](double dt) {
    IntegratorConfig cfg;
    cfg.dt = dt;
    cfg.horizon = 2.0;
    return std::abs(integrate(decay, none, Vec::Ones(1), cfg).states.back()[0] - std::exp(-2.0));
  };
  const double order = err(0.1) / err(0.05);
  ok = ok && order >= 12.0 && order <= 20.0;
  detail << "; rk4 factor " << order;

  const auto& sc = lorenz_sc();
  const auto ctrl = make_controller(sc.system.partition, *sc.synthesis_data, SigmaDesign::sontag());
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  bool exact = true;
  for (int s = 0; s < 200; ++s) {
    const Vec y(Eigen::Vector3d(d(rng), d(rng), d(rng)));
    const Vec u = ctrl(y);
    for (int j = 0; j < 3; ++j) {
      Vec yp = y;
      yp[j] += d(rng);
      const Vec up = ctrl(yp);
      for (int i = 0; i < 3; ++i) exact = exact && (i == j || u[i] == up[i]);
    }
  }
  ok = ok && exact;
  detail << "; decentralized " << (exact ? "bit-exact" : "LEAKS");
  return {ok, detail.str()};
}

Outcome ocvlf_falsifier() {
  const auto e1 = build_scenario("example1");
  OcvlfCheckConfig cfg;
  cfg.radius = std::sqrt(2.0);
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& r : check_ocvlf(e1.lyapunov, e1.comparison, e1.system, cfg)) worst = std::max(worst, r.worst_violation);
  const ComparisonMap zero(LinearMetzler{Mat::Zero(3, 3)});
  bool witness = false;
  for (const auto& r : check_ocvlf(e1.lyapunov, zero, e1.system, OcvlfCheckConfig{})) {
    witness = witness || (!r.passed && r.witness.state.size() == 3);
  }
  return {worst < 0.0 && witness,
          "worst on radius sqrt2=" + fmt(worst) + " zero-map witness=" + (witness ? "yes" : "no")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "example 1 certificates", 1.0, example1_certificates},
      {2, "example 2 gain law", 1.0, gain_law},
      {3, "closed-loop convergence", 5.0, convergence},
      {4, "settling-time ordering", 10.0, settling_order},
      {5, "comparison domination", 5.0, domination},
      {6, "zero-sigma reduction", 1.0, zero_sigma_reduction},
      {7, "property suites", 30.0, property_suites},
      {8, "ocvlf falsifier", 10.0, ocvlf_falsifier},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.passed && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << c.id << "  " << c.title << "  (" << fmt(secs) << " s, budget "
              << c.budget_s << " s" << (in_time ? "" : ", over budget") << ")  " << o.detail << "\n";
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed\n";
  return failed ? 1 : 0;
}
