#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cvlf/cvlf.hpp"

using namespace cvlf;

namespace {

const Scenario& lorenz_sc() {
  static const Scenario sc = build_scenario("lorenz-network");
  return sc;
}

const Scenario& example1() {
  static const Scenario sc = build_scenario("example1");
  return sc;
}

Vec random_in_ball(std::mt19937_64& rng, Eigen::Index n, double rho) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v.normalized() * rho * std::pow(u(rng), 1.0 / static_cast<double>(n));
}

// Lorenz network with gains one unit above the sampled bound.
Scenario lorenz_above_bound() {
  const auto& dc = *lorenz_sc().constants;
  const Vec rows = dc.coupling_row_sums();
  double k = 0.0;
  for (Eigen::Index i = 0; i < dc.c1.size(); ++i) k = std::max(k, gain_bound(dc.c1[i], dc.c2p[i], rows[i]) + 1.0);
  return build_scenario("lorenz-network", {{"k", k}});
}

}  // namespace

TEST(Storage, Examples) {
  const auto& e1 = example1();
  EXPECT_EQ(eval_v(e1.lyapunov, e1.system.partition, Vec::Ones(3)), Vec::Constant(3, 0.5));
  EXPECT_EQ(eval_v(e1.lyapunov, e1.system.partition, Vec::Zero(3)), Vec::Zero(3));

  const auto& lz = lorenz_sc();
  Vec x = Vec::Zero(9);
  x.head<3>() << 1.0, 2.0, 1.0;
  const Vec v = eval_v(lz.lyapunov, lz.system.partition, x);
  ASSERT_EQ(v.size(), 6);
  EXPECT_DOUBLE_EQ(v[0], 1.25);
  EXPECT_DOUBLE_EQ(v[1], 2.0);
  EXPECT_EQ(v.tail<4>(), Vec::Zero(4));
}

TEST(Storage, PositiveAwayFromOrigin) {
  std::mt19937_64 rng(11);
  for (const auto* sc : {&example1(), &lorenz_sc()}) {
    const auto& p = sc->system.partition;
    for (std::size_t i = 0; i < p.subsystems(); ++i) {
      for (int s = 0; s < 200; ++s) {
        const Vec xi = random_in_ball(rng, p.state_dim(i), sc->system.domain_radius);
        // Storage components are positive semidefinite individually and positive definite jointly.
        const Vec vi = sc->lyapunov.components[i].value(xi);
        EXPECT_GE(vi.minCoeff(), 0.0);
        EXPECT_GT(vi.sum(), 0.0);
      }
    }
  }
}

TEST(Storage, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  int points = 0;
  for (const auto* sc : {&example1(), &lorenz_sc()}) {
    const auto& p = sc->system.partition;
    for (int s = 0; s < 500; ++s, ++points) {
      const Vec x = random_in_ball(rng, p.n(), sc->system.domain_radius);
      for (std::size_t i = 0; i < p.subsystems(); ++i) {
        const auto& V = sc->lyapunov.components[i];
        const Vec xi = p.state_block(x, i);
        const Mat g = V.gradient(xi);
        for (Eigen::Index c = 0; c < xi.size(); ++c) {
          const double h = 1e-5;
          Vec a = xi, b = xi;
          a[c] += h;
          b[c] -= h;
          const Vec fd = (V.value(a) - V.value(b)) / (2 * h);
          for (Eigen::Index r = 0; r < fd.size(); ++r) {
            const double scale = std::max(1.0, std::abs(g(r, c)));
            EXPECT_LT(std::abs(fd[r] - g(r, c)) / scale, 1e-5);
          }
        }
      }
    }
  }
  EXPECT_EQ(points, 1000);
}

TEST(Storage, LibraryFiniteDifferenceAgrees) {
  Eigen::Vector3d xi(0.4, -1.1, 0.7);
  const auto V = lorenz_sc().lyapunov.components[0];
  EXPECT_LT((finite_difference_gradient(V, xi) - V.gradient(xi)).norm(), 1e-6);
}

TEST(LieDerivative, Examples) {
  const auto& e1 = example1();
  EXPECT_EQ(lie_derivative(e1.lyapunov, e1.system, Vec::Zero(3), Vec::Zero(1)), Vec::Zero(3));
  EXPECT_EQ(lie_derivative(e1.lyapunov, e1.system, Vec::Ones(3), Vec::Zero(1)),
            Eigen::Vector3d(1.0, -1.0, 0.0));
  const auto& lz = lorenz_sc();
  EXPECT_EQ(lie_derivative(lz.lyapunov, lz.system, Vec::Zero(9), Vec::Zero(3)), Vec::Zero(6));
}

TEST(LieDerivative, LorenzClosedForm) {
  const auto& lz = lorenz_sc();
  std::mt19937_64 rng(13);
  for (int s = 0; s < 50; ++s) {
    const Vec x = random_in_ball(rng, 9, 2.0);
    const Vec u = random_in_ball(rng, 3, 10.0);
    const Vec got = lie_derivative(lz.lyapunov, lz.system, x, u);
    const double ysum = x[1] + x[4] + x[7];
    for (int i = 0; i < 3; ++i) {
      const double a = x[3 * i], b = x[3 * i + 1], c = x[3 * i + 2];
      const double d1 = 10.0 * (b - a), d2 = 28.0 * a - b - a * c + u[i] + (ysum - b);
      const double d3 = a * b - 8.0 / 3.0 * c;
      EXPECT_NEAR(got[2 * i], (a + a * a * a) * d1 + c * d3, 1e-12);
      EXPECT_NEAR(got[2 * i + 1], b * d2, 1e-12);
    }
  }
}

TEST(LieDerivative, AffineInControl) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> coef(-3.0, 3.0);
  for (const auto* sc : {&example1(), &lorenz_sc()}) {
    const auto& p = sc->system.partition;
    for (int s = 0; s < 100; ++s) {
      const Vec x = random_in_ball(rng, p.n(), 2.0);
      const Vec u = random_in_ball(rng, p.m(), 5.0), w = random_in_ball(rng, p.m(), 5.0);
      const double al = coef(rng), be = coef(rng);
      const auto L = [&](const Vec& v) { return lie_derivative(sc->lyapunov, sc->system, x, v); };
      const Vec lhs = L(al * u + be * w);
      const Vec rhs = al * L(u) + be * L(w) - (al + be - 1.0) * L(Vec::Zero(p.m()));
      EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, lhs.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(LieDerivative, MatchesDifferenceAlongFlow) {
  const auto& lz = lorenz_sc();
  std::mt19937_64 rng(15);
  for (int s = 0; s < 50; ++s) {
    const Vec x = random_in_ball(rng, 9, 2.0);
    const Vec u = random_in_ball(rng, 3, 5.0);
    const auto f = [&](double, const Vec& z) { return eval_dynamics(lz.system, z, u); };
    const double h = 1e-4;
    const Vec fwd = ode::rk4_step(f, 0.0, x, h);
    const Vec bwd = ode::rk4_step(f, 0.0, x, -h);
    const Vec fd = (eval_v(lz.lyapunov, lz.system.partition, fwd) -
                    eval_v(lz.lyapunov, lz.system.partition, bwd)) / (2 * h);
    const Vec an = lie_derivative(lz.lyapunov, lz.system, x, u);
    EXPECT_LT((fd - an).cwiseAbs().maxCoeff() / std::max(1.0, an.cwiseAbs().maxCoeff()), 1e-4);
  }
}

TEST(Ocvlf, Example1PassesOnSmallBall) {
  const auto& e1 = example1();
  OcvlfCheckConfig cfg;
  cfg.radius = std::sqrt(2.0);
  const auto reps = check_ocvlf(e1.lyapunov, e1.comparison, e1.system, cfg);
  ASSERT_EQ(reps.size(), 3u);
  for (const auto& r : reps) {
    EXPECT_TRUE(r.passed) << r.name << " worst " << r.worst_violation;
    EXPECT_LT(r.worst_violation, 0.0) << r.name;
  }
}

TEST(Ocvlf, Example1PrintedBoundFailsOnFullRadius) {
  // V1' <= -2 V1 + 8 V3 needs x1^2 <= 2, which S_rho with rho = 2 does not guarantee.
  const auto& e1 = example1();
  const auto reps = check_ocvlf(e1.lyapunov, e1.comparison, e1.system, OcvlfCheckConfig{});
  EXPECT_FALSE(reps[0].passed);
  const Vec& x = reps[0].witness.state;
  EXPECT_GT(x[0] * x[0], 2.0);
}

TEST(Ocvlf, ZeroComparisonMapGivesWitness) {
  const auto& e1 = example1();
  const ComparisonMap zero(LinearMetzler{Mat::Zero(3, 3)});
  const auto reps = check_ocvlf(e1.lyapunov, zero, e1.system, OcvlfCheckConfig{});
  ASSERT_FALSE(reps[0].passed);
  const Vec& x = reps[0].witness.state;
  // V1' = x1^2 (2 x3^2 - 1) > 0 at the witness.
  EXPECT_GT(x[0] * x[0] * (2 * x[2] * x[2] - 1), 0.0);
  EXPECT_GT(x[2] * x[2], 0.5);
}

TEST(Ocvlf, LargerControlGridNeverHurts) {
  const auto& e1 = example1();
  OcvlfCheckConfig small;
  small.radius = std::sqrt(2.0);
  small.control_radius = 40.0;
  small.control_step = 1.0;
  OcvlfCheckConfig large = small;
  large.control_radius = 100.0;
  large.control_step = 0.5;
  const auto a = check_ocvlf(e1.lyapunov, e1.comparison, e1.system, small);
  const auto b = check_ocvlf(e1.lyapunov, e1.comparison, e1.system, large);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].passed) {
      EXPECT_TRUE(b[i].passed) << a[i].name;
    }
    EXPECT_LE(b[i].worst_violation, a[i].worst_violation + 1e-9) << a[i].name;
  }
}

TEST(Ocvlf, Deterministic) {
  const auto& e1 = example1();
  OcvlfCheckConfig cfg;
  cfg.radius = std::sqrt(2.0);
  cfg.seed = 5;
  const auto a = check_ocvlf(e1.lyapunov, e1.comparison, e1.system, cfg);
  const auto b = check_ocvlf(e1.lyapunov, e1.comparison, e1.system, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].worst_violation, b[i].worst_violation);
}

TEST(Ocvlf, ConfigValidation) {
  const auto& e1 = example1();
  OcvlfCheckConfig cfg;
  cfg.output_samples = 0;
  EXPECT_THROW(check_ocvlf(e1.lyapunov, e1.comparison, e1.system, cfg), ConfigError);
  cfg = {};
  cfg.control_radius = 0.0;
  EXPECT_THROW(check_ocvlf(e1.lyapunov, e1.comparison, e1.system, cfg), ConfigError);
}

TEST(SmallControl, LinearBoundPassesAboveGainBound) {
  const auto sc = lorenz_above_bound();
  const double k = sc.parameters.at("k");
  std::vector<std::function<double(const Vec&)>> mu(3, [k](const Vec& y) { return 2 * k * y.norm(); });
  OcvlfCheckConfig cfg;
  cfg.control_radius = 4 * k * 2.0;
  cfg.control_step = 1.0;
  for (const auto& r : check_small_control(sc.lyapunov, sc.comparison, sc.system, mu, cfg)) {
    EXPECT_TRUE(r.passed) << r.name << " worst " << r.worst_violation;
    // Controls found respect the bound.
    if (r.witness.output.size() && r.witness.output.norm() > 0) {
      EXPECT_LT(r.witness.control.norm(), 2 * k * r.witness.output.norm());
    }
  }
}

TEST(SmallControl, VanishingBoundFails) {
  const auto sc = lorenz_above_bound();
  std::vector<std::function<double(const Vec&)>> mu(3, [](const Vec& y) { return 1e-12 * y.norm(); });
  const auto reps = check_small_control(sc.lyapunov, sc.comparison, sc.system, mu, OcvlfCheckConfig{});
  bool any_failed = false;
  for (const auto& r : reps) any_failed = any_failed || !r.passed;
  EXPECT_TRUE(any_failed);
}

TEST(SmallControl, BoundMustVanishAtOriginOnly) {
  const auto& lz = lorenz_sc();
  std::vector<std::function<double(const Vec&)>> shifted(3, [](const Vec& y) { return 1.0 + y.norm(); });
  EXPECT_THROW(check_small_control(lz.lyapunov, lz.comparison, lz.system, shifted, OcvlfCheckConfig{}),
               ConfigError);
  std::vector<std::function<double(const Vec&)>> flat(3, [](const Vec&) { return 0.0; });
  EXPECT_THROW(check_small_control(lz.lyapunov, lz.comparison, lz.system, flat, OcvlfCheckConfig{}),
               ConfigError);
}
