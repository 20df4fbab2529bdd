#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cvlf/common.hpp"
#include "cvlf/report.hpp"
#include "cvlf/sampling.hpp"

// Closed-form pieces of the y-coupled Lorenz network
//   x_i1' = w1 (x_i2 - x_i1)
//   x_i2' = w3 x_i1 - x_i2 - x_i1 x_i3 + u_i + varpi_i sum_{j != i} y_j
//   x_i3' = x_i1 x_i2 - w2 x_i3,          y_i = x_i2
// with vector storage V_i1 = x_i1^2/2 + x_i1^4/4 + x_i3^2/2, V_i2 = y_i^2/2.

namespace cvlf::lorenz {

struct Params {
  double w1 = 10.0;
  double w2 = 8.0 / 3.0;
  double w3 = 28.0;
  double rho = 2.0;
  double k = 30.0;
  double varpi = 1.0;
  int subsystems = 3;
};

/// Local part of the subsystem vector field (everything except input and coupling).
inline Eigen::Vector3d local_field(const Params& p, const Eigen::Vector3d& xi) {
  return {p.w1 * (xi[1] - xi[0]), p.w3 * xi[0] - xi[1] - xi[0] * xi[2],
          xi[0] * xi[1] - p.w2 * xi[2]};
}

inline double storage1(const Eigen::Vector3d& xi) {
  const double a = xi[0] * xi[0];
  return 0.5 * a + 0.25 * a * a + 0.5 * xi[2] * xi[2];
}

inline double storage2(const Eigen::Vector3d& xi) { return 0.5 * xi[1] * xi[1]; }

inline Eigen::Vector3d storage1_gradient(const Eigen::Vector3d& xi) {
  return {xi[0] + xi[0] * xi[0] * xi[0], 0.0, xi[2]};
}

/// dV_i1/dt; depends on x_i only.
inline double storage1_rate(const Params& p, const Eigen::Vector3d& xi) {
  return storage1_gradient(xi).dot(local_field(p, xi));
}

/// y_i (local part of y_i'), i.e. dV_i2/dt without the input and coupling terms.
inline double storage2_local_rate(const Params& p, const Eigen::Vector3d& xi) {
  return xi[1] * local_field(p, xi)[1];
}

/// One derived quantity with the sampled extremum it came from and its validated slack.
struct ConstantAudit {
  std::string name;
  double sampled_extremum = 0.0;
  double chosen = 0.0;
  double validated_worst_slack = 0.0;
};

/// Constants for the comparison matrix of the Lorenz network: per subsystem c1 (decay of
/// V_i1), c2 (gain on y^2 + y^4 in the V_i1 bound), c2p (weight on V_i2) and the coupling
/// weights varpi_ij.
struct DerivedConstants {
  Vec c1, c2, c2p;
  Mat coupling;
  double rho = 0.0;
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;
  std::vector<ConstantAudit> audit;

  Vec coupling_row_sums() const {
    Vec s(coupling.rows());
    for (Eigen::Index i = 0; i < coupling.rows(); ++i) {
      s[i] = coupling.row(i).sum() - coupling(i, i);
    }
    return s;
  }
};

class InfeasibleConstants : public std::runtime_error {
 public:
  InfeasibleConstants(const std::string& what, Vec witness)
      : std::runtime_error(what), witness_(std::move(witness)) {}
  const Vec& witness() const { return witness_; }

 private:
  Vec witness_;
};

namespace detail {

/// Maximizes f over the 3-ball of radius rho: quasi-random sampling followed by a compass
/// search from the best few samples. Returns the maximum and its argument.
template <class F>
std::pair<double, Eigen::Vector3d> maximize_on_ball(const F& f, double rho, std::size_t samples,
                                                    std::uint64_t seed) {
  BallSampler sampler(3, seed);
  std::vector<std::pair<double, Eigen::Vector3d>> scored;
  scored.reserve(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    const Eigen::Vector3d x = sampler.next(rho);
    const double v = f(x);
    if (std::isfinite(v)) scored.emplace_back(v, x);
  }
  if (scored.empty()) return {-std::numeric_limits<double>::infinity(), Eigen::Vector3d::Zero()};
  const std::size_t keep = std::min<std::size_t>(8, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep),
                    scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  auto best = scored.front();
  for (std::size_t s = 0; s < keep; ++s) {
    auto [value, x] = scored[s];
    double step = 0.1 * rho;
    int budget = 20000;
    while (step > 1e-9 * rho && budget > 0) {
      bool moved = false;
      for (int axis = 0; axis < 3; ++axis) {
        for (double dir : {-1.0, 1.0}) {
          Eigen::Vector3d trial = x;
          trial[axis] += dir * step;
          if (trial.norm() > rho) trial *= rho / trial.norm();
          const double v = f(trial);
          --budget;
          if (std::isfinite(v) && v > value) {
            value = v;
            x = trial;
            moved = true;
          }
        }
      }
      if (moved) {
        step *= 1.5;
      } else {
        step *= 0.5;
      }
    }
    if (value > best.first) best = {value, x};
  }
  return best;
}

}  // namespace detail

/// Derives c1, c2, c2p and varpi_ij on S_rho by sampling.
///
/// c1 is the sampled worst decay rate of V_i1 on {y_i = 0} deflated by 10%; c2 and c2p are
/// sampled maxima of the required ratios inflated by 10%. The coupling term
/// varpi_i y_i sum_j y_j is bounded by Young's inequality, giving varpi_ij = varpi_i and a
/// contribution varpi_i (N - 1) to c2p. The result is re-validated on fresh samples of the
/// full state in S_rho.
inline DerivedConstants derive_constants(const Params& p, std::size_t sample_count,
                                         std::uint64_t seed = 0) {
  if (sample_count == 0) throw ConfigError("derive_constants: sample_count = 0 cannot validate");
  if (!(p.rho > 0.0)) throw ConfigError("derive_constants: rho must be positive");
  const int N = p.subsystems;
  constexpr double safety = 1.1;

  DerivedConstants dc;
  dc.rho = p.rho;
  dc.sample_count = sample_count;
  dc.seed = seed;
  dc.c1.resize(N);
  dc.c2.resize(N);
  dc.c2p.resize(N);
  dc.coupling = Mat::Zero(N, N);

  for (int i = 0; i < N; ++i) {
    const std::uint64_t s = seed * 1009 + static_cast<std::uint64_t>(i) * 97;
    const std::string tag = "[" + std::to_string(i + 1) + "]";

    // Decay of V_i1 on the slice y_i = 0: rate = -V_i1' / V_i1, minimized.
    const auto neg_rate = [&](const Eigen::Vector3d& x) {
      const Eigen::Vector3d z{x[0], 0.0, x[2]};
      const double v = storage1(z);
      if (v < 1e-300) return -std::numeric_limits<double>::infinity();
      return storage1_rate(p, z) / v;
    };
    const auto [worst_neg_rate, rate_arg] = detail::maximize_on_ball(neg_rate, p.rho, sample_count, s + 1);
    const double rate = -worst_neg_rate;
    if (!(rate > 0.0)) {
      throw InfeasibleConstants("derive_constants: V_i1 does not decay on {y = 0}", rate_arg);
    }
    const double c1 = rate / safety;

    const auto ratio_c2 = [&](const Eigen::Vector3d& x) {
      const double y2 = x[1] * x[1];
      if (y2 < 1e-24) return -std::numeric_limits<double>::infinity();
      return (storage1_rate(p, x) + c1 * storage1(x)) / (y2 + y2 * y2);
    };
    const auto ratio_row1 = [&](const Eigen::Vector3d& x) {
      const double v2 = storage2(x);
      if (v2 < 1e-24) return -std::numeric_limits<double>::infinity();
      return (storage1_rate(p, x) + c1 * storage1(x)) / v2;
    };
    const auto ratio_row2 = [&](const Eigen::Vector3d& x) {
      const double v2 = storage2(x);
      if (v2 < 1e-24) return -std::numeric_limits<double>::infinity();
      return (storage2_local_rate(p, x) - 0.5 * c1 * storage1(x)) / v2;
    };
    const double sup_c2 = detail::maximize_on_ball(ratio_c2, p.rho, sample_count, s + 2).first;
    const double sup_row1 = detail::maximize_on_ball(ratio_row1, p.rho, sample_count, s + 3).first;
    const double sup_row2 = detail::maximize_on_ball(ratio_row2, p.rho, sample_count, s + 4).first;
    const double coupling_share = p.varpi * (N - 1);
    const double need = std::max({sup_row1, sup_row2 + coupling_share, 0.0});

    dc.c1[i] = c1;
    dc.c2[i] = safety * std::max(sup_c2, 0.0);
    dc.c2p[i] = safety * need;
    if (!(dc.c2p[i] > 0.0)) dc.c2p[i] = 1e-6;
    for (int j = 0; j < N; ++j) {
      if (j != i) dc.coupling(i, j) = p.varpi;
    }
    dc.audit.push_back({"c1" + tag, rate, dc.c1[i], 0.0});
    dc.audit.push_back({"c2" + tag, sup_c2, dc.c2[i], 0.0});
    dc.audit.push_back({"c2p.row1" + tag, sup_row1, dc.c2p[i], 0.0});
    dc.audit.push_back({"c2p.row2" + tag, sup_row2 + coupling_share, dc.c2p[i], 0.0});
  }

  // Re-validate both rows of the vector dissipation inequality on fresh full-state samples.
  BallSampler full(static_cast<std::size_t>(3 * N), seed * 7 + 123457);
  std::vector<double> worst_row1(N, -std::numeric_limits<double>::infinity());
  std::vector<double> worst_row2(N, -std::numeric_limits<double>::infinity());
  std::vector<double> worst_c2(N, -std::numeric_limits<double>::infinity());
  for (std::size_t s = 0; s < sample_count; ++s) {
    const Vec x = full.next(p.rho);
    for (int i = 0; i < N; ++i) {
      const Eigen::Vector3d xi = x.segment<3>(3 * i);
      double coupled = 0.0, others = 0.0;
      for (int j = 0; j < N; ++j) {
        if (j == i) continue;
        coupled += x[3 * j + 1];
        others += dc.coupling(i, j) * 0.5 * x[3 * j + 1] * x[3 * j + 1];
      }
      const double v1 = storage1(xi), v2 = storage2(xi), y = xi[1];
      const double row1 = storage1_rate(p, xi) - (-dc.c1[i] * v1 + dc.c2p[i] * v2);
      const double row2 = storage2_local_rate(p, xi) + p.varpi * y * coupled -
                          (0.5 * dc.c1[i] * v1 + dc.c2p[i] * v2 + others);
      const double c2row = storage1_rate(p, xi) -
                           (-dc.c1[i] * v1 + dc.c2[i] * (y * y + y * y * y * y));
      worst_row1[i] = std::max(worst_row1[i], row1);
      worst_row2[i] = std::max(worst_row2[i], row2);
      worst_c2[i] = std::max(worst_c2[i], c2row);
      if (row1 > 1e-12 || row2 > 1e-12 || c2row > 1e-12) {
        throw InfeasibleConstants("derive_constants: validation failed for subsystem " +
                                      std::to_string(i + 1) + " at rho=" + std::to_string(p.rho),
                                  x);
      }
    }
  }
  for (int i = 0; i < N; ++i) {
    dc.audit[4 * i + 0].validated_worst_slack = worst_row1[i];
    dc.audit[4 * i + 1].validated_worst_slack = worst_c2[i];
    dc.audit[4 * i + 2].validated_worst_slack = worst_row1[i];
    dc.audit[4 * i + 3].validated_worst_slack = worst_row2[i];
  }
  return dc;
}

}  // namespace cvlf::lorenz
