#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Eigenvalues>

#include "cvlf/common.hpp"
#include "cvlf/ode.hpp"
#include "cvlf/report.hpp"
#include "cvlf/sampling.hpp"

namespace cvlf {

/// Extended-precision vector used for comparison-system states. Comparison flows of
/// non-Hurwitz maps grow like exp(lambda t) and leave the double range quickly.
using WideVec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
using WideMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

/// Linear comparison map z' = M z with M Metzler.
struct LinearMetzler {
  Mat matrix;
};

/// General quasimonotone comparison map z' = map(z).
struct GeneralComparison {
  std::function<Vec(const Vec&)> map;
  double lipschitz = 1.0;
  std::size_t dimension = 0;
};

/// The map Lambda of the comparison system z' = Lambda(z).
class ComparisonMap {
 public:
  ComparisonMap() = default;
  explicit ComparisonMap(LinearMetzler m) : impl_(std::move(m)) {
    detail::require_square(std::get<LinearMetzler>(impl_).matrix, "ComparisonMap");
  }
  explicit ComparisonMap(GeneralComparison g) : impl_(std::move(g)) {
    if (std::get<GeneralComparison>(impl_).lipschitz <= 0.0) {
      throw ConfigError("ComparisonMap: Lipschitz bound must be positive");
    }
  }

  bool is_linear() const { return std::holds_alternative<LinearMetzler>(impl_); }

  const Mat& matrix() const { return std::get<LinearMetzler>(impl_).matrix; }
  const GeneralComparison& general() const { return std::get<GeneralComparison>(impl_); }

  std::size_t dim() const {
    if (is_linear()) return static_cast<std::size_t>(matrix().rows());
    return general().dimension;
  }

  Vec apply(const Vec& z) const {
    detail::require_dim(z.size(), static_cast<Eigen::Index>(dim()), "ComparisonMap::apply");
    if (is_linear()) return matrix() * z;
    Vec out = general().map(z);
    detail::require_dim(out.size(), z.size(), "ComparisonMap::apply result");
    return out;
  }

  WideVec apply(const WideVec& z) const {
    if (is_linear()) return matrix().cast<long double>() * z;
    return apply(Vec(z.cast<double>())).cast<long double>();
  }

 private:
  std::variant<LinearMetzler, GeneralComparison> impl_;
};

/// True iff every off-diagonal entry is nonnegative.
inline bool is_metzler(const Mat& m) {
  detail::require_square(m, "is_metzler");
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      if (r != c && m(r, c) < 0.0) return false;
  return true;
}

/// Largest real part over the eigenvalues of m.
inline double spectral_abscissa(const Mat& m) {
  detail::require_square(m, "spectral_abscissa");
  if (m.size() == 0) return -std::numeric_limits<double>::infinity();
  Eigen::EigenSolver<Mat> solver(m, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) {
    throw EigenSolverError("spectral_abscissa: eigenvalue iteration did not converge");
  }
  return solver.eigenvalues().real().maxCoeff();
}

/// True iff every eigenvalue satisfies Re(lambda) < -margin.
inline bool is_hurwitz(const Mat& m, double margin = 1e-9) {
  if (margin <= 0.0) throw ConfigError("is_hurwitz: margin must be positive");
  return spectral_abscissa(m) < -margin;
}

/// Leading principal minors det(m[0:k, 0:k]), k = 1..n, from partial-pivot LU.
inline std::vector<double> leading_principal_minors(const Mat& m) {
  detail::require_square(m, "leading_principal_minors");
  std::vector<double> minors;
  for (Eigen::Index k = 1; k <= m.rows(); ++k) {
    minors.push_back(Eigen::PartialPivLU<Mat>(m.topLeftCorner(k, k)).determinant());
  }
  return minors;
}

/// True iff -m is a nonsingular M-matrix: m Metzler and every leading principal minor of
/// -m exceeds `minor_threshold`.
inline bool is_m_matrix_negation(const Mat& m, double minor_threshold = 1e-12) {
  detail::require_square(m, "is_m_matrix_negation");
  if (!is_metzler(m)) return false;
  for (double minor : leading_principal_minors(-m)) {
    if (!(minor > minor_threshold)) return false;
  }
  return true;
}

/// Block comparison matrix for the Lorenz network with vector storage (V_i1, V_i2):
/// diagonal blocks [[-c1_i, c2p_i], [c1_i/2, -2 k_i + c2p_i]], and coupling weight
/// coupling(i, j) in the (V_i2, V_j2) entry for j != i. The diagonal of `coupling` is ignored.
inline Mat example2_lambda(const Vec& c1, const Vec& c2p, const Vec& k, const Mat& coupling) {
  const Eigen::Index n = c1.size();
  detail::require_dim(c2p.size(), n, "example2_lambda c2p");
  detail::require_dim(k.size(), n, "example2_lambda k");
  if (coupling.rows() != n || coupling.cols() != n) {
    throw DimensionError("example2_lambda: coupling must be N x N");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(c1[i] > 0.0) || !(c2p[i] > 0.0) || !(k[i] >= 0.0)) {
      throw ConfigError("example2_lambda: c1 and c2p must be positive, k nonnegative");
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j && coupling(i, j) < 0.0) {
        throw ConfigError("example2_lambda: couplings must be nonnegative");
      }
    }
  }
  Mat lambda = Mat::Zero(2 * n, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    lambda(2 * i, 2 * i) = -c1[i];
    lambda(2 * i, 2 * i + 1) = c2p[i];
    lambda(2 * i + 1, 2 * i) = c1[i] / 2.0;
    lambda(2 * i + 1, 2 * i + 1) = -2.0 * k[i] + c2p[i];
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) lambda(2 * i + 1, 2 * j + 1) = coupling(i, j);
    }
  }
  return lambda;
}

/// Sampled falsifier for quasimonotonicity: for pairs z' <= z'' that agree in coordinate
/// i, Lambda_i(z') <= Lambda_i(z'') must hold. Also checks Lambda(0) = 0.
inline CheckReport check_quasimonotone(const ComparisonMap& map, double box, std::size_t samples,
                                       std::uint64_t seed, double tol = 1e-12) {
  CheckReport report;
  report.name = "quasimonotone";
  report.threshold = tol;
  const auto n = static_cast<Eigen::Index>(map.dim());
  const Vec at_zero = map.apply(Vec(Vec::Zero(n)));
  report.observe(at_zero.cwiseAbs().maxCoeff(), Witness{Vec::Zero(n), Vec(), Vec(), {}, {}});
  QuasiRandom qr(static_cast<std::size_t>(2 * n), seed);
  for (std::size_t s = 0; s < samples; ++s) {
    const Vec u = qr.next();
    const Vec lo = box * u.head(n);
    const Vec hi = lo + box * u.tail(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      Vec hi_i = hi;
      hi_i[i] = lo[i];
      const double v = map.apply(lo)[i] - map.apply(hi_i)[i];
      report.observe(v, Witness{lo, hi_i, Vec(), {}, {static_cast<std::size_t>(i)}});
    }
  }
  return report.finalize();
}

/// Sampled solution of z' = Lambda(z) on a uniform grid.
struct ComparisonTrajectory {
  std::vector<double> times;
  std::vector<WideVec> states;
};

/// Integrates z' = Lambda(z) with fixed-step RK4 in extended precision.
///
/// Negative overshoots smaller than 1e-12 are clipped to zero; anything more negative, or
/// a non-finite state, raises IntegrationFault.
inline ComparisonTrajectory simulate_comparison(const ComparisonMap& map, const Vec& z0, double T,
                                                double dt) {
  detail::require_dim(z0.size(), static_cast<Eigen::Index>(map.dim()), "simulate_comparison z0");
  if (!(T > 0.0) || !(dt > 0.0)) throw ConfigError("simulate_comparison: T and dt must be positive");
  if ((z0.array() < 0.0).any()) throw ConfigError("simulate_comparison: z0 must be nonnegative");

  const auto steps = static_cast<std::size_t>(std::llround(T / dt));
  ComparisonTrajectory traj;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);

  const auto rhs = [&map](long double, const WideVec& z) { return map.apply(z); };
  WideVec z = z0.cast<long double>();
  traj.times.push_back(0.0);
  traj.states.push_back(z);
  for (std::size_t k = 1; k <= steps; ++k) {
    z = ode::rk4_step(rhs, static_cast<long double>(k - 1) * dt, z, static_cast<long double>(dt));
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      if (!std::isfinite(z[i])) {
        throw IntegrationFault("comparison state is not finite at t=" +
                               std::to_string(static_cast<double>(k) * dt));
      }
      if (z[i] < 0.0L) {
        if (z[i] < -1e-12L) {
          throw IntegrationFault("comparison state became negative at t=" +
                                 std::to_string(static_cast<double>(k) * dt));
        }
        z[i] = 0.0L;
      }
    }
    traj.times.push_back(static_cast<double>(k) * dt);
    traj.states.push_back(z);
  }
  return traj;
}

/// Tests the comparison-principle conclusion V_i(x(t_k)) <= z_i(t_k) + tol.
///
/// If the grids differ, z is linearly interpolated onto the V times; V times outside the
/// comparison horizon (beyond `grid_tol`) are an error.
inline CheckReport check_domination(const std::vector<double>& times, const std::vector<Vec>& v,
                                    const ComparisonTrajectory& z, double tol,
                                    double grid_tol = 1e-9) {
  if (times.size() != v.size()) throw DimensionError("check_domination: times/values length differ");
  if (z.times.empty()) throw ConfigError("check_domination: empty comparison trajectory");
  CheckReport report;
  report.name = "domination";
  report.threshold = tol;

  const bool same_grid =
      times.size() == z.times.size() &&
      std::equal(times.begin(), times.end(), z.times.begin(),
                 [grid_tol](double a, double b) { return std::abs(a - b) <= grid_tol; });
  if (!same_grid) report.notes.push_back("comparison trajectory resampled onto the V grid");

  std::size_t cursor = 0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    WideVec zk;
    if (same_grid) {
      zk = z.states[k];
    } else {
      const double t = times[k];
      if (t < z.times.front() - grid_tol || t > z.times.back() + grid_tol) {
        throw ConfigError("check_domination: time " + std::to_string(t) +
                          " outside the comparison horizon");
      }
      while (cursor + 1 < z.times.size() && z.times[cursor + 1] < t) ++cursor;
      if (cursor + 1 >= z.times.size()) {
        zk = z.states.back();
      } else {
        const double t0 = z.times[cursor], t1 = z.times[cursor + 1];
        const long double w = t1 > t0 ? std::clamp((t - t0) / (t1 - t0), 0.0, 1.0) : 0.0;
        zk = (1.0L - w) * z.states[cursor] + w * z.states[cursor + 1];
      }
    }
    detail::require_dim(zk.size(), v[k].size(), "check_domination state");
    for (Eigen::Index i = 0; i < zk.size(); ++i) {
      // Margin v - z in extended precision, saturated into the double range.
      const long double diff = static_cast<long double>(v[k][i]) - zk[i];
      const double margin = diff < -1e300L ? -1e300 : static_cast<double>(diff);
      Witness w{v[k], Vec(), Vec(), times[k], k};
      w.output = Vec::Constant(1, static_cast<double>(i));
      report.observe(margin, w);
    }
  }
  return report.finalize();
}

/// CSV export: columns t, z1..zN.
inline void write_comparison_csv(std::ostream& os, const ComparisonTrajectory& traj) {
  os << "t";
  const auto n = traj.states.empty() ? 0 : traj.states.front().size();
  for (Eigen::Index i = 0; i < n; ++i) os << ",z" << (i + 1);
  os << '\n';
  os.precision(17);
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    os << traj.times[k];
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << traj.states[k][i];
    os << '\n';
  }
}

}  // namespace cvlf
