#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include <boost/math/special_functions/erf.hpp>
#include <boost/random/sobol.hpp>

#include "cvlf/common.hpp"

namespace cvlf {

/// Deterministic low-discrepancy points in the unit cube, backed by a Sobol sequence.
/// The seed selects the starting index of the sequence, so equal seeds give equal streams.
class QuasiRandom {
 public:
  QuasiRandom(std::size_t dim, std::uint64_t seed) : dim_(dim), engine_(dim) {
    if (dim == 0) throw ConfigError("QuasiRandom: dimension must be positive");
    // Skip the all-zero first point.
    engine_.seed(seed + 1);
  }

  std::size_t dim() const { return dim_; }

  /// Next point in the open unit cube (coordinates clamped away from 0 and 1).
  Vec next() {
    Vec p(static_cast<Eigen::Index>(dim_));
    const double scale = 1.0 / (static_cast<double>(engine_.max()) + 1.0);
    for (std::size_t i = 0; i < dim_; ++i) {
      const double u = static_cast<double>(engine_()) * scale;
      p[static_cast<Eigen::Index>(i)] = std::clamp(u, 1e-12, 1.0 - 1e-12);
    }
    return p;
  }

 private:
  std::size_t dim_;
  boost::random::sobol engine_;
};

/// Uniform points in a Euclidean ball of given dimension. Directions come from Gaussian
/// coordinates (inverse normal CDF), the radius from u^(1/d).
class BallSampler {
 public:
  BallSampler(std::size_t dim, std::uint64_t seed) : dim_(dim), cube_(dim + 1, seed) {}

  Vec next(double radius) {
    const Vec u = cube_.next();
    if (dim_ == 0) return Vec(0);
    Vec g(static_cast<Eigen::Index>(dim_));
    for (std::size_t i = 0; i < dim_; ++i) {
      g[static_cast<Eigen::Index>(i)] =
          std::sqrt(2.0) * boost::math::erf_inv(2.0 * u[static_cast<Eigen::Index>(i)] - 1.0);
    }
    const double norm = g.norm();
    if (norm == 0.0) return Vec::Zero(static_cast<Eigen::Index>(dim_));
    const double r =
        radius * std::pow(u[static_cast<Eigen::Index>(dim_)], 1.0 / static_cast<double>(dim_));
    return g * (r / norm);
  }

  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_;
  QuasiRandom cube_;
};

}  // namespace cvlf
