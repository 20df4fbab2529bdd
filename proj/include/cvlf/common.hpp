#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace cvlf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised when a vector or matrix does not have the dimension an operation needs.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad user configuration: unknown scenario, unknown parameter, non-positive radius...
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class EigenSolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure while integrating an ODE (divergence, negativity, step underflow).
class IntegrationFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

inline void require_square(const Mat& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw DimensionError(std::string(what) + ": matrix is " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + ", expected square");
  }
}

}  // namespace detail
}  // namespace cvlf
