#pragma once

#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cvlf/common.hpp"

namespace cvlf {

/// Dimensions of each subsystem's state, input and output, and the offsets of their
/// blocks inside the stacked vectors x, u, y.
class StatePartition {
 public:
  StatePartition() = default;

  StatePartition(std::vector<int> state_dims, std::vector<int> input_dims,
                 std::vector<int> output_dims)
      : state_dims_(std::move(state_dims)),
        input_dims_(std::move(input_dims)),
        output_dims_(std::move(output_dims)) {
    if (state_dims_.empty()) throw ConfigError("StatePartition: no subsystems");
    if (input_dims_.size() != state_dims_.size() || output_dims_.size() != state_dims_.size()) {
      throw ConfigError("StatePartition: per-subsystem dimension lists differ in length");
    }
    for (std::size_t i = 0; i < state_dims_.size(); ++i) {
      if (state_dims_[i] < 1) throw ConfigError("StatePartition: state dimension must be >= 1");
      if (input_dims_[i] < 0) throw ConfigError("StatePartition: input dimension must be >= 0");
      if (output_dims_[i] < 1) throw ConfigError("StatePartition: output dimension must be >= 1");
    }
    state_offsets_ = offsets(state_dims_);
    input_offsets_ = offsets(input_dims_);
    output_offsets_ = offsets(output_dims_);
  }

  std::size_t subsystems() const { return state_dims_.size(); }
  int n() const { return total(state_dims_); }
  int m() const { return total(input_dims_); }
  int l() const { return total(output_dims_); }

  int state_dim(std::size_t i) const { return state_dims_.at(i); }
  int input_dim(std::size_t i) const { return input_dims_.at(i); }
  int output_dim(std::size_t i) const { return output_dims_.at(i); }
  int state_offset(std::size_t i) const { return state_offsets_.at(i); }
  int input_offset(std::size_t i) const { return input_offsets_.at(i); }
  int output_offset(std::size_t i) const { return output_offsets_.at(i); }

  const std::vector<int>& state_dims() const { return state_dims_; }
  const std::vector<int>& input_dims() const { return input_dims_; }
  const std::vector<int>& output_dims() const { return output_dims_; }

  Vec state_block(const Vec& x, std::size_t i) const {
    return x.segment(state_offset(i), state_dim(i));
  }
  Vec input_block(const Vec& u, std::size_t i) const {
    return u.segment(input_offset(i), input_dim(i));
  }
  Vec output_block(const Vec& y, std::size_t i) const {
    return y.segment(output_offset(i), output_dim(i));
  }

 private:
  static int total(const std::vector<int>& dims) {
    return std::accumulate(dims.begin(), dims.end(), 0);
  }
  static std::vector<int> offsets(const std::vector<int>& dims) {
    std::vector<int> out(dims.size(), 0);
    for (std::size_t i = 1; i < dims.size(); ++i) out[i] = out[i - 1] + dims[i - 1];
    return out;
  }

  std::vector<int> state_dims_;
  std::vector<int> input_dims_;
  std::vector<int> output_dims_;
  std::vector<int> state_offsets_;
  std::vector<int> input_offsets_;
  std::vector<int> output_offsets_;
};

/// Interconnected control-affine plant  x' = f(x) + g(x) u,  y_i = h_i(x_i),
/// considered on the ball S_rho = { |x| <= rho }.
struct CompositeSystem {
  StatePartition partition;
  /// f(x), full n-vector. Block i may depend on the whole state.
  std::function<Vec(const Vec& x)> drift;
  /// g_i(x), an n_i x m_i matrix. Only called for subsystems with m_i > 0.
  std::function<Mat(const Vec& x, std::size_t i)> input_block;
  /// h_i(x_i).
  std::function<Vec(const Vec& x_i, std::size_t i)> output_block;
  double domain_radius = 1.0;
  /// When every h_i selects coordinates of x_i, their local indices. Enables exact
  /// sampling of output fibers.
  std::optional<std::vector<std::vector<int>>> output_coordinates;
};

/// f(x) + g(x) u assembled from the subsystem blocks.
inline Vec eval_dynamics(const CompositeSystem& sys, const Vec& x, const Vec& u) {
  const auto& p = sys.partition;
  detail::require_dim(x.size(), p.n(), "eval_dynamics state");
  detail::require_dim(u.size(), p.m(), "eval_dynamics input");
  Vec dx = sys.drift(x);
  detail::require_dim(dx.size(), p.n(), "eval_dynamics drift");
  for (std::size_t i = 0; i < p.subsystems(); ++i) {
    if (p.input_dim(i) == 0) continue;
    const Mat g = sys.input_block(x, i);
    if (g.rows() != p.state_dim(i) || g.cols() != p.input_dim(i)) {
      throw DimensionError("eval_dynamics: input block " + std::to_string(i) + " has wrong shape");
    }
    dx.segment(p.state_offset(i), p.state_dim(i)) += g * p.input_block(u, i);
  }
  return dx;
}

inline Vec eval_subsystem_output(const CompositeSystem& sys, const Vec& x, std::size_t i) {
  Vec yi = sys.output_block(sys.partition.state_block(x, i), i);
  detail::require_dim(yi.size(), sys.partition.output_dim(i), "output block");
  return yi;
}

/// Concatenation of h_i(x_i).
inline Vec eval_output(const CompositeSystem& sys, const Vec& x) {
  const auto& p = sys.partition;
  detail::require_dim(x.size(), p.n(), "eval_output state");
  Vec y(p.l());
  for (std::size_t i = 0; i < p.subsystems(); ++i) {
    y.segment(p.output_offset(i), p.output_dim(i)) = eval_subsystem_output(sys, x, i);
  }
  return y;
}

}  // namespace cvlf
