#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvlf/common.hpp"

namespace cvlf {

/// Sample at which a check was worst.
struct Witness {
  Vec state;
  Vec output;
  Vec control;
  std::optional<double> time;
  std::optional<std::size_t> index;
};

/// Outcome of a sampled or trajectory-based inequality check.
///
/// `worst_violation` is the largest observed lhs - rhs. The check passes iff it does not
/// exceed `threshold`; strict inequalities use a negative threshold (-tolerance), non-strict
/// ones a nonnegative slack.
struct CheckReport {
  std::string name;
  bool passed = true;
  double worst_violation = -std::numeric_limits<double>::infinity();
  double threshold = 0.0;
  Witness witness;
  std::size_t samples = 0;
  std::vector<std::string> notes;

  /// Records a candidate violation; keeps the worst one and its witness.
  void observe(double violation, const Witness& w) {
    ++samples;
    if (violation > worst_violation || samples == 1) {
      worst_violation = violation;
      witness = w;
    }
  }

  /// Sets `passed` from the accumulated worst violation.
  CheckReport& finalize() {
    passed = worst_violation <= threshold;
    return *this;
  }
};

namespace detail {

inline nlohmann::json to_json_array(const Vec& v) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Vec vec_from_json(const nlohmann::json& j) {
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

inline nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

}  // namespace detail

inline nlohmann::json to_json(const CheckReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["passed"] = r.passed;
  j["worst_violation"] = detail::finite_or_null(r.worst_violation);
  j["threshold"] = r.threshold;
  j["witness_state"] = detail::to_json_array(r.witness.state);
  j["witness_output"] = detail::to_json_array(r.witness.output);
  j["witness_control"] = detail::to_json_array(r.witness.control);
  if (r.witness.time) j["witness_time"] = *r.witness.time;
  if (r.witness.index) j["witness_index"] = *r.witness.index;
  j["samples"] = r.samples;
  j["notes"] = r.notes;
  return j;
}

}  // namespace cvlf
