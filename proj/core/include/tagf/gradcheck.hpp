// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tagf/error.hpp"
#include "tagf/tensor.hpp"

namespace tagf {

/// A scalar objective evaluated on a fresh tape against bound parameters.
using Objective = std::function<Tensor(Tape&, const BoundParameters&)>;

class DeterminismError : public ContractError {
 public:
  using ContractError::ContractError;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> parameters;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t entries_checked = 0;
};

/// Central-difference check of every entry of every parameter:
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Throws DeterminismError when two evaluations at the unperturbed point
/// differ, and ContractError when epsilon lies outside [1e-8, 1e-4].
GradCheckReport finite_diff_check(const Objective& f,
                                  const ParameterStore& params,
                                  double epsilon);

/// Worst relative error per parameter group, where the group is the name up
/// to its `depth`-th dot ("gate.v.fwd.Wx" -> "gate.v" for depth 2).
std::map<std::string, double> group_worst(const GradCheckReport& report,
                                          int depth = 2);

}  // namespace tagf
