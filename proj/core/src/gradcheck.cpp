// SPDX-License-Identifier: Apache-2.0
#include "tagf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tagf {

namespace {

double evaluate(const Objective& f, const ParameterStore& params) {
  Tape tape;
  const BoundParameters bound(tape, params);
  return f(tape, bound).item();
}

}  // namespace

GradCheckReport finite_diff_check(const Objective& f,
                                  const ParameterStore& params,
                                  double epsilon) {
  if (!(epsilon >= 1e-8 && epsilon <= 1e-4)) {
    std::ostringstream os;
    os << "finite_diff_check: epsilon " << epsilon
       << " outside [1e-8, 1e-4]";
    throw ContractError(os.str());
  }

  GradientMap analytic;
  double base = 0.0;
  {
    Tape tape;
    const BoundParameters bound(tape, params);
    const Tensor loss = f(tape, bound);
    base = loss.item();
    analytic = tape.backward(loss);
  }
  if (evaluate(f, params) != base) {
    throw DeterminismError(
        "finite_diff_check: objective is not deterministic");
  }

  GradCheckReport report;
  ParameterStore probe = params;
  for (auto& entry : probe.entries()) {
    GradCheckEntry result;
    result.name = entry.name;
    const auto& grad = analytic.at(entry.name);
    for (std::size_t i = 0; i < entry.values.size(); ++i) {
      const double original = entry.values[i];
      entry.values[i] = original + epsilon;
      const double plus = evaluate(f, probe);
      entry.values[i] = original - epsilon;
      const double minus = evaluate(f, probe);
      entry.values[i] = original;

      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double denom =
          std::max({std::abs(grad[i]), std::abs(numeric), 1e-8});
      const double rel = std::abs(grad[i] - numeric) / denom;
      if (i == 0 || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_index = i;
        result.analytic = grad[i];
        result.numeric = numeric;
      }
      ++report.entries_checked;
    }
    if (result.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = result.max_rel_error;
      report.worst_parameter = result.name;
    }
    report.parameters.push_back(std::move(result));
  }
  return report;
}

std::map<std::string, double> group_worst(const GradCheckReport& report,
                                          int depth) {
  std::map<std::string, double> groups;
  for (const auto& p : report.parameters) {
    std::size_t cut = 0;
    std::size_t pos = 0;
    for (int d = 0; d < depth; ++d) {
      pos = p.name.find('.', cut);
      if (pos == std::string::npos) break;
      cut = pos + 1;
    }
    const std::string key =
        pos == std::string::npos ? p.name : p.name.substr(0, pos);
    auto [it, inserted] = groups.emplace(key, p.max_rel_error);
    if (!inserted) it->second = std::max(it->second, p.max_rel_error);
  }
  return groups;
}

}  // namespace tagf
