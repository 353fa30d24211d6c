#pragma once

#include <functional>
#include <map>
#include <string>

#include "multitab/numkit/tape.hpp"

namespace multitab::num {

struct GradCheckOptions {
  double step = 1e-5;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  // The floor keeps round-off on exactly-zero gradients from reading as error.
  double floor = 1e-6;
  // Hook applied to the analytic gradients before comparison.
  std::function<void(GradMap&)> corrupt;
};

struct GroupError {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
};

struct GradCheckReport {
  std::map<std::string, GroupError> groups;
  std::string worst_group;
  double max_rel_error = 0.0;
};

/// Builds a fresh tape per evaluation. `loss_fn` must be a pure function of
/// the parameter values it is handed.
using LossFn = std::function<Var(Tape&, const ParamStore&)>;

/// Central finite differences against reverse-mode gradients for every
/// entry of every parameter in `params`.
GradCheckReport check_gradients(const LossFn& loss_fn, const ParamStore& params, const GradCheckOptions& opts = {});

}  // namespace multitab::num
