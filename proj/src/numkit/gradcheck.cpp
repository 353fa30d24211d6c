#include "multitab/numkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "multitab/numkit/error.hpp"

namespace multitab::num {

GradCheckReport check_gradients(const LossFn& loss_fn, const ParamStore& params, const GradCheckOptions& opts) {
  GradMap analytic;
  {
    Tape tape;
    Var loss = loss_fn(tape, params);
    analytic = tape.backward(loss);
  }
  if (opts.corrupt) opts.corrupt(analytic);

  auto eval = [&](const ParamStore& p) {
    Tape tape;
    return loss_fn(tape, p).value().item();
  };

  GradCheckReport report;
  ParamStore probe = params;
  for (auto& [name, value] : probe) {
    GroupError err;
    const auto it = analytic.find(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      value[i] = orig + opts.step;
      const double up = eval(probe);
      value[i] = orig - opts.step;
      const double down = eval(probe);
      value[i] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opts.floor});
      err.max_abs_error = std::max(err.max_abs_error, abs_err);
      err.max_rel_error = std::max(err.max_rel_error, rel);
      ++err.entries;
    }
    if (report.worst_group.empty() || err.max_rel_error > report.max_rel_error) {
      report.max_rel_error = err.max_rel_error;
      report.worst_group = name;
    }
    report.groups.emplace(name, err);
  }
  return report;
}

}  // namespace multitab::num
