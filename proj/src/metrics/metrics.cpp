#include "multitab/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "multitab/numkit/error.hpp"

namespace multitab::metrics {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw ContractError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " + std::to_string(b));
}

double mean_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

}  // namespace

double auc_binary(std::span<const double> scores, std::span<const double> labels) {
  require_same_length(scores.size(), labels.size(), "auc_binary");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] > 0.5) {
        rank_sum += midrank;
        pos += 1.0;
      }
    i = j;
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw UndefinedMetricError("auc: labels contain a single class");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double auc_multiclass(const num::Tensor& scores, std::span<const double> labels) {
  if (scores.rank() != 2) throw DimensionError("auc_multiclass: scores must be [n x k]");
  require_same_length(scores.dim(0), labels.size(), "auc_multiclass");
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  std::set<std::size_t> present;
  for (double l : labels) present.insert(static_cast<std::size_t>(l));
  if (present.size() < 2) throw UndefinedMetricError("auc_multiclass: fewer than two classes present");

  std::vector<double> col(n), is_c(n);
  double total = 0.0;
  for (std::size_t c : present) {
    if (c >= k) throw ContractError("auc_multiclass: label " + std::to_string(c) + " exceeds score width");
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = scores.at(i, c);
      is_c[i] = static_cast<std::size_t>(labels[i]) == c ? 1.0 : 0.0;
    }
    total += auc_binary(col, is_c);
  }
  return total / static_cast<double>(present.size());
}

double explained_variance(std::span<const double> pred, std::span<const double> target) {
  require_same_length(pred.size(), target.size(), "explained_variance");
  if (target.size() < 2) throw ContractError("explained_variance: need at least two samples");
  const double mt = mean_of(target);
  double mr = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) mr += target[i] - pred[i];
  mr /= static_cast<double>(target.size());
  double vt = 0.0, vr = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    vt += (target[i] - mt) * (target[i] - mt);
    const double r = target[i] - pred[i] - mr;
    vr += r * r;
  }
  if (vt == 0.0) throw UndefinedMetricError("explained_variance: target has zero variance");
  return 1.0 - vr / vt;
}

double mse(std::span<const double> pred, std::span<const double> target) {
  require_same_length(pred.size(), target.size(), "mse");
  if (pred.empty()) throw ContractError("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

double pearson(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "pearson");
  if (a.size() < 2) throw ContractError("pearson: need at least two samples");
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedMetricError("pearson: zero variance input");
  const double r = sab / std::sqrt(saa * sbb);
  return std::clamp(r, -1.0, 1.0);
}

MultitaskGain multitask_gain(const std::vector<TaskResult>& method, const std::vector<TaskResult>& baseline) {
  if (method.size() != baseline.size() || method.empty())
    throw ContractError("multitask_gain: " + std::to_string(method.size()) + " method tasks vs " +
                        std::to_string(baseline.size()) + " baseline tasks");
  MultitaskGain gain;
  double total = 0.0;
  for (std::size_t i = 0; i < method.size(); ++i) {
    const auto& m = method[i];
    const auto& b = baseline[i];
    if (m.task != b.task || m.metric != b.metric || m.lower_is_better != b.lower_is_better)
      throw ContractError("multitask_gain: task " + std::to_string(i) + " differs ('" + m.task + "' vs '" + b.task +
                          "')");
    if (b.value == 0.0) throw ContractError("multitask_gain: division by zero, baseline value for task '" + b.task + "' is 0");
    const double sign = b.lower_is_better ? -1.0 : 1.0;
    const double delta = sign * (m.value - b.value) / b.value * 100.0;
    gain.per_task_deltas.push_back(delta);
    total += delta;
  }
  gain.delta_m = total / static_cast<double>(method.size());
  return gain;
}

}  // namespace multitab::metrics
