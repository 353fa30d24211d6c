#pragma once

#include <span>
#include <string>
#include <vector>

#include "multitab/data/schema.hpp"
#include "multitab/numkit/tensor.hpp"

namespace multitab::metrics {

using data::MetricKind;

struct TaskResult {
  std::string task;
  MetricKind metric = MetricKind::Auc;
  double value = 0.0;  // raw fraction, not percent
  bool lower_is_better = false;
};

struct MultitaskGain {
  double delta_m = 0.0;                 // percent
  std::vector<double> per_task_deltas;  // percent
};

/// Mann-Whitney AUC with midranks; ties count one half.
/// Throws UndefinedMetricError unless both classes are present.
double auc_binary(std::span<const double> scores, std::span<const double> labels);

/// Macro one-vs-rest AUC over the classes present in `labels`.
/// `scores` is [n x k]; labels hold class indices.
double auc_multiclass(const num::Tensor& scores, std::span<const double> labels);

/// 1 - Var(target - pred) / Var(target), population variances.
double explained_variance(std::span<const double> pred, std::span<const double> target);

double mse(std::span<const double> pred, std::span<const double> target);

double pearson(std::span<const double> a, std::span<const double> b);

/// Multitask gain in percent: mean over tasks of
/// (-1)^lower_is_better * (method - baseline) / baseline * 100.
MultitaskGain multitask_gain(const std::vector<TaskResult>& method, const std::vector<TaskResult>& baseline);

}  // namespace multitab::metrics
