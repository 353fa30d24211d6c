#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

namespace multitab::data {

enum class FeatureKind { Numeric, Categorical };

struct FeatureColumn {
  std::string name;
  FeatureKind kind = FeatureKind::Numeric;
  std::size_t cardinality = 0;  // categorical only; codes are 0..cardinality-1

  friend bool operator==(const FeatureColumn&, const FeatureColumn&) = default;
};

struct FeatureSchema {
  std::vector<FeatureColumn> columns;

  std::size_t size() const { return columns.size(); }
  std::size_t numeric_count() const;
  std::size_t categorical_count() const;
  /// Throws SchemaError when a categorical column has cardinality < 2.
  void validate() const;

  static FeatureSchema all_numeric(std::size_t d, const std::string& prefix = "x");
  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

enum class TaskKind { Binary, Multiclass, Regression };
enum class MetricKind { Auc, ExplainedVariance, Mse };

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::Regression;
  std::size_t classes = 2;  // multiclass only
  MetricKind metric = MetricKind::ExplainedVariance;

  static TaskSpec binary(std::string name);
  static TaskSpec multiclass(std::string name, std::size_t k);
  static TaskSpec regression(std::string name, MetricKind metric = MetricKind::ExplainedVariance);

  /// Width of the prediction head: 1 for binary/regression, k for multiclass.
  std::size_t output_dim() const;
  bool lower_is_better() const { return metric == MetricKind::Mse; }
  void validate() const;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

std::string to_string(FeatureKind k);
std::string to_string(TaskKind k);
std::string to_string(MetricKind k);
TaskKind task_kind_from_string(const std::string& s);
MetricKind metric_kind_from_string(const std::string& s);

void to_json(nlohmann::json& j, const FeatureColumn& c);
void from_json(const nlohmann::json& j, FeatureColumn& c);
void to_json(nlohmann::json& j, const FeatureSchema& s);
void from_json(const nlohmann::json& j, FeatureSchema& s);
void to_json(nlohmann::json& j, const TaskSpec& t);
void from_json(const nlohmann::json& j, TaskSpec& t);

}  // namespace multitab::data
