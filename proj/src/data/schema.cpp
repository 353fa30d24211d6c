#include "multitab/data/schema.hpp"

#include "multitab/numkit/error.hpp"

namespace multitab::data {

std::size_t FeatureSchema::numeric_count() const {
  std::size_t n = 0;
  for (const auto& c : columns) n += c.kind == FeatureKind::Numeric;
  return n;
}

std::size_t FeatureSchema::categorical_count() const { return size() - numeric_count(); }

void FeatureSchema::validate() const {
  for (const auto& c : columns)
    if (c.kind == FeatureKind::Categorical && c.cardinality < 2)
      throw SchemaError("categorical column '" + c.name + "' needs cardinality >= 2");
}

FeatureSchema FeatureSchema::all_numeric(std::size_t d, const std::string& prefix) {
  FeatureSchema s;
  for (std::size_t j = 0; j < d; ++j) s.columns.push_back({prefix + std::to_string(j), FeatureKind::Numeric, 0});
  return s;
}

TaskSpec TaskSpec::binary(std::string name) { return {std::move(name), TaskKind::Binary, 2, MetricKind::Auc}; }

TaskSpec TaskSpec::multiclass(std::string name, std::size_t k) {
  return {std::move(name), TaskKind::Multiclass, k, MetricKind::Auc};
}

TaskSpec TaskSpec::regression(std::string name, MetricKind metric) {
  return {std::move(name), TaskKind::Regression, 0, metric};
}

std::size_t TaskSpec::output_dim() const { return kind == TaskKind::Multiclass ? classes : 1; }

void TaskSpec::validate() const {
  if (kind == TaskKind::Multiclass && classes < 2) throw SchemaError("task '" + name + "': multiclass needs k >= 2");
  if (kind != TaskKind::Regression && metric != MetricKind::Auc)
    throw SchemaError("task '" + name + "': classification tasks are scored by AUC");
  if (kind == TaskKind::Regression && metric == MetricKind::Auc)
    throw SchemaError("task '" + name + "': regression tasks cannot be scored by AUC");
}

std::string to_string(FeatureKind k) { return k == FeatureKind::Numeric ? "numeric" : "categorical"; }

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Binary: return "binary";
    case TaskKind::Multiclass: return "multiclass";
    case TaskKind::Regression: return "regression";
  }
  return "?";
}

std::string to_string(MetricKind k) {
  switch (k) {
    case MetricKind::Auc: return "auc";
    case MetricKind::ExplainedVariance: return "ev";
    case MetricKind::Mse: return "mse";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "binary") return TaskKind::Binary;
  if (s == "multiclass") return TaskKind::Multiclass;
  if (s == "regression") return TaskKind::Regression;
  throw SchemaError("unknown task kind '" + s + "'");
}

MetricKind metric_kind_from_string(const std::string& s) {
  if (s == "auc") return MetricKind::Auc;
  if (s == "ev") return MetricKind::ExplainedVariance;
  if (s == "mse") return MetricKind::Mse;
  throw SchemaError("unknown metric '" + s + "'");
}

void to_json(nlohmann::json& j, const FeatureColumn& c) {
  j = {{"name", c.name}, {"kind", to_string(c.kind)}};
  if (c.kind == FeatureKind::Categorical) j["cardinality"] = c.cardinality;
}

void from_json(const nlohmann::json& j, FeatureColumn& c) {
  c.name = j.at("name").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "numeric") {
    c.kind = FeatureKind::Numeric;
    c.cardinality = 0;
  } else if (kind == "categorical") {
    c.kind = FeatureKind::Categorical;
    c.cardinality = j.at("cardinality").get<std::size_t>();
  } else {
    throw SchemaError("unknown feature kind '" + kind + "'");
  }
}

void to_json(nlohmann::json& j, const FeatureSchema& s) { j = s.columns; }
void from_json(const nlohmann::json& j, FeatureSchema& s) { s.columns = j.get<std::vector<FeatureColumn>>(); }

void to_json(nlohmann::json& j, const TaskSpec& t) {
  j = {{"name", t.name}, {"kind", to_string(t.kind)}, {"metric", to_string(t.metric)}};
  if (t.kind == TaskKind::Multiclass) j["classes"] = t.classes;
}

void from_json(const nlohmann::json& j, TaskSpec& t) {
  t.name = j.at("name").get<std::string>();
  t.kind = task_kind_from_string(j.at("kind").get<std::string>());
  t.classes = t.kind == TaskKind::Multiclass ? j.at("classes").get<std::size_t>() : (t.kind == TaskKind::Binary ? 2 : 0);
  if (j.contains("metric")) {
    t.metric = metric_kind_from_string(j.at("metric").get<std::string>());
  } else {
    t.metric = t.kind == TaskKind::Regression ? MetricKind::ExplainedVariance : MetricKind::Auc;
  }
}

}  // namespace multitab::data
