#include "multitab/cli/cli.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>

#include "CLI11.hpp"
#include "multitab/numkit/error.hpp"

namespace multitab::cli {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const NonPsdError*>(&e) ||
      dynamic_cast<const InfeasibleError*>(&e))
    return kConfig;
  if (dynamic_cast<const NumericFailure*>(&e) || dynamic_cast<const DegenerateRowError*>(&e)) return kNumeric;
  return kOther;
}

json read_config(const fs::path& path, const std::string& expected) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path.string() + ": cannot open config");
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");
  if (!doc.contains("command") || !doc["command"].is_string())
    throw ConfigError(path.string() + ": /command: required string field is missing");
  if (!expected.empty() && doc["command"] != expected)
    throw ConfigError(path.string() + ": /command: config is for '" + doc["command"].get<std::string>() +
                      "', not '" + expected + "'");
  return doc;
}

std::vector<metrics::TaskResult> report_metrics(const json& report) {
  if (!report.contains("metrics") || !report["metrics"].is_array())
    throw FormatError("report has no metrics list");
  std::vector<metrics::TaskResult> out;
  for (const json& m : report["metrics"]) {
    metrics::TaskResult r;
    r.task = m.at("task").get<std::string>();
    r.metric = data::metric_kind_from_string(m.at("metric").get<std::string>());
    r.value = m.at("value").get<double>();
    r.lower_is_better = m.value("lower_is_better", r.metric == data::MetricKind::Mse);
    out.push_back(r);
  }
  return out;
}

json to_json(const std::vector<metrics::TaskResult>& results) {
  json out = json::array();
  for (const auto& r : results)
    out.push_back({{"task", r.task},
                   {"metric", data::to_string(r.metric)},
                   {"value", r.value},
                   {"lower_is_better", r.lower_is_better}});
  return out;
}

metrics::MultitaskGain delta_m_between(const json& method, const json& baseline) {
  return metrics::multitask_gain(report_metrics(method), report_metrics(baseline));
}

json normalize_report(json report) {
  if (report.contains("provenance")) {
    report["provenance"].erase("started");
    report["provenance"].erase("finished");
  }
  return report;
}

std::string gradcheck_group(const std::string& param) {
  const auto cut = param.rfind('/');
  return cut == std::string::npos ? param : param.substr(0, cut);
}

std::pair<double, double> mean_and_stderr(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("mean_and_stderr: no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

std::string first_mismatch(const model::Model& model, const data::Table& table) {
  const auto& a = model.schema.columns;
  const auto& b = table.schema.columns;
  for (std::size_t j = 0; j < std::min(a.size(), b.size()); ++j)
    if (!(a[j] == b[j]))
      return "feature " + std::to_string(j) + ": checkpoint has '" + a[j].name + "' (" + data::to_string(a[j].kind) +
             "), dataset has '" + b[j].name + "' (" + data::to_string(b[j].kind) + ")";
  if (a.size() != b.size())
    return "feature count: checkpoint has " + std::to_string(a.size()) + ", dataset has " + std::to_string(b.size());
  const auto& s = model.tasks;
  const auto& t = table.tasks;
  for (std::size_t i = 0; i < std::min(s.size(), t.size()); ++i)
    if (!(s[i] == t[i]))
      return "task " + std::to_string(i) + ": checkpoint has '" + s[i].name + "' (" + data::to_string(s[i].kind) +
             "), dataset has '" + t[i].name + "' (" + data::to_string(t[i].kind) + ")";
  if (s.size() != t.size())
    return "task count: checkpoint has " + std::to_string(s.size()) + ", dataset has " + std::to_string(t.size());
  return "";
}

TrainRun train_and_test(const data::Table& table, const model::ModelConfig& model_config,
                        const train::TrainConfig& train_config, std::uint64_t split_seed, std::ostream* log) {
  TrainRun run;
  run.splits = train::make_splits(table, train_config.split_ratios, split_seed, train_config.standardize_numeric);
  const auto init = model::Model::create(model_config, table.schema, table.tasks, train_config.seed);
  train::FitHooks hooks;
  hooks.log = log;
  run.fit = train::fit(init, run.splits, train_config, hooks);
  run.test = train::evaluate(run.fit.best, run.splits.test, run.splits.stats, train_config.eval_batch_size);
  return run;
}

namespace {

using Command = CommandResult (*)(const json&, const fs::path&);

const std::map<std::string, Command>& commands() {
  static const std::map<std::string, Command> table{{"generate", cmd_generate}, {"train", cmd_train},
                                                    {"eval", cmd_eval},         {"ablate", cmd_ablate},
                                                    {"bench", cmd_bench},       {"gradcheck", cmd_gradcheck}};
  return table;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multitask tabular transformer toolkit", "multitab"};
  std::string command, config_path, out_dir;
  std::vector<std::string> names;
  for (const auto& [name, _] : commands()) names.push_back(name);
  app.add_option("command", command, "Command to run")->required()->check(CLI::IsMember(names));
  app.add_option("--config", config_path, "JSON run configuration")->required();
  app.add_option("--out", out_dir, "Output directory (overrides the config's \"out\")");
  app.set_version_flag("--version", kVersion);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const json config = read_config(config_path, command);
    fs::path dir;
    if (!out_dir.empty()) {
      dir = out_dir;
    } else if (config.contains("out") && config["out"].is_string()) {
      dir = config["out"].get<std::string>();
    } else {
      throw ConfigError(config_path + ": /out: required field is missing (or pass --out)");
    }
    const CommandResult result = commands().at(command)(config, dir);
    out << command << ": report written to " << (dir / kReportFile).string() << '\n';
    if (!result.message.empty()) (result.exit == kOk ? out : err) << result.message << '\n';
    return result.exit;
  } catch (const Error& e) {
    err << command << ": error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << command << ": error: " << e.what() << '\n';
    return kOther;
  }
}

}  // namespace multitab::cli
