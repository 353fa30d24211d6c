#pragma once

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "multitab/data/table.hpp"
#include "multitab/metrics/metrics.hpp"
#include "multitab/model/model.hpp"
#include "multitab/train/train.hpp"

namespace multitab::cli {

inline constexpr const char* kVersion = "multitab 0.1.0";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kLogFile = "train_log.jsonl";
inline constexpr const char* kCurveFile = "curve.txt";

enum ExitCode : int { kOk = 0, kOther = 1, kConfig = 2, kNumeric = 3, kTolerance = 4 };

/// Exit status of a failed command.
int exit_code_for(const std::exception& e);

/// `multitab <command> --config <path> [--out <dir>]`. Reports go to `out`,
/// diagnostics to `err`. Returns the process exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Parses a config file; the `command` field must match `expected` when given.
nlohmann::json read_config(const std::filesystem::path& path, const std::string& expected = "");

/// Result of one command. `exit` is nonzero only for tolerance failures; other
/// failures are thrown.
struct CommandResult {
  nlohmann::json report;
  int exit = kOk;
  std::string message;
};

// Every command takes the parsed config document and an output directory and
// writes its report there as report.json.
CommandResult cmd_generate(const nlohmann::json& config, const std::filesystem::path& out);
CommandResult cmd_train(const nlohmann::json& config, const std::filesystem::path& out);
CommandResult cmd_eval(const nlohmann::json& config, const std::filesystem::path& out);
CommandResult cmd_ablate(const nlohmann::json& config, const std::filesystem::path& out);
CommandResult cmd_bench(const nlohmann::json& config, const std::filesystem::path& out);
CommandResult cmd_gradcheck(const nlohmann::json& config, const std::filesystem::path& out);

/// Per-task metrics stored in a report.
std::vector<metrics::TaskResult> report_metrics(const nlohmann::json& report);
nlohmann::json to_json(const std::vector<metrics::TaskResult>& results);

/// Multitask gain of `method` over `baseline`, tasks matched by name and order.
metrics::MultitaskGain delta_m_between(const nlohmann::json& method, const nlohmann::json& baseline);

/// Drops the wall-clock fields so two reports can be compared byte for byte.
nlohmann::json normalize_report(nlohmann::json report);

/// Everything one training run produces.
struct TrainRun {
  train::SplitDataset splits;
  train::FitResult fit;
  std::vector<metrics::TaskResult> test;
};

/// Split, fit and evaluate on the test split. `log` receives the JSON-lines
/// epoch records when non-null.
TrainRun train_and_test(const data::Table& table, const model::ModelConfig& model_config,
                        const train::TrainConfig& train_config, std::uint64_t split_seed, std::ostream* log);

/// Names the first difference between a checkpoint's schema/tasks and a table's.
/// Empty when they agree.
std::string first_mismatch(const model::Model& model, const data::Table& table);

/// Parameter group used by gradcheck reports: the parameter path without its
/// last segment ("block0/if/wq" -> "block0/if").
std::string gradcheck_group(const std::string& param);

/// Mean and standard error (sample std / sqrt(R)); the error is 0 for R = 1.
std::pair<double, double> mean_and_stderr(const std::vector<double>& values);

}  // namespace multitab::cli
