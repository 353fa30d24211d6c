#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "multitab/data/schema.hpp"
#include "multitab/numkit/tensor.hpp"

namespace multitab::data {

inline constexpr const char* kDataFile = "data.csv";
inline constexpr const char* kSchemaFile = "schema.json";
inline constexpr const char* kFormatName = "multitab-dataset";

/// Column-typed table: features [n x d] (categorical columns hold integer
/// codes) and targets [n x t] (class indices for classification tasks).
struct Table {
  FeatureSchema schema;
  std::vector<TaskSpec> tasks;
  num::Tensor features;
  num::Tensor targets;
  // Extra sidecar content (generator echo, seed, ...), written verbatim.
  nlohmann::json meta = nlohmann::json::object();

  std::size_t rows() const { return features.rank() == 2 ? features.dim(0) : 0; }
  /// Shapes agree with schema/tasks and codes/labels are in range.
  void validate() const;
};

/// Writes `data.csv` (17 significant digits) and `schema.json` into `dir`.
void write_table(const Table& table, const std::filesystem::path& dir);

/// Reads a directory written by write_table. Malformed content raises
/// FormatError naming the file and line.
Table read_table(const std::filesystem::path& dir);

/// Shortest text that parses back to the same double, at most 17 digits.
std::string format_double(double v);

}  // namespace multitab::data
