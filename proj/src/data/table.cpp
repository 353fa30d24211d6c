#include "multitab/data/table.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "multitab/numkit/error.hpp"

namespace multitab::data {

namespace fs = std::filesystem;
using nlohmann::json;
using num::Shape;
using num::Tensor;

namespace {

std::vector<std::string> expected_header(const Table& t) {
  std::vector<std::string> h;
  for (const auto& c : t.schema.columns) h.push_back(c.name);
  for (const auto& task : t.tasks) h.push_back(task.name);
  return h;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool is_integral(double v) { return std::isfinite(v) && v == std::floor(v); }

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw FormatError("cannot format value");
  return std::string(buf, ptr);
}

void Table::validate() const {
  schema.validate();
  for (const auto& t : tasks) t.validate();
  const std::size_t n = rows();
  if (features.rank() != 2 || features.dim(1) != schema.size()) {
    throw FormatError("features " + num::shape_str(features.shape()) + " do not match " +
                      std::to_string(schema.size()) + " schema columns");
  }
  if (targets.rank() != 2 || targets.dim(0) != n || targets.dim(1) != tasks.size()) {
    throw FormatError("targets " + num::shape_str(targets.shape()) + " do not match " + std::to_string(n) + " rows x " +
                      std::to_string(tasks.size()) + " tasks");
  }
  for (std::size_t j = 0; j < schema.size(); ++j) {
    const auto& col = schema.columns[j];
    if (col.kind != FeatureKind::Categorical) continue;
    for (std::size_t r = 0; r < n; ++r) {
      const double v = features.at(r, j);
      if (!is_integral(v) || v < 0 || v >= static_cast<double>(col.cardinality))
        throw SchemaError("column '" + col.name + "' row " + std::to_string(r) + ": code " + format_double(v) +
                          " outside [0, " + std::to_string(col.cardinality) + ")");
    }
  }
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& task = tasks[i];
    if (task.kind == TaskKind::Regression) continue;
    const double k = static_cast<double>(task.output_dim() == 1 ? 2 : task.classes);
    for (std::size_t r = 0; r < n; ++r) {
      const double v = targets.at(r, i);
      if (!is_integral(v) || v < 0 || v >= k)
        throw SchemaError("task '" + task.name + "' row " + std::to_string(r) + ": label " + format_double(v) +
                          " is not a valid class");
    }
  }
}

void write_table(const Table& table, const fs::path& dir) {
  table.validate();
  fs::create_directories(dir);

  json sidecar = table.meta;
  sidecar["format"] = kFormatName;
  sidecar["rows"] = table.rows();
  sidecar["features"] = table.schema;
  sidecar["tasks"] = table.tasks;
  {
    std::ofstream os(dir / kSchemaFile);
    if (!os) throw FormatError("cannot write " + (dir / kSchemaFile).string());
    os << sidecar.dump(2) << '\n';
  }

  std::ofstream os(dir / kDataFile, std::ios::binary);
  if (!os) throw FormatError("cannot write " + (dir / kDataFile).string());
  std::string line;
  const auto header = expected_header(table);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) line += ',';
    line += header[i];
  }
  line += '\n';
  os << line;
  const std::size_t d = table.schema.size(), t = table.tasks.size();
  for (std::size_t r = 0; r < table.rows(); ++r) {
    line.clear();
    for (std::size_t j = 0; j < d; ++j) {
      if (j) line += ',';
      line += format_double(table.features.at(r, j));
    }
    for (std::size_t i = 0; i < t; ++i) {
      if (d + i) line += ',';
      line += format_double(table.targets.at(r, i));
    }
    line += '\n';
    os << line;
  }
}

Table read_table(const fs::path& dir) {
  const fs::path schema_path = dir / kSchemaFile;
  const fs::path data_path = dir / kDataFile;
  std::ifstream is(schema_path);
  if (!is) throw FormatError(schema_path.string() + ": cannot open");

  Table table;
  json sidecar;
  try {
    sidecar = json::parse(is);
  } catch (const json::parse_error& e) {
    throw FormatError(schema_path.string() + ": " + e.what());
  }
  std::size_t rows = 0;
  try {
    if (sidecar.value("format", "") != kFormatName) throw FormatError("missing or unknown \"format\"");
    table.schema = sidecar.at("features").get<FeatureSchema>();
    table.tasks = sidecar.at("tasks").get<std::vector<TaskSpec>>();
    rows = sidecar.at("rows").get<std::size_t>();
    table.schema.validate();
    for (const auto& t : table.tasks) t.validate();
    if (sidecar.contains("generator")) {
      const auto& gen = sidecar.at("generator");
      if (gen.contains("t") && gen.at("t").get<std::size_t>() != table.tasks.size())
        throw FormatError("generator.t = " + gen.at("t").dump() + " but " + std::to_string(table.tasks.size()) +
                          " tasks are declared");
      if (gen.contains("d") && gen.at("d").get<std::size_t>() != table.schema.size())
        throw FormatError("generator.d = " + gen.at("d").dump() + " but " + std::to_string(table.schema.size()) +
                          " features are declared");
    }
  } catch (const FormatError& e) {
    throw FormatError(schema_path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw FormatError(schema_path.string() + ": " + e.what());
  } catch (const SchemaError& e) {
    throw FormatError(schema_path.string() + ": " + e.what());
  }
  for (const char* key : {"format", "rows", "features", "tasks"}) sidecar.erase(key);
  table.meta = std::move(sidecar);

  std::ifstream ds(data_path, std::ios::binary);
  if (!ds) throw FormatError(data_path.string() + ": cannot open");
  const auto header = expected_header(table);
  const std::size_t d = table.schema.size(), t = table.tasks.size(), width = d + t;

  std::string line;
  if (!std::getline(ds, line)) throw FormatError(data_path.string() + ":1: missing header");
  {
    const auto cells = split_commas(line);
    if (cells.size() != width)
      throw FormatError(data_path.string() + ":1: header has " + std::to_string(cells.size()) + " columns, schema has " +
                        std::to_string(width));
    for (std::size_t i = 0; i < width; ++i)
      if (cells[i] != header[i])
        throw FormatError(data_path.string() + ":1: column " + std::to_string(i) + " is '" + std::string(cells[i]) +
                          "', schema expects '" + header[i] + "'");
  }

  table.features = Tensor(Shape{rows, d});
  table.targets = Tensor(Shape{rows, t});
  std::size_t r = 0;
  std::size_t lineno = 1;
  while (std::getline(ds, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (r >= rows)
      throw FormatError(data_path.string() + ":" + std::to_string(lineno) + ": more rows than the " +
                        std::to_string(rows) + " declared in " + kSchemaFile);
    const auto cells = split_commas(line);
    if (cells.size() != width)
      throw FormatError(data_path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) +
                        " cells, found " + std::to_string(cells.size()));
    for (std::size_t i = 0; i < width; ++i) {
      double v = 0.0;
      const auto cell = cells[i];
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || ptr != cell.data() + cell.size())
        throw FormatError(data_path.string() + ":" + std::to_string(lineno) + ": row " + std::to_string(r) +
                          ", column '" + header[i] + "': cannot parse '" + std::string(cell) + "' as a number");
      if (i < d)
        table.features.at(r, i) = v;
      else
        table.targets.at(r, i - d) = v;
    }
    ++r;
  }
  if (r != rows)
    throw FormatError(data_path.string() + ": found " + std::to_string(r) + " rows, " + kSchemaFile + " declares " +
                      std::to_string(rows));
  try {
    table.validate();
  } catch (const Error& e) {
    throw FormatError(data_path.string() + ": " + e.what());
  }
  return table;
}

}  // namespace multitab::data
