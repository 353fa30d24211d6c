#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "multitab/benchgen/benchgen.hpp"
#include "multitab/cli/cli.hpp"
#include "multitab/data/json_reader.hpp"
#include "multitab/numkit/error.hpp"
#include "multitab/numkit/gradcheck.hpp"

namespace multitab::cli {

using data::JsonReader;
using nlohmann::json;
using num::Shape;
using num::Tensor;
namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

json provenance(const json& seeds, const std::string& started) {
  return json{{"version", kVersion}, {"seeds", seeds}, {"started", started}, {"finished", utc_now()}};
}

void write_json(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw FormatError(path.string() + ": cannot write");
  os << doc.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path.string() + ": cannot open");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

CommandResult finish(const fs::path& out, json report) {
  write_json(out / kReportFile, report);
  return {std::move(report), kOk, ""};
}

data::Table read_dataset(const JsonReader& r) {
  const auto path = r.required<std::string>("dataset");
  if (!fs::is_directory(path)) r.fail("dataset", "'" + path + "' is not a directory");
  return data::read_table(path);
}

model::ModelConfig stl_config(const JsonReader& r) {
  if (r.has("baseline_model")) {
    auto c = model::model_config_from_json(r.at("baseline_model"), r.pointer("baseline_model"));
    if (c.kind != model::ModelKind::Stl) r.fail("baseline_model", "the baseline must be an STL model");
    return c;
  }
  model::ModelConfig c;
  c.kind = model::ModelKind::Stl;
  return c;
}

// Adds delta_m against a baseline report file when the config names one.
void attach_baseline(json& report, const JsonReader& r, bool is_baseline) {
  if (!r.has("baseline_report")) return;
  const auto path = r.required<std::string>("baseline_report");
  if (is_baseline) {
    report["baseline_report"] = path;
    return;
  }
  const json base = read_json(path);
  const auto gain = delta_m_between(report, base);
  report["baseline_report"] = path;
  report["delta_m"] = gain.delta_m;
  report["per_task_delta"] = gain.per_task_deltas;
}

std::ofstream open_log(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw FormatError(path.string() + ": cannot write");
  return os;
}

json run_summary(const TrainRun& run) {
  return json{{"metrics", to_json(run.test)},
              {"best_epoch", run.fit.best_epoch},
              {"epochs_run", run.fit.log.size()},
              {"best_val_monitor", run.fit.best_monitor},
              {"checkpoint_hash", hex(model::params_hash(run.fit.best.params))}};
}

void save_run(const fs::path& dir, const TrainRun& run, const train::TrainConfig& tc, std::uint64_t split_seed,
              const std::string& dataset) {
  fs::create_directories(dir);
  train::save_checkpoint((dir / kCheckpointFile).string(), run.fit.best, run.fit.best_optimizer, run.fit.best_epoch,
                         json{{"train", tc}, {"split_seed", split_seed}, {"dataset", dataset}});
}

}  // namespace

// ---- generate ----------------------------------------------------------------

CommandResult cmd_generate(const json& config, const fs::path& out) {
  const std::string started = utc_now();
  const JsonReader r(config, "");
  json report{{"command", "generate"}, {"config", config}};
  if (r.has("legacy")) {
    const auto lc = bench::legacy_config_from_json(r.at("legacy"), r.pointer("legacy"));
    lc.validate();
    bench::save_dataset(bench::generate_legacy_mmoe(lc), out);
    report["dataset"] = {{"dir", out.string()}, {"rows", lc.n}, {"features", lc.d}, {"tasks", 2}};
    report["provenance"] = provenance({{"dataset", lc.seed}}, started);
    return finish(out, report);
  }
  const auto g = bench::gen_config_from_json(r.at("dataset"), r.pointer("dataset"));
  g.validate();
  bench::save_dataset(bench::generate(g), out);
  report["dataset"] = {{"dir", out.string()}, {"rows", g.n}, {"features", g.d}, {"tasks", g.t}};
  if (r.optional<bool>("verify", false)) {
    const auto repeats = r.optional<std::size_t>("verify_repeats", 10);
    if (repeats < 2) r.fail("verify_repeats", "must be >= 2");
    const json cr = bench::to_json(bench::correlation_report(g, repeats));
    write_json(out / "correlation_report.json", cr);
    report["correlation_report"] = cr;
  }
  report["provenance"] = provenance({{"dataset", g.seed}}, started);
  return finish(out, report);
}

// ---- train / eval --------------------------------------------------------------

CommandResult cmd_train(const json& config, const fs::path& out) {
  const std::string started = utc_now();
  const JsonReader r(config, "");
  const data::Table table = read_dataset(r);
  const auto mc = model::model_config_from_json(r.at("model"), r.pointer("model"));
  const auto tc = train::train_config_from_json(r.at("train"), r.pointer("train"));
  const auto split_seed = r.optional<std::uint64_t>("split_seed", tc.seed);
  mc.validate(table.schema.size(), table.tasks.size());
  tc.validate(table.tasks.size(), mc.kind == model::ModelKind::MultiTab && mc.inter_sample);

  auto log = open_log(out / kLogFile);
  const TrainRun run = train_and_test(table, mc, tc, split_seed, &log);
  save_run(out, run, tc, split_seed, r.required<std::string>("dataset"));

  json report = run_summary(run);
  report["command"] = "train";
  report["config"] = config;
  report["model"] = model::to_string(mc.kind);
  report["is_baseline"] = mc.kind == model::ModelKind::Stl;
  report["checkpoint"] = kCheckpointFile;
  report["log"] = kLogFile;
  report["inter_sample_context"] = tc.eval_batch_size;
  report["parameters"] = run.fit.best.parameter_count();
  attach_baseline(report, r, mc.kind == model::ModelKind::Stl);
  report["provenance"] = provenance({{"train", tc.seed}, {"split", split_seed}}, started);
  return finish(out, report);
}

CommandResult cmd_eval(const json& config, const fs::path& out) {
  const std::string started = utc_now();
  const JsonReader r(config, "");
  const auto ckpt = r.required<std::string>("checkpoint");
  const auto loaded = model::load_model(ckpt);
  const data::Table table = read_dataset(r);
  if (const std::string diff = first_mismatch(loaded.model, table); !diff.empty())
    throw ContractError("checkpoint '" + ckpt + "' does not match the dataset: " + diff);
  if (!loaded.header.contains("train") || !loaded.header.contains("split_seed"))
    throw FormatError(ckpt + ": no training header; cannot rebuild the splits");
  const auto tc = train::train_config_from_json(loaded.header.at("train"), "/train");
  const auto split_seed = loaded.header.at("split_seed").get<std::uint64_t>();
  const auto batch = r.optional<std::size_t>("eval_batch_size", tc.eval_batch_size);
  if (batch < 1) r.fail("eval_batch_size", "must be >= 1");

  const auto splits = train::make_splits(table, tc.split_ratios, split_seed, tc.standardize_numeric);
  const auto results = train::evaluate(loaded.model, splits.test, splits.stats, batch);
  json report{{"command", "eval"},
              {"config", config},
              {"model", model::to_string(loaded.model.config.kind)},
              {"metrics", to_json(results)},
              {"checkpoint_hash", hex(model::params_hash(loaded.model.params))},
              {"inter_sample_context", batch},
              {"test_rows", splits.test.size()}};
  attach_baseline(report, r, false);
  report["provenance"] = provenance({{"split", split_seed}}, started);
  return finish(out, report);
}

// ---- ablate -----------------------------------------------------------------------

CommandResult cmd_ablate(const json& config, const fs::path& out) {
  const std::string started = utc_now();
  const JsonReader r(config, "");
  const data::Table table = read_dataset(r);
  const std::string dataset = r.required<std::string>("dataset");
  auto base = model::model_config_from_json(r.has("model") ? r.at("model") : json::object(), r.pointer("model"));
  base.kind = model::ModelKind::MultiTab;
  const auto tc = train::train_config_from_json(r.at("train"), r.pointer("train"));
  const auto split_seed = r.optional<std::uint64_t>("split_seed", tc.seed);
  const auto stl = stl_config(r);
  base.validate(table.schema.size(), table.tasks.size());
  tc.validate(table.tasks.size(), base.inter_sample);

  std::clog << "ablate: training the STL baseline\n";
  std::ofstream stl_log = open_log(out / "stl" / kLogFile);
  const TrainRun baseline = train_and_test(table, stl, tc, split_seed, &stl_log);
  save_run(out / "stl", baseline, tc, split_seed, dataset);
  const fs::path stl_ckpt = out / "stl" / kCheckpointFile;

  struct Cell {
    bool single;
    model::MaskScheme mask;
  };
  using model::MaskScheme;
  const Cell cells[] = {{true, MaskScheme::None},  {true, MaskScheme::FnotT},  {false, MaskScheme::None},
                        {false, MaskScheme::Both}, {false, MaskScheme::FnotT}, {false, MaskScheme::TnotT}};
  json rows = json::array();
  std::set<std::string> baseline_hashes;
  std::ostringstream table_txt;
  table_txt << "# tokens mask delta_m\n";
  std::size_t index = 0;
  for (const Cell& cell : cells) {
    model::ModelConfig mc = base;
    mc.single_token = cell.single;
    mc.mask = cell.mask;
    const std::string tokens = cell.single ? "single" : "multiple";
    const std::string name = tokens + "_" + model::to_string(cell.mask);
    std::clog << "ablate: cell " << ++index << "/6 " << name << '\n';
    std::ofstream log = open_log(out / "cells" / name / kLogFile);
    const TrainRun run = train_and_test(table, mc, tc, split_seed, &log);
    save_run(out / "cells" / name, run, tc, split_seed, dataset);

    // Every cell is scored against the baseline checkpoint as stored on disk.
    const auto stored = model::load_model(stl_ckpt.string());
    const std::string stored_hash = hex(model::params_hash(stored.model.params));
    baseline_hashes.insert(stored_hash);
    const auto gain = metrics::multitask_gain(run.test, baseline.test);
    json row = run_summary(run);
    row["tokens"] = tokens;
    row["mask"] = model::to_string(cell.mask);
    row["delta_m"] = gain.delta_m;
    row["per_task_delta"] = gain.per_task_deltas;
    row["baseline_checkpoint_hash"] = stored_hash;
    rows.push_back(row);
    table_txt << tokens << ' ' << model::to_string(cell.mask) << ' ' << data::format_double(gain.delta_m) << '\n';
  }
  {
    std::ofstream os(out / "ablation.txt");
    os << table_txt.str();
  }
  json bl = run_summary(baseline);
  bl["model"] = "stl";
  json report{{"command", "ablate"},
              {"config", config},
              {"baseline", bl},
              {"rows", rows},
              {"shared_baseline", baseline_hashes.size() == 1 &&
                                      *baseline_hashes.begin() == hex(model::params_hash(baseline.fit.best.params))}};
  report["provenance"] = provenance({{"train", tc.seed}, {"split", split_seed}}, started);
  return finish(out, report);
}

// ---- bench --------------------------------------------------------------------------

namespace {

struct SweepPoint {
  json value;
  std::string label;  // curve-file token
  bench::GenConfig gen;
};

std::vector<SweepPoint> sweep_points(const JsonReader& r, const bench::GenConfig& base) {
  const json& sweep = r.at("sweep");
  if (!sweep.is_object()) r.fail("sweep", "expected an object");
  static const std::set<std::string> axes{"p", "degrees", "t"};
  std::vector<std::string> present;
  for (const auto& [key, _] : sweep.items()) {
    if (!axes.count(key)) r.fail("sweep", "unknown axis '" + key + "' (expected p, degrees or t)");
    present.push_back(key);
  }
  if (present.size() > 1)
    throw ContractError(r.pointer("sweep") + ": a sweep varies exactly one of p, degrees, t; got " +
                        std::to_string(present.size()));
  if (present.empty()) r.fail("sweep", "no axis given");
  const std::string axis = present.front();
  const JsonReader s(sweep, r.pointer("sweep"));
  const json& values = s.at(axis);
  if (!values.is_array() || values.empty()) s.fail(axis, "expected a non-empty list");

  std::vector<SweepPoint> points;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const std::string where = s.pointer(axis) + "/" + std::to_string(k);
    SweepPoint pt{values[k], "", base};
    try {
      if (axis == "p") {
        pt.gen.p = values[k].get<double>();
        pt.gen.correlation_matrix.reset();
        pt.label = data::format_double(*pt.gen.p);
      } else if (axis == "t") {
        const auto t = values[k].get<std::size_t>();
        pt.gen.t = t;
        pt.gen.degrees.assign(t, base.degrees.front());
        pt.gen.noise_scales.assign(t, base.noise_scales.front());
        pt.label = std::to_string(t);
      } else {
        if (values[k].is_array())
          pt.gen.degrees = values[k].get<std::vector<unsigned>>();
        else
          pt.gen.degrees.assign(base.t, values[k].get<unsigned>());
        for (std::size_t i = 0; i < pt.gen.degrees.size(); ++i)
          pt.label += (i ? "," : "") + std::to_string(pt.gen.degrees[i]);
      }
    } catch (const json::exception& e) {
      throw ConfigError(where + ": wrong type (" + e.what() + ")");
    }
    if (axis != "p" && base.correlation_matrix && pt.gen.t != base.correlation_matrix->dim(0))
      throw ConfigError(where + ": a fixed correlation matrix cannot change the task count");
    try {
      pt.gen.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    points.push_back(std::move(pt));
  }
  return points;
}

}  // namespace

CommandResult cmd_bench(const json& config, const fs::path& out) {
  const std::string started = utc_now();
  const JsonReader r(config, "");
  const auto base = bench::gen_config_from_json(r.at("dataset"), r.pointer("dataset"));
  const auto points = sweep_points(r, base);
  const std::string axis = r.at("sweep").begin().key();
  const auto seeds = r.required<std::size_t>("seeds");
  if (seeds < 1) r.fail("seeds", "must be >= 1");
  const auto tc = train::train_config_from_json(r.at("train"), r.pointer("train"));
  const auto stl = stl_config(r);

  std::vector<std::pair<std::string, model::ModelConfig>> models;
  if (r.has("models")) {
    const json& list = r.at("models");
    if (!list.is_array() || list.empty()) r.fail("models", "expected a non-empty list");
    for (std::size_t k = 0; k < list.size(); ++k) {
      const JsonReader m(list[k], r.pointer("models") + "/" + std::to_string(k));
      models.emplace_back(m.required<std::string>("name"),
                          model::model_config_from_json(m.has("model") ? m.at("model") : json::object(),
                                                        m.pointer("model")));
    }
  } else {
    models.emplace_back("multitab", model::ModelConfig{});
  }
  for (const auto& [name, mc] : models)
    for (const auto& pt : points) {
      mc.validate(pt.gen.d, pt.gen.t);
      tc.validate(pt.gen.t, mc.kind == model::ModelKind::MultiTab && mc.inter_sample);
    }

  // deltas[model][point][seed]
  std::vector<std::vector<std::vector<double>>> deltas(models.size(),
                                                       std::vector<std::vector<double>>(points.size()));
  json point_reports = json::array();
  for (std::size_t k = 0; k < points.size(); ++k) {
    for (std::size_t rep = 0; rep < seeds; ++rep) {
      bench::GenConfig g = points[k].gen;
      g.seed = num::derive_seed(base.seed, rep);
      const data::Table table = bench::to_table(bench::generate(g));
      train::TrainConfig trc = tc;
      trc.seed = num::derive_seed(tc.seed, rep);
      std::clog << "bench: " << axis << '=' << points[k].label << " seed " << rep + 1 << '/' << seeds << '\n';
      const TrainRun baseline = train_and_test(table, stl, trc, trc.seed, nullptr);
      for (std::size_t m = 0; m < models.size(); ++m) {
        const TrainRun run = train_and_test(table, models[m].second, trc, trc.seed, nullptr);
        deltas[m][k].push_back(metrics::multitask_gain(run.test, baseline.test).delta_m);
      }
    }
    json per_model = json::array();
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto [mean, se] = mean_and_stderr(deltas[m][k]);
      per_model.push_back({{"name", models[m].first}, {"delta_m", deltas[m][k]}, {"mean", mean}, {"stderr", se}});
    }
    json gen;
    bench::to_json(gen, points[k].gen);
    point_reports.push_back({{"axis", axis}, {"value", points[k].value}, {"dataset", gen}, {"models", per_model}});
  }

  fs::create_directories(out);
  std::ofstream curve(out / kCurveFile);
  curve << "# model axis value mean_delta_m stderr seeds\n";
  for (std::size_t m = 0; m < models.size(); ++m)
    for (std::size_t k = 0; k < points.size(); ++k) {
      const auto [mean, se] = mean_and_stderr(deltas[m][k]);
      curve << models[m].first << ' ' << axis << ' ' << points[k].label << ' ' << data::format_double(mean) << ' '
            << data::format_double(se) << ' ' << seeds << '\n';
    }

  json report{{"command", "bench"},
              {"config", config},
              {"axis", axis},
              {"seeds", seeds},
              {"points", point_reports},
              {"curve", kCurveFile}};
  report["provenance"] = provenance({{"dataset", base.seed}, {"train", tc.seed}}, started);
  return finish(out, report);
}

// ---- gradcheck ----------------------------------------------------------------------

CommandResult cmd_gradcheck(const json& config, const fs::path& out) {
  const std::string started = utc_now();
  const JsonReader r(config, "");
  const auto seed = r.required<std::uint64_t>("seed");
  const auto d = r.optional<std::size_t>("d", 3);
  const auto n = r.optional<std::size_t>("n", 3);
  const auto tol = r.optional<double>("tolerance", 1e-4);
  const auto step = r.optional<double>("step", 1e-5);
  if (!(tol > 0.0)) r.fail("tolerance", "must be > 0");
  if (!(step > 0.0)) r.fail("step", "must be > 0");

  std::vector<data::TaskSpec> tasks;
  if (r.has("tasks")) {
    try {
      tasks = r.at("tasks").get<std::vector<data::TaskSpec>>();
    } catch (const json::exception& e) {
      r.fail("tasks", e.what());
    }
  } else {
    for (std::size_t i = 0; i < r.optional<std::size_t>("t", 2); ++i)
      tasks.push_back(data::TaskSpec::regression("y" + std::to_string(i)));
  }
  for (const auto& t : tasks) t.validate();

  model::ModelConfig mc;
  mc.e = 4;
  mc.heads = 2;
  mc.blocks = 1;
  mc.head_hidden = 8;
  if (r.has("model")) {
    json merged = mc;
    merged.update(r.at("model"));
    mc = model::model_config_from_json(merged, r.pointer("model"));
  }
  const auto schema = data::FeatureSchema::all_numeric(d);
  const auto m = model::Model::create(mc, schema, tasks, seed);

  num::Rng rng(num::derive_seed(seed, 1));
  Tensor x(Shape{n, d}), y(Shape{n, tasks.size()});
  for (double& v : x.data()) v = rng.normal();
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (std::size_t k = 0; k < n; ++k) {
      switch (tasks[i].kind) {
        case data::TaskKind::Regression: y.at(k, i) = rng.normal(); break;
        case data::TaskKind::Binary: y.at(k, i) = rng.uniform() < 0.5 ? 0.0 : 1.0; break;
        case data::TaskKind::Multiclass:
          y.at(k, i) = std::floor(rng.uniform() * static_cast<double>(tasks[i].classes));
          break;
      }
    }

  num::GradCheckOptions opts;
  opts.step = step;
  const std::string corrupt = r.optional<std::string>("corrupt_group", "");
  if (!corrupt.empty()) {
    bool found = false;
    for (const auto& [name, _] : m.params) found = found || gradcheck_group(name) == corrupt;
    if (!found) r.fail("corrupt_group", "no parameter group named '" + corrupt + "'");
    opts.corrupt = [corrupt](num::GradMap& grads) {
      for (auto& [name, g] : grads)
        if (gradcheck_group(name) == corrupt) g.data()[0] += 1.0;
    };
  }
  const auto point = model::jitter_params(m.params, model::kGradCheckJitter, num::derive_seed(seed, 2));
  const auto rep = num::check_gradients(
      [&](num::Tape& tape, const num::ParamStore& store) {
        model::ParamBinder p(tape, store);
        const auto preds = m.forward(p, x);
        std::vector<num::Var> losses;
        for (std::size_t i = 0; i < tasks.size(); ++i) {
          Tensor yi(Shape{n});
          for (std::size_t k = 0; k < n; ++k) yi[k] = y.at(k, i);
          losses.push_back(train::task_loss(preds[i], yi, tasks[i]));
        }
        return train::aggregate_losses(losses, std::vector<double>(tasks.size(), 1.0));
      },
      point, opts);

  std::map<std::string, num::GroupError> groups;
  for (const auto& [name, err] : rep.groups) {
    auto& g = groups[gradcheck_group(name)];
    g.max_rel_error = std::max(g.max_rel_error, err.max_rel_error);
    g.max_abs_error = std::max(g.max_abs_error, err.max_abs_error);
    g.entries += err.entries;
  }
  json group_json = json::object();
  for (const auto& [name, g] : groups)
    group_json[name] = {{"max_rel_error", g.max_rel_error}, {"max_abs_error", g.max_abs_error}, {"entries", g.entries}};
  const bool pass = rep.max_rel_error <= tol;
  const std::string worst_group = gradcheck_group(rep.worst_group);
  json report{{"command", "gradcheck"},
              {"config", config},
              {"model", mc},
              {"groups", group_json},
              {"max_rel_error", rep.max_rel_error},
              {"worst_group", worst_group},
              {"worst_parameter", rep.worst_group},
              {"tolerance", tol},
              {"pass", pass}};
  report["provenance"] = provenance({{"model", seed}}, started);
  CommandResult res = finish(out, report);
  std::ostringstream msg;
  msg << "gradcheck: max relative error " << rep.max_rel_error << " in group '" << worst_group << "' (parameter '"
      << rep.worst_group << "')" << (pass ? " within" : " exceeds") << " tolerance " << tol;
  res.message = msg.str();
  res.exit = pass ? kOk : kTolerance;
  return res;
}

}  // namespace multitab::cli
