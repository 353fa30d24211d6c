#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "multitab/benchgen/benchgen.hpp"
#include "multitab/cli/cli.hpp"
#include "multitab/numkit/error.hpp"

using namespace multitab;
using namespace multitab::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("multitab_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& name, const json& doc) {
  const fs::path p = dir / name;
  std::ofstream(p) << doc.dump(2);
  return p;
}

struct Invocation {
  int code;
  std::string out, err;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "multitab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

json small_gen(std::uint64_t seed, std::size_t n = 600) {
  return {{"t", 3}, {"d", 6}, {"p", 0.6}, {"degrees", {1, 1, 2}}, {"noise_scales", {0.01, 0.01, 0.01}},
          {"n", n}, {"seed", seed}};
}

json tiny_model() { return {{"e", 4}, {"heads", 2}, {"blocks", 1}, {"head_hidden", 4}}; }

json quick_train(std::uint64_t seed = 1) {
  return {{"seed", seed}, {"max_epochs", 2}, {"batch_size", 64}, {"patience", 2}};
}

json report_of(const std::vector<std::pair<std::string, double>>& values) {
  json m = json::array();
  for (const auto& [task, v] : values) m.push_back({{"task", task}, {"metric", "auc"}, {"value", v}});
  return {{"metrics", m}};
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(NonPsdError("x")) == 2);
  CHECK(exit_code_for(NumericFailure("x")) == 3);
  CHECK(exit_code_for(ContractError("x")) == 1);
  CHECK(exit_code_for(FormatError("x")) == 1);

  const auto dir = scratch("exit");
  CHECK(invoke({"train"}).code == 2);
  CHECK(invoke({"fly", "--config", "x.json"}).code == 2);
  CHECK(invoke({"train", "--config", (dir / "missing.json").string()}).code == 2);
  const auto wrong = write_config(dir, "wrong.json", {{"command", "eval"}, {"out", "x"}});
  CHECK(invoke({"train", "--config", wrong.string()}).code == 2);

  // A validation error carries the JSON pointer of the bad field.
  const auto bad = write_config(dir, "bad.json",
                                {{"command", "generate"},
                                 {"dataset", {{"t", 3}, {"p", 0.5}, {"n", "many"}, {"seed", 1}}}});
  const auto res = invoke({"generate", "--config", bad.string(), "--out", (dir / "o").string()});
  CHECK(res.code == 2);
  CHECK(res.err.find("/dataset/n") != std::string::npos);
}

TEST_CASE("generate writes the benchmark layout and is reproducible") {
  const auto dir = scratch("generate");
  const json cfg{{"command", "generate"},
                 {"dataset", {{"t", 3}, {"p", 0.6}, {"degrees", {3, 3, 3}}, {"n", 10000}, {"seed", 7}}}};
  CHECK(cmd_generate(cfg, dir / "a").exit == 0);
  CHECK(cmd_generate(cfg, dir / "b").exit == 0);
  const std::string csv = slurp(dir / "a" / data::kDataFile);
  CHECK(csv == slurp(dir / "b" / data::kDataFile));
  std::istringstream lines(csv);
  std::string header, line;
  std::getline(lines, header);
  CHECK(std::count(header.begin(), header.end(), ',') + 1 == 35);
  std::size_t rows = 0;
  while (std::getline(lines, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 10000);
  const auto table = data::read_table(dir / "a");
  CHECK(table.tasks.size() == 3);
  CHECK(table.schema.size() == 32);

  const json verify{{"command", "generate"},
                    {"dataset",
                     {{"t", 2}, {"p", 0.5}, {"degrees", {1, 1}}, {"noise_scales", {0.0, 0.0}}, {"n", 20000}, {"seed", 3}}},
                    {"verify", true},
                    {"verify_repeats", 5}};
  const auto r = cmd_generate(verify, dir / "v");
  CHECK(std::abs(r.report["correlation_report"]["mean_over_pairs"].get<double>() - 0.5) < 0.02);
  CHECK(fs::exists(dir / "v" / "correlation_report.json"));
  CHECK(r.report["provenance"]["version"] == kVersion);
  CHECK(r.report["config"] == verify);

  const json legacy{{"command", "generate"},
                    {"legacy", {{"p", 0.3}, {"alphas", {1.0}}, {"betas", {0.5}}, {"n", 50}, {"seed", 2}}}};
  CHECK(cmd_generate(legacy, dir / "l").exit == 0);
  CHECK(data::read_table(dir / "l").rows() == 50);
}

TEST_CASE("train, eval and the baseline wiring") {
  const auto dir = scratch("train");
  cmd_generate({{"command", "generate"}, {"dataset", small_gen(5)}}, dir / "ds");
  const std::string ds = (dir / "ds").string();

  const json stl_cfg{{"command", "train"}, {"dataset", ds}, {"model", {{"kind", "stl"}}}, {"train", quick_train()},
                     {"baseline_report", "nowhere.json"}};
  const auto stl = cmd_train(stl_cfg, dir / "stl");
  CHECK_FALSE(stl.report.contains("delta_m"));
  CHECK(stl.report["is_baseline"] == true);
  CHECK(stl.report["metrics"].size() == 3);
  CHECK(fs::exists(dir / "stl" / kCheckpointFile));
  CHECK(fs::exists(dir / "stl" / kLogFile));

  const json mt_cfg{{"command", "train"},
                    {"dataset", ds},
                    {"model", tiny_model()},
                    {"train", quick_train()},
                    {"baseline_report", (dir / "stl" / kReportFile).string()}};
  const auto mt = cmd_train(mt_cfg, dir / "mt");
  REQUIRE(mt.report.contains("delta_m"));
  CHECK(std::isfinite(mt.report["delta_m"].get<double>()));
  CHECK(mt.report["delta_m"].get<double>() == doctest::Approx(delta_m_between(mt.report, stl.report).delta_m));

  SUBCASE("eval reproduces the training report's test metrics") {
    const json ev{{"command", "eval"},
                  {"dataset", ds},
                  {"checkpoint", (dir / "mt" / kCheckpointFile).string()},
                  {"baseline_report", (dir / "stl" / kReportFile).string()}};
    const auto r = cmd_eval(ev, dir / "ev");
    CHECK(r.report["metrics"] == mt.report["metrics"]);
    CHECK(r.report["delta_m"] == mt.report["delta_m"]);
    CHECK(r.report["checkpoint_hash"] == mt.report["checkpoint_hash"]);
  }

  SUBCASE("eval on a dataset with different tasks names the first mismatch") {
    auto table = data::read_table(dir / "ds");
    table.tasks[1].name = "other";
    data::write_table(table, dir / "ds2");
    const json ev{{"command", "eval"},
                  {"dataset", (dir / "ds2").string()},
                  {"checkpoint", (dir / "mt" / kCheckpointFile).string()}};
    try {
      cmd_eval(ev, dir / "ev2");
      FAIL("expected ContractError");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("task 1") != std::string::npos);
      CHECK(std::string(e.what()).find("'other'") != std::string::npos);
    }
  }

  SUBCASE("identical configs give identical reports up to timestamps") {
    const auto again = cmd_train(mt_cfg, dir / "mt2");
    CHECK(normalize_report(again.report).dump() == normalize_report(mt.report).dump());
  }
}

TEST_CASE("delta_m from fixture reports") {
  const auto stl = report_of({{"click", 0.7207}, {"conv", 0.8567}});
  const auto mt = report_of({{"click", 0.7257}, {"conv", 0.8602}});
  CHECK(std::abs(delta_m_between(mt, stl).delta_m - 0.5512) < 1e-4);
  CHECK(delta_m_between(stl, stl).delta_m == 0.0);
  CHECK_THROWS_AS(delta_m_between(report_of({{"conv", 0.5}, {"click", 0.5}}), stl), ContractError);
}

TEST_CASE("ablate emits the six-cell grid with one shared baseline") {
  const auto dir = scratch("ablate");
  cmd_generate({{"command", "generate"}, {"dataset", small_gen(9, 300)}}, dir / "ds");
  json tc = quick_train(4);
  tc["max_epochs"] = 1;
  const json cfg{{"command", "ablate"}, {"dataset", (dir / "ds").string()}, {"model", tiny_model()}, {"train", tc}};
  const auto r = cmd_ablate(cfg, dir / "out");
  const json& rows = r.report["rows"];
  REQUIRE(rows.size() == 6);
  std::set<std::string> cells;
  for (const auto& row : rows) {
    CHECK(std::isfinite(row["delta_m"].get<double>()));
    CHECK(row["baseline_checkpoint_hash"] == r.report["baseline"]["checkpoint_hash"]);
    cells.insert(row["tokens"].get<std::string>() + "/" + row["mask"].get<std::string>());
  }
  CHECK(cells == std::set<std::string>{"single/none", "single/FnotT", "multiple/none", "multiple/both",
                                       "multiple/FnotT", "multiple/TnotT"});
  CHECK(r.report["shared_baseline"] == true);
  std::ifstream txt(dir / "out" / "ablation.txt");
  std::string line;
  std::getline(txt, line);
  CHECK(line.front() == '#');
}

TEST_CASE("bench sweeps one axis") {
  const auto dir = scratch("bench");
  json tc = quick_train(2);
  tc["max_epochs"] = 1;
  json gen = small_gen(1, 200);
  gen["degrees"] = {3, 3, 3};
  gen["d"] = 8;

  SUBCASE("correlation sweep with two seeds") {
    const json cfg{{"command", "bench"},
                   {"dataset", gen},
                   {"sweep", {{"p", {0.2, 0.6, 1.0}}}},
                   {"seeds", 2},
                   {"models", {{{"name", "mt"}, {"model", tiny_model()}}}},
                   {"train", tc}};
    const auto r = cmd_bench(cfg, dir / "p");
    const json& pts = r.report["points"];
    REQUIRE(pts.size() == 3);
    for (const auto& pt : pts) {
      const auto d = pt["models"][0]["delta_m"].get<std::vector<double>>();
      REQUIRE(d.size() == 2);
      const double mean = (d[0] + d[1]) / 2.0;
      const double sd = std::sqrt(((d[0] - mean) * (d[0] - mean) + (d[1] - mean) * (d[1] - mean)) / 1.0);
      CHECK(pt["models"][0]["mean"].get<double>() == doctest::Approx(mean));
      CHECK(pt["models"][0]["stderr"].get<double>() == doctest::Approx(sd / std::sqrt(2.0)));
    }
    std::ifstream curve(dir / "p" / kCurveFile);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(curve, line)) lines.push_back(line);
    REQUIRE(lines.size() == 4);
    CHECK(lines[0].rfind("# ", 0) == 0);
    CHECK(lines[1].rfind("mt p 0.2 ", 0) == 0);
  }

  SUBCASE("task-count sweep regenerates matching degree lists") {
    const json cfg{{"command", "bench"},
                   {"dataset", gen},
                   {"sweep", {{"t", {3, 5}}}},
                   {"seeds", 1},
                   {"models", {{{"name", "mt"}, {"model", tiny_model()}}}},
                   {"train", tc}};
    const auto r = cmd_bench(cfg, dir / "t");
    REQUIRE(r.report["points"].size() == 2);
    CHECK(r.report["points"][1]["dataset"]["degrees"] == json({3, 3, 3, 3, 3}));
    CHECK(r.report["points"][1]["dataset"]["t"] == 5);
    CHECK(r.report["points"][1]["models"][0]["stderr"] == 0.0);
  }

  SUBCASE("two axes are rejected") {
    const json cfg{{"command", "bench"}, {"dataset", gen}, {"sweep", {{"p", {0.2}}, {"t", {3}}}},
                   {"seeds", 1},         {"train", tc}};
    CHECK_THROWS_AS(cmd_bench(cfg, dir / "x"), ContractError);
    const json unknown{{"command", "bench"}, {"dataset", gen}, {"sweep", {{"q", {0.2}}}}, {"seeds", 1}, {"train", tc}};
    CHECK_THROWS_AS(cmd_bench(unknown, dir / "x"), ConfigError);
  }
}

TEST_CASE("mean_and_stderr") {
  const auto [m, se] = mean_and_stderr({1.0, 3.0});
  CHECK(m == 2.0);
  CHECK(se == doctest::Approx(std::sqrt(2.0) / std::sqrt(2.0)));
  CHECK(mean_and_stderr({4.0}).second == 0.0);
}

TEST_CASE("gradcheck command") {
  const auto dir = scratch("gradcheck");
  for (bool rope : {false, true}) {
    const json cfg{{"command", "gradcheck"}, {"seed", 5}, {"model", {{"use_rope", rope}}}};
    const auto r = cmd_gradcheck(cfg, dir / (rope ? "rope" : "plain"));
    CHECK(r.exit == 0);
    CHECK(r.report["pass"] == true);
    CHECK(r.report["groups"].contains("block0/is"));
  }
  const auto bad = write_config(dir, "bad.json",
                                {{"command", "gradcheck"}, {"seed", 5}, {"corrupt_group", "head1/l2"}});
  const auto res = invoke({"gradcheck", "--config", bad.string(), "--out", (dir / "bad").string()});
  CHECK(res.code == 4);
  CHECK(res.err.find("'head1/l2'") != std::string::npos);
  const json missing{{"command", "gradcheck"}, {"seed", 5}, {"corrupt_group", "nope"}};
  CHECK_THROWS_AS(cmd_gradcheck(missing, dir / "m"), ConfigError);
  CHECK(gradcheck_group("block0/if/wq") == "block0/if");
  CHECK(gradcheck_group("task_tokens") == "task_tokens");
}
