// Acceptance gate: one PASS/FAIL line per criterion. Exit status is 0 iff
// every selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "multitab/benchgen/benchgen.hpp"
#include "multitab/cli/cli.hpp"
#include "multitab/metrics/metrics.hpp"
#include "multitab/model/model.hpp"
#include "multitab/numkit/random.hpp"

using namespace multitab;
using nlohmann::json;
using num::Shape;
using num::Tensor;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances and budgets ----------------------------------------------------

constexpr double kCosineTol = 1e-8;             // 1
constexpr double kLinearPearsonTol = 0.02;      // 2
constexpr double kQuadraticPearsonTol = 0.03;   // 3
constexpr double kTaskCountTol = 0.02;          // 5
constexpr double kRowSumTol = 1e-12;            // 6
constexpr double kGradTol = 1e-4;               // 7
constexpr double kDeltaAliTol = 1e-4;           // 8
constexpr double kDeltaHiggsTol = 1e-3;         // 8
constexpr double kMinTestEv = 0.95;             // 9
constexpr std::size_t kMaxEpochs9 = 30;         // 9
constexpr double kAucTol = 1e-12;               // 11
constexpr double kLegacyCosTol = 1e-12;         // 12

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double budget_s;
  bool long_running;
  std::function<Outcome()> run;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("multitab_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<double> column(const Tensor& t, std::size_t c) {
  std::vector<double> out(t.dim(0));
  for (std::size_t r = 0; r < t.dim(0); ++r) out[r] = t.at(r, c);
  return out;
}

double row_cosine(const Tensor& w, std::size_t i, std::size_t j) {
  double ij = 0.0, ii = 0.0, jj = 0.0;
  for (std::size_t k = 0; k < w.dim(1); ++k) {
    ij += w.at(i, k) * w.at(j, k);
    ii += w.at(i, k) * w.at(i, k);
    jj += w.at(j, k) * w.at(j, k);
  }
  return ij / std::sqrt(ii * jj);
}

bench::GenConfig gen(std::size_t t, double p, std::vector<unsigned> degrees, double noise, std::size_t n,
                     std::uint64_t seed) {
  bench::GenConfig g = bench::GenConfig::uniform(t, p, n, seed);
  g.degrees = std::move(degrees);
  g.noise_scales.assign(t, noise);
  return g;
}

// ---- criteria -----------------------------------------------------------------------------

Outcome cosine_exactness() {
  double worst = 0.0;
  num::Rng rng(101);
  for (std::size_t t : {2, 3, 5, 7})
    for (double p : {0.0, 0.2, 0.6, 1.0}) {
      const auto w = bench::build_weight_matrix(bench::build_correlation_matrix(t, p), 32, rng).w;
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j)
          if (i != j) worst = std::max(worst, std::abs(row_cosine(w, i, j) - p));
    }
  return {worst < kCosineTol, "max |cos - p| = " + fmt(worst) + " (tol " + fmt(kCosineTol) + ")"};
}

Outcome linear_correlation() {
  double worst = 0.0;
  for (double p : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const auto ds = bench::generate(gen(2, p, {1, 1}, 0.0, 100000, 202));
    worst = std::max(worst, std::abs(metrics::pearson(column(ds.labels, 0), column(ds.labels, 1)) - p));
  }
  return {worst < kLinearPearsonTol, "max |pearson - p| = " + fmt(worst) + " (tol " + fmt(kLinearPearsonTol) + ")"};
}

Outcome quadratic_oracle() {
  const double p = 0.5;
  const double expected = (p + 2.0 * p * p) / 3.0;
  const auto ds = bench::generate(gen(2, p, {2, 2}, 0.0, 500000, 303));
  const double r = metrics::pearson(column(ds.labels, 0), column(ds.labels, 1));
  return {std::abs(r - expected) < kQuadraticPearsonTol,
          "pearson = " + fmt(r) + ", closed form " + fmt(expected) + " (tol " + fmt(kQuadraticPearsonTol) + ")"};
}

Outcome degree_monotonicity() {
  std::vector<double> means;
  for (unsigned pd : {1u, 2u, 3u})
    means.push_back(bench::correlation_report(gen(2, 0.6, {pd, pd}, 0.01, 10000, 404), 100).mean_over_pairs);
  const bool decreasing = means[0] > means[1] && means[1] > means[2];
  return {decreasing, "mean pearson PD1 " + fmt(means[0]) + ", PD2 " + fmt(means[1]) + ", PD3 " + fmt(means[2]) +
                          (decreasing ? "" : " (PD3 > PD2: odd-degree terms restore correlation)")};
}

Outcome task_count_invariance() {
  const double two = bench::correlation_report(gen(2, 0.6, {3, 3}, 0.01, 10000, 505), 40).mean_over_pairs;
  const double four = bench::correlation_report(gen(4, 0.6, {3, 3, 3, 3}, 0.01, 10000, 506), 40).mean_over_pairs;
  return {std::abs(two - four) < kTaskCountTol,
          "t=2 " + fmt(two) + ", t=4 " + fmt(four) + " (tol " + fmt(kTaskCountTol) + ")"};
}

Outcome mask_semantics() {
  using model::MaskScheme;
  const std::size_t d = 6, t = 2, L = d + t;
  const std::pair<MaskScheme, std::size_t> expected[] = {
      {MaskScheme::None, 0}, {MaskScheme::TnotT, 2}, {MaskScheme::FnotT, 12}, {MaskScheme::Both, 14}};
  num::Rng rng(606);
  Tensor x(Shape{3 * L, 8});
  for (double& v : x.data()) v = rng.normal();
  num::ParamStore params;
  for (const char* m : {"if/wq", "if/wk", "if/wv", "if/wo"}) {
    Tensor w(Shape{8, 8});
    for (double& v : w.data()) v = rng.normal();
    params[m] = w;
  }
  bool ok = true;
  std::string detail;
  double worst_sum = 0.0;
  for (const auto& [scheme, cells] : expected) {
    const Tensor mask = model::expand_mask(scheme, d, t);
    std::size_t blocked = 0;
    for (double v : mask.data()) blocked += std::isinf(v) ? 1 : 0;
    ok = ok && blocked == cells;
    detail += model::to_string(scheme) + " blocks " + std::to_string(blocked) + "; ";
    const Tensor a = model::inter_feature_weights(params, "if", x, L, 2, &mask);
    for (std::size_t g = 0; g < 3 * 2; ++g)
      for (std::size_t q = 0; q < L; ++q) {
        double sum = 0.0;
        for (std::size_t k = 0; k < L; ++k) {
          const double w = a.data()[(g * L + q) * L + k];
          if (std::isinf(mask.at(q, k)) && w != 0.0) ok = false;
          sum += w;
        }
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      }
  }
  ok = ok && worst_sum < kRowSumTol;
  return {ok, detail + "max |row sum - 1| = " + fmt(worst_sum)};
}

Outcome gradient_correctness() {
  const fs::path dir = scratch("gradcheck");
  double worst = 0.0;
  std::string where;
  for (const char* mask : {"none", "FnotT", "TnotT", "both"})
    for (bool rope : {false, true}) {
      const json cfg{{"command", "gradcheck"},
                     {"seed", 707},
                     {"d", 3},
                     {"t", 2},
                     {"n", 3},
                     {"tolerance", kGradTol},
                     {"model", {{"e", 4}, {"heads", 2}, {"blocks", 1}, {"mask", mask}, {"use_rope", rope}}}};
      const auto r = cli::cmd_gradcheck(cfg, dir / (std::string(mask) + (rope ? "_rope" : "")));
      const double err = r.report["max_rel_error"].get<double>();
      if (err >= worst) {
        worst = err;
        where = std::string(mask) + (rope ? "+rope" : "") + " " + r.report["worst_parameter"].get<std::string>();
      }
    }
  return {worst <= kGradTol, "8 configs, max relative error " + fmt(worst) + " at " + where};
}

Outcome delta_m_arithmetic() {
  auto results = [](const std::vector<double>& values) {
    std::vector<metrics::TaskResult> out;
    for (std::size_t i = 0; i < values.size(); ++i)
      out.push_back({"task" + std::to_string(i), data::MetricKind::Auc, values[i] / 100.0, false});
    return out;
  };
  const double ali = metrics::multitask_gain(results({72.57, 86.02}), results({72.07, 85.67})).delta_m;
  // Higgs: target AUC followed by the seven EV columns.
  auto higgs = [&](const std::vector<double>& v) {
    auto r = results(v);
    for (std::size_t i = 1; i < r.size(); ++i) r[i].metric = data::MetricKind::ExplainedVariance;
    return r;
  };
  const double hig = metrics::multitask_gain(higgs({85.99, 93.99, 33.63, 39.82, 61.36, 97.96, 68.93, 63.58}),
                                             higgs({84.90, 94.39, 32.42, 38.79, 60.43, 99.19, 68.16, 62.83}))
                         .delta_m;
  const bool ok = std::abs(ali - 0.5512) < kDeltaAliTol && std::abs(hig - 1.2337) < kDeltaHiggsTol;
  return {ok, "AliExpress " + fmt(ali) + " (0.5512), Higgs " + fmt(hig) + " (1.2337)"};
}

// Shared by criteria 9 and 10.
fs::path learnability_dataset() {
  static fs::path dir;
  if (dir.empty()) {
    dir = scratch("learnability") / "ds";
    const json cfg{{"command", "generate"},
                   {"dataset",
                    {{"t", 3}, {"p", 0.6}, {"degrees", {1, 1, 1}}, {"noise_scales", {0.01, 0.01, 0.01}},
                     {"n", 50000}, {"seed", 909}}}};
    cli::cmd_generate(cfg, dir);
  }
  return dir;
}

json learnability_train() {
  return {{"seed", 9}, {"max_epochs", 10}, {"patience", 3}, {"batch_size", 256}, {"learning_rate", 1e-3}};
}

json learnability_model() { return {{"e", 16}, {"blocks", 2}, {"heads", 4}, {"mask", "TnotT"}}; }

Outcome learnability() {
  const auto ds = learnability_dataset();
  const json cfg{{"command", "train"},
                 {"dataset", ds.string()},
                 {"model", learnability_model()},
                 {"train", learnability_train()}};
  const auto r = cli::cmd_train(cfg, ds.parent_path() / "train");
  bool ok = r.report["epochs_run"].get<std::size_t>() <= kMaxEpochs9;
  std::string detail = "test EV";
  for (const auto& m : r.report["metrics"]) {
    const double ev = m["value"].get<double>();
    ok = ok && ev >= kMinTestEv;
    detail += " " + fmt(ev);
  }
  return {ok, detail + " (min " + fmt(kMinTestEv) + "), " + std::to_string(r.report["epochs_run"].get<std::size_t>()) +
                  " epochs, best " + std::to_string(r.report["best_epoch"].get<std::size_t>())};
}

Outcome ablation_integrity() {
  const auto ds = learnability_dataset();
  json tc = learnability_train();
  tc["max_epochs"] = 5;
  tc["patience"] = 2;
  const json cfg{{"command", "ablate"}, {"dataset", ds.string()}, {"model", learnability_model()}, {"train", tc}};
  const auto r = cli::cmd_ablate(cfg, ds.parent_path() / "ablate");
  const json& rows = r.report["rows"];
  bool ok = rows.size() == 6 && r.report["shared_baseline"] == true;
  std::set<std::string> hashes;
  std::string detail;
  for (const auto& row : rows) {
    const double dm = row["delta_m"].get<double>();
    ok = ok && std::isfinite(dm);
    hashes.insert(row["baseline_checkpoint_hash"].get<std::string>());
    detail += row["tokens"].get<std::string>() + "/" + row["mask"].get<std::string>() + " " + fmt(dm) + "; ";
  }
  ok = ok && hashes.size() == 1;
  return {ok, std::to_string(rows.size()) + " cells, " + std::to_string(hashes.size()) + " baseline hash: " + detail};
}

// O(n^2) pair counting, ties count one half.
double auc_by_pairs(const std::vector<double>& s, const std::vector<double>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1.0 && y[j] == 0.0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

Outcome auc_oracle() {
  num::Rng rng(1111);
  double worst = 0.0;
  for (int inst = 0; inst < 1000; ++inst) {
    const auto n = 2 + static_cast<std::size_t>(rng.uniform() * 49.0);
    std::vector<double> s(n), y(n);
    // Coarse score grid forces ties.
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::floor(rng.uniform() * 8.0) / 8.0;
      y[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    y[0] = 1.0;
    y[1] = 0.0;
    worst = std::max(worst, std::abs(metrics::auc_binary(s, y) - auc_by_pairs(s, y)));
  }
  return {worst < kAucTol, "1000 instances, max |rank - pairs| = " + fmt(worst)};
}

Outcome legacy_generator() {
  bench::LegacyGenConfig c;
  c.n = 2000;
  c.seed = 1212;
  double worst = 0.0;
  for (double p : {-0.7, 0.0, 0.3, 0.9}) {
    c.p = p;
    const auto ds = bench::generate_legacy_mmoe(c);
    worst = std::max(worst, std::abs(row_cosine(ds.weights.w, 0, 1) - p));
  }
  c.p = 1.0;
  c.noise_std = 0.0;
  c.alphas.clear();
  c.betas.clear();
  const auto ds = bench::generate_legacy_mmoe(c);
  const bool identical = column(ds.labels, 0) == column(ds.labels, 1);
  return {worst < kLegacyCosTol && identical,
          "max |cos - p| = " + fmt(worst) + ", p=1 labels bitwise equal: " + (identical ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  bool with_long = false;
  app.add_option("--only", only, "Criterion ids to run")->delimiter(',');
  app.add_flag("--long", with_long, "Include the long training criteria (9, 10)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "cosine exactness", 1, false, cosine_exactness},
      {2, "linear-label correlation", 10, false, linear_correlation},
      {3, "quadratic-label oracle", 30, false, quadratic_oracle},
      {4, "PD monotonicity", 120, false, degree_monotonicity},
      {5, "task-count invariance", 120, false, task_count_invariance},
      {6, "mask semantics", 1, false, mask_semantics},
      {7, "gradient correctness", 30, false, gradient_correctness},
      {8, "delta_m arithmetic", 1, false, delta_m_arithmetic},
      {9, "desk-scale learnability", 15 * 60, true, learnability},
      {10, "ablation harness integrity", 90 * 60, true, ablation_integrity},
      {11, "AUC oracle equivalence", 5, false, auc_oracle},
      {12, "legacy generator", 1, false, legacy_generator},
  };
  int failures = 0, ran = 0;
  for (const auto& c : all) {
    const bool selected = only.empty() ? (with_long || !c.long_running)
                                       : std::find(only.begin(), only.end(), c.id) != only.end();
    if (!selected) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("criterion %2d %-28s %s  %s [%.2fs, budget %.0fs%s]\n", c.id, c.title.c_str(), pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs, c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
