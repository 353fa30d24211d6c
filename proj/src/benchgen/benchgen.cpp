#include "multitab/benchgen/benchgen.hpp"

#include <cmath>

#include "multitab/data/json_reader.hpp"
#include "multitab/metrics/metrics.hpp"
#include "multitab/numkit/error.hpp"
#include "multitab/numkit/linalg.hpp"

namespace multitab::bench {

using nlohmann::json;
using num::Rng;
using num::Shape;
using num::Tensor;

namespace {

constexpr double kPsdClamp = 1e-10;
constexpr double kMatrixTol = 1e-10;

std::vector<double> column(const Tensor& m, std::size_t c) {
  std::vector<double> out(m.dim(0));
  for (std::size_t r = 0; r < m.dim(0); ++r) out[r] = m.at(r, c);
  return out;
}

// x . w for every row of x, w given as row `i` of `w`.
std::vector<double> project(const Tensor& x, const Tensor& w, std::size_t i) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> z(n);
  const double* wi = w.data().data() + i * w.dim(1);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.data().data() + r * d;
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += xr[k] * wi[k];
    z[r] = s;
  }
  return z;
}

}  // namespace

// ---- configuration ---------------------------------------------------------

GenConfig GenConfig::uniform(std::size_t t, double p, std::size_t n, std::uint64_t seed) {
  GenConfig c;
  c.t = t;
  c.p = p;
  c.degrees.assign(t, 3);
  c.noise_scales.assign(t, 0.01);
  c.n = n;
  c.seed = seed;
  return c;
}

void GenConfig::validate() const {
  if (t < 2) throw ConfigError("generator: t must be >= 2, got " + std::to_string(t));
  if (d < t) throw ConfigError("generator: d = " + std::to_string(d) + " must be >= t = " + std::to_string(t));
  if (p.has_value() == correlation_matrix.has_value())
    throw ConfigError("generator: set exactly one of a scalar p and a correlation matrix");
  if (p && !(*p >= 0.0 && *p <= 1.0))
    throw ConfigError("generator: p must lie in [0, 1], got " + std::to_string(*p));
  if (degrees.size() != t || noise_scales.size() != t)
    throw ConfigError("generator: degrees and noise_scales need one entry per task (t = " + std::to_string(t) + ")");
  for (unsigned deg : degrees)
    if (deg < 1) throw ConfigError("generator: polynomial degrees must be >= 1");
  for (double s : noise_scales)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("generator: noise scales must be finite and >= 0");
  if (correlation_matrix) {
    const Tensor& P = *correlation_matrix;
    if (P.rank() != 2 || P.dim(0) != t || P.dim(1) != t)
      throw ConfigError("generator: correlation matrix must be " + std::to_string(t) + "x" + std::to_string(t));
    for (std::size_t i = 0; i < t; ++i) {
      if (std::abs(P.at(i, i) - 1.0) > kMatrixTol) throw ConfigError("generator: correlation matrix needs a unit diagonal");
      for (std::size_t j = 0; j < t; ++j) {
        if (std::abs(P.at(i, j) - P.at(j, i)) > kMatrixTol) throw ConfigError("generator: correlation matrix is not symmetric");
        if (!(P.at(i, j) >= 0.0 && P.at(i, j) <= 1.0))
          throw ConfigError("generator: correlation matrix entries must lie in [0, 1]");
      }
    }
    for (double lam : num::sym_eig(P).eigenvalues)
      if (lam < -kPsdClamp) throw NonPsdError("generator: correlation matrix is not positive semidefinite");
  }
}

Tensor GenConfig::correlation() const {
  return correlation_matrix ? *correlation_matrix : build_correlation_matrix(t, *p);
}

void to_json(json& j, const GenConfig& c) {
  j = json{{"kind", "multitab-bench"}, {"t", c.t}, {"d", c.d}, {"degrees", c.degrees},
           {"noise_scales", c.noise_scales}, {"n", c.n}, {"seed", c.seed}};
  if (c.p) j["p"] = *c.p;
  if (c.correlation_matrix) {
    json rows = json::array();
    for (std::size_t i = 0; i < c.t; ++i) rows.push_back(column(c.correlation_matrix->transposed(), i));
    j["P"] = rows;
  }
}

GenConfig gen_config_from_json(const json& j, const std::string& where) {
  const data::JsonReader r(j, where);
  GenConfig c;
  c.seed = r.required<std::uint64_t>("seed");
  c.n = r.required<std::size_t>("n");
  c.d = r.optional<std::size_t>("d", 32);
  if (r.has("P")) {
    const auto rows = r.required<std::vector<std::vector<double>>>("P");
    const std::size_t t = rows.size();
    Tensor P(Shape{t, t});
    for (std::size_t i = 0; i < t; ++i) {
      if (rows[i].size() != t) r.fail("P", "correlation matrix must be square");
      for (std::size_t k = 0; k < t; ++k) P.at(i, k) = rows[i][k];
    }
    c.correlation_matrix = P;
    c.p.reset();
    c.t = r.optional<std::size_t>("t", t);
    if (r.has("p")) r.fail("p", "give either p or P, not both");
  } else {
    c.p = r.required<double>("p");
    c.t = r.required<std::size_t>("t");
  }
  c.degrees = r.optional<std::vector<unsigned>>("degrees", std::vector<unsigned>(c.t, 3));
  c.noise_scales = r.optional<std::vector<double>>("noise_scales", std::vector<double>(c.t, 0.01));
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError((where.empty() ? "/" : where) + ": " + e.what());
  }
  return c;
}

void LegacyGenConfig::validate() const {
  if (d < 2) throw ConfigError("legacy generator: d must be >= 2");
  if (!(p >= -1.0 && p <= 1.0)) throw ConfigError("legacy generator: p must lie in [-1, 1]");
  if (alphas.size() != betas.size()) throw ConfigError("legacy generator: alphas and betas need equal lengths");
  if (!(noise_std >= 0.0)) throw ConfigError("legacy generator: noise_std must be >= 0");
}

void to_json(json& j, const LegacyGenConfig& c) {
  j = json{{"kind", "mmoe-legacy"}, {"d", c.d},         {"p", c.p},       {"c", c.c},          {"alphas", c.alphas},
           {"betas", c.betas},      {"noise_std", c.noise_std}, {"n", c.n}, {"seed", c.seed}, {"t", 2}};
}

LegacyGenConfig legacy_config_from_json(const json& j, const std::string& where) {
  const data::JsonReader r(j, where);
  LegacyGenConfig c;
  c.seed = r.required<std::uint64_t>("seed");
  c.n = r.required<std::size_t>("n");
  c.d = r.optional<std::size_t>("d", 32);
  c.p = r.required<double>("p");
  c.c = r.optional<double>("c", 1.0);
  c.alphas = r.optional<std::vector<double>>("alphas", {});
  c.betas = r.optional<std::vector<double>>("betas", {});
  c.noise_std = r.optional<double>("noise_std", 0.1);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError((where.empty() ? "/" : where) + ": " + e.what());
  }
  return c;
}

// ---- generation ------------------------------------------------------------

Tensor build_correlation_matrix(std::size_t t, double p) {
  if (t < 2) throw ContractError("build_correlation_matrix: t must be >= 2");
  if (!(p >= 0.0 && p <= 1.0))
    throw ContractError("build_correlation_matrix: p must lie in [0, 1] for a PSD guarantee, got " + std::to_string(p));
  Tensor P(Shape{t, t}, p);
  for (std::size_t i = 0; i < t; ++i) P.at(i, i) = 1.0;
  return P;
}

WeightMatrix build_weight_matrix(const Tensor& correlation, std::size_t d, Rng& rng) {
  const std::size_t t = correlation.dim(0);
  if (d < t) throw InfeasibleError("build_weight_matrix: d = " + std::to_string(d) + " < t = " + std::to_string(t));
  const Tensor u = num::gram_schmidt(num::sample_normal(rng, Shape{t, d}), rng);
  const num::SymEigResult eig = num::sym_eig(correlation);

  std::vector<double> root(t);
  for (std::size_t k = 0; k < t; ++k) {
    const double lam = eig.eigenvalues[k];
    if (lam < -kPsdClamp)
      throw NonPsdError("build_weight_matrix: eigenvalue " + std::to_string(lam) + " is negative");
    root[k] = std::sqrt(std::max(lam, 0.0));
  }
  // W = Q diag(root) U, U holding the orthonormal vectors as rows.
  WeightMatrix wm{Tensor(Shape{t, d})};
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t k = 0; k < t; ++k) {
      const double coef = eig.eigenvectors.at(i, k) * root[k];
      for (std::size_t c = 0; c < d; ++c) wm.w.at(i, c) += coef * u.at(k, c);
    }
  return wm;
}

SyntheticDataset generate(const GenConfig& config) {
  config.validate();
  Rng rng(config.seed);
  SyntheticDataset ds;
  ds.config = config;
  ds.weights = build_weight_matrix(config.correlation(), config.d, rng);
  ds.features = num::sample_normal(rng, Shape{config.n, config.d});
  ds.labels = Tensor(Shape{config.n, config.t});
  for (std::size_t i = 0; i < config.t; ++i) {
    const std::vector<double> z = project(ds.features, ds.weights.w, i);
    const double sigma = config.noise_scales[i];
    for (std::size_t r = 0; r < config.n; ++r) {
      double power = z[r], y = 0.0;
      for (unsigned k = 1; k <= config.degrees[i]; ++k) {
        y += power;
        power *= z[r];
      }
      ds.labels.at(r, i) = y + sigma * rng.normal();
    }
  }
  return ds;
}

CorrelationReport correlation_report(const GenConfig& config, std::size_t repeats, bool include_self) {
  if (repeats < 2) throw ContractError("correlation_report: repeats must be >= 2");
  config.validate();
  CorrelationReport report;
  report.repeats = repeats;
  for (std::size_t i = 0; i < config.t; ++i)
    for (std::size_t j = include_self ? i : i + 1; j < config.t; ++j) report.pairs.push_back({i, j, 0.0, 0.0});

  std::vector<std::vector<double>> samples(report.pairs.size());
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    GenConfig c = config;
    c.seed = num::derive_seed(config.seed, rep);
    const SyntheticDataset ds = generate(c);
    std::vector<std::vector<double>> cols;
    for (std::size_t i = 0; i < c.t; ++i) cols.push_back(column(ds.labels, i));
    for (std::size_t k = 0; k < report.pairs.size(); ++k) {
      const auto [i, j, m, s] = report.pairs[k];
      try {
        samples[k].push_back(metrics::pearson(cols[i], cols[j]));
      } catch (const UndefinedMetricError&) {
        for (std::size_t q : {i, j}) {
          const auto& col = cols[q];
          bool constant = true;
          for (double v : col) constant = constant && v == col.front();
          if (constant)
            throw UndefinedMetricError("correlation_report: task " + std::to_string(q) +
                                       " has zero label variance; correlation is undefined");
        }
        throw;
      }
    }
  }
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < report.pairs.size(); ++k) {
    const auto& xs = samples[k];
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    report.pairs[k].mean = m;
    report.pairs[k].std = std::sqrt(v / static_cast<double>(xs.size() - 1));
    if (report.pairs[k].i != report.pairs[k].j) {
      total += m;
      ++counted;
    }
  }
  report.mean_over_pairs = counted ? total / static_cast<double>(counted) : 1.0;
  return report;
}

json to_json(const CorrelationReport& report) {
  json pairs = json::array();
  for (const auto& p : report.pairs) pairs.push_back({{"i", p.i}, {"j", p.j}, {"mean", p.mean}, {"std", p.std}});
  return {{"repeats", report.repeats}, {"pairs", pairs}, {"mean_over_pairs", report.mean_over_pairs}};
}

SyntheticDataset generate_legacy_mmoe(const LegacyGenConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const Tensor u = num::gram_schmidt(num::sample_normal(rng, Shape{2, config.d}), rng);
  SyntheticDataset ds;
  ds.config = config;
  ds.weights.w = Tensor(Shape{2, config.d});
  const double q = std::sqrt(1.0 - config.p * config.p);
  for (std::size_t k = 0; k < config.d; ++k) {
    ds.weights.w.at(0, k) = config.c * u.at(0, k);
    ds.weights.w.at(1, k) = config.c * (config.p * u.at(0, k) + q * u.at(1, k));
  }
  ds.features = num::sample_normal(rng, Shape{config.n, config.d});
  ds.labels = Tensor(Shape{config.n, 2});
  for (std::size_t task = 0; task < 2; ++task) {
    const std::vector<double> z = project(ds.features, ds.weights.w, task);
    for (std::size_t r = 0; r < config.n; ++r) {
      double y = z[r];
      for (std::size_t i = 0; i < config.m(); ++i) y += std::sin(config.alphas[i] * z[r] + config.betas[i]);
      ds.labels.at(r, task) = y + config.noise_std * rng.normal();
    }
  }
  return ds;
}

// ---- persistence -----------------------------------------------------------

data::Table to_table(const SyntheticDataset& ds) {
  data::Table table;
  table.schema = data::FeatureSchema::all_numeric(ds.features.dim(1));
  for (std::size_t i = 0; i < ds.labels.dim(1); ++i) table.tasks.push_back(data::TaskSpec::regression("y" + std::to_string(i)));
  table.features = ds.features;
  table.targets = ds.labels;
  json gen;
  std::visit([&](const auto& c) { gen = c; }, ds.config);
  table.meta["generator"] = gen;
  table.meta["generator_version"] = kGeneratorVersion;
  table.meta["seed"] = gen.at("seed");
  return table;
}

void save_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir) { data::write_table(to_table(ds), dir); }

SyntheticDataset load_dataset(const std::filesystem::path& dir) {
  data::Table table = data::read_table(dir);
  const std::string where = (dir / data::kSchemaFile).string();
  if (!table.meta.contains("generator")) throw FormatError(where + ": no generator echo; not a synthetic dataset");
  const json& gen = table.meta.at("generator");
  SyntheticDataset ds;
  try {
    if (gen.value("kind", "") == "mmoe-legacy")
      ds.config = legacy_config_from_json(gen, "/generator");
    else
      ds.config = gen_config_from_json(gen, "/generator");
  } catch (const ConfigError& e) {
    throw FormatError(where + ": " + e.what());
  }
  const std::size_t n = std::visit([](const auto& c) { return c.n; }, ds.config);
  if (n != table.rows())
    throw FormatError(where + ": generator.n = " + std::to_string(n) + " but " + std::to_string(table.rows()) +
                      " rows are stored");
  ds.features = std::move(table.features);
  ds.labels = std::move(table.targets);
  return ds;
}

}  // namespace multitab::bench
