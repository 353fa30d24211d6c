#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <variant>
#include <vector>

#include "json.hpp"
#include "multitab/data/table.hpp"
#include "multitab/numkit/random.hpp"
#include "multitab/numkit/tensor.hpp"

namespace multitab::bench {

inline constexpr const char* kGeneratorVersion = "multitab-benchgen/1";

/// Recipe for one synthetic multitask dataset. Exactly one of `p` (uniform
/// pairwise correlation) and `correlation_matrix` is set.
struct GenConfig {
  std::size_t t = 3;
  std::size_t d = 32;
  std::optional<double> p = 0.6;
  std::optional<num::Tensor> correlation_matrix;
  std::vector<unsigned> degrees{3, 3, 3};
  std::vector<double> noise_scales{0.01, 0.01, 0.01};
  std::size_t n = 10000;
  std::uint64_t seed = 0;

  /// Uniform-p config with the default degree 3 and noise 0.01 per task.
  static GenConfig uniform(std::size_t t, double p, std::size_t n, std::uint64_t seed);

  void validate() const;
  /// P, either built from p or the stored matrix.
  num::Tensor correlation() const;
};

void to_json(nlohmann::json& j, const GenConfig& c);
/// Throws ConfigError with JSON-pointer style paths.
GenConfig gen_config_from_json(const nlohmann::json& j, const std::string& where = "");

struct WeightMatrix {
  num::Tensor w;  // t x d, row i is task weight w_i
};

/// Two-task sinusoidal generator used by MMoE's synthetic benchmark.
struct LegacyGenConfig {
  std::size_t d = 32;
  double p = 0.5;
  double c = 1.0;
  std::vector<double> alphas;
  std::vector<double> betas;
  // Label noise standard deviation; 0.1 gives the reference variance 0.01.
  double noise_std = 0.1;
  std::size_t n = 10000;
  std::uint64_t seed = 0;

  std::size_t m() const { return alphas.size(); }
  void validate() const;
};

void to_json(nlohmann::json& j, const LegacyGenConfig& c);
LegacyGenConfig legacy_config_from_json(const nlohmann::json& j, const std::string& where = "");

struct SyntheticDataset {
  num::Tensor features;  // n x d
  num::Tensor labels;    // n x t
  // Generator echo: the correlated-polynomial recipe or the legacy two-task recipe.
  std::variant<GenConfig, LegacyGenConfig> config;
  WeightMatrix weights;
};

/// P_ii = 1, P_ij = p. Requires t >= 2 and 0 <= p <= 1.
num::Tensor build_correlation_matrix(std::size_t t, double p);

/// W = Q Lambda^{1/2} U^T: rows have unit norm and pairwise cosines P_ij.
WeightMatrix build_weight_matrix(const num::Tensor& correlation, std::size_t d, num::Rng& rng);

/// Features x ~ N(0, I_d); y_i = sum_{k=1..d_i} (w_i . x)^k + sigma_i * eps.
SyntheticDataset generate(const GenConfig& config);

struct PairCorrelation {
  std::size_t i = 0;
  std::size_t j = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over repeats
};

struct CorrelationReport {
  std::size_t repeats = 0;
  std::vector<PairCorrelation> pairs;
  double mean_over_pairs = 0.0;
};

/// Pearson correlation of every unordered task pair over `repeats` fresh
/// datasets, seeds derived from config.seed. `include_self` adds the (i, i)
/// diagonal pairs as a diagnostic.
CorrelationReport correlation_report(const GenConfig& config, std::size_t repeats, bool include_self = false);

nlohmann::json to_json(const CorrelationReport& report);

SyntheticDataset generate_legacy_mmoe(const LegacyGenConfig& config);

/// Dataset directory with data.csv + schema.json (generator echo included).
void save_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir);
SyntheticDataset load_dataset(const std::filesystem::path& dir);

/// View of a synthetic dataset as a regression table (all features numeric).
data::Table to_table(const SyntheticDataset& ds);

}  // namespace multitab::bench
