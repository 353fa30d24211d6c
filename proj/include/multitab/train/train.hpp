#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "multitab/data/table.hpp"
#include "multitab/metrics/metrics.hpp"
#include "multitab/model/model.hpp"
#include "multitab/numkit/tape.hpp"

namespace multitab::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  std::vector<double> task_loss_weights;  // empty means all 1
  bool standardize_numeric = true;
  std::size_t eval_batch_size = 256;
  // Global-norm clip per parameter group; 0 disables.
  double clip_norm = 10.0;
  std::array<double, 3> split_ratios{0.7, 0.15, 0.15};

  /// Throws ConfigError. `inter_sample` tells whether a batch of one is usable.
  void validate(std::size_t tasks, bool inter_sample) const;
  std::vector<double> loss_weights(std::size_t tasks) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& where = "");

/// Per-column affine maps fitted on the training rows. Categorical columns
/// and classification targets keep mean 0 and scale 1.
struct Standardizer {
  std::vector<double> feature_mean, feature_scale;
  std::vector<double> target_mean, target_scale;

  num::Tensor features(const num::Tensor& raw) const;
  num::Tensor targets(const num::Tensor& raw) const;
  /// Maps a regression prediction column back to the original target scale.
  double target_to_raw(std::size_t task, double v) const { return v * target_scale[task] + target_mean[task]; }
};

void to_json(nlohmann::json& j, const Standardizer& s);

struct Split {
  std::vector<std::size_t> rows;  // indices into the source table
  num::Tensor x;                  // standardized features
  num::Tensor y;                  // standardized targets (regression), labels otherwise
  num::Tensor y_raw;              // targets on the original scale
  std::size_t size() const { return rows.size(); }
};

struct SplitDataset {
  data::FeatureSchema schema;
  std::vector<data::TaskSpec> tasks;
  Split train, val, test;
  Standardizer stats;
};

/// Seeded shuffle, contiguous slicing, statistics from the train slice only.
SplitDataset make_splits(const data::Table& table, const std::array<double, 3>& ratios, std::uint64_t seed,
                         bool standardize = true);

/// Mean loss of one task: BCE from logits, softmax cross-entropy, or MSE.
num::Var task_loss(const num::Var& pred, const num::Tensor& target, const data::TaskSpec& task);

/// Weighted sum; a negative weight raises ContractError.
num::Var aggregate_losses(const std::vector<num::Var>& losses, const std::vector<double>& weights);

struct AdamState {
  num::ParamStore m, v;
  std::size_t step = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Classic Adam with bias correction, weight decay added to the gradient.
void adam_step(num::ParamStore& params, const num::GradMap& grads, AdamState& state, const AdamOptions& opts);

/// Rescales each group of `grads` whose global norm exceeds `max_norm`.
/// Returns the number of groups that were clipped.
std::size_t clip_gradients(num::GradMap& grads, const std::function<std::string(const std::string&)>& group,
                           double max_norm);

/// Monitor metric of a task: AUC for classification, EV for regression.
double monitor_metric(const num::Tensor& pred_raw, const num::Tensor& y_raw, const data::TaskSpec& task);

/// Predictions in the metric's space: probabilities for classification,
/// original-scale values for regression.
std::vector<num::Tensor> predict_raw(const model::Model& model, const Split& split, const Standardizer& stats,
                                     std::size_t batch_size);

/// Task metrics for predictions already on the raw scale (also used to inject
/// oracle labels as predictions).
std::vector<metrics::TaskResult> score_predictions(const std::vector<num::Tensor>& preds_raw, const num::Tensor& y_raw,
                                                   const std::vector<data::TaskSpec>& tasks);

struct EpochRecord {
  std::size_t epoch = 0;
  std::vector<double> train_loss;  // per task, mean over the epoch
  std::vector<double> val_metric;  // per task, monitor metric
  double monitor = 0.0;
  double wall_ms = 0.0;
  std::size_t clipped = 0;
};

nlohmann::json to_json(const EpochRecord& r, const std::vector<data::TaskSpec>& tasks);

struct FitResult {
  model::Model best;
  AdamState best_optimizer;
  std::size_t best_epoch = 0;
  double best_monitor = 0.0;
  std::vector<EpochRecord> log;
};

struct FitHooks {
  // Receives one JSON line per epoch.
  std::ostream* log = nullptr;
  // Called after every epoch with the current parameters.
  std::function<void(const model::Model&, std::size_t epoch)> on_epoch;
  // Replaces the validation pass (testing early stopping mechanics).
  std::function<double(std::size_t epoch)> monitor_override;
};

/// Epoch loop with per-epoch seeded shuffles, validation after every epoch,
/// best-monitor checkpointing and patience-based early stopping.
FitResult fit(const model::Model& init, const SplitDataset& data, const TrainConfig& config, const FitHooks& hooks = {});

/// Deterministic test pass; metrics follow each TaskSpec.
std::vector<metrics::TaskResult> evaluate(const model::Model& model, const Split& split, const Standardizer& stats,
                                          std::size_t eval_batch_size);

/// Training checkpoint: model container plus Adam moments and the epoch stamp.
void save_checkpoint(const std::string& path, const model::Model& model, const AdamState& optimizer, std::size_t epoch,
                     const nlohmann::json& extra = nlohmann::json::object());

}  // namespace multitab::train
