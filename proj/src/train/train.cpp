#include "multitab/train/train.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include "multitab/data/json_reader.hpp"
#include "multitab/numkit/error.hpp"
#include "multitab/numkit/losses.hpp"
#include "multitab/numkit/ops.hpp"

namespace multitab::train {

using nlohmann::json;
using num::Shape;
using num::Tensor;
using num::Var;

namespace {

constexpr std::uint64_t kShuffleStream = 0x5eed0001;
constexpr std::uint64_t kDropoutStream = 0x5eed0002;

Tensor gather(const Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t w = x.dim(1);
  Tensor out(Shape{rows.size(), w});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * w), w,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * w));
  return out;
}

Tensor column(const Tensor& x, std::size_t c) {
  Tensor out(Shape{x.dim(0)});
  for (std::size_t r = 0; r < x.dim(0); ++r) out[r] = x.at(r, c);
  return out;
}

void fit_column(const Tensor& x, std::size_t c, const std::vector<std::size_t>& rows, double& mean, double& scale) {
  double m = 0.0;
  for (std::size_t r : rows) m += x.at(r, c);
  m /= static_cast<double>(rows.size());
  double v = 0.0;
  for (std::size_t r : rows) v += (x.at(r, c) - m) * (x.at(r, c) - m);
  const double sd = std::sqrt(v / static_cast<double>(rows.size()));
  mean = m;
  scale = sd > 0.0 ? sd : 1.0;
}

Tensor affine(const Tensor& raw, const std::vector<double>& mean, const std::vector<double>& scale) {
  Tensor out = raw;
  const std::size_t w = raw.dim(1);
  for (std::size_t r = 0; r < raw.dim(0); ++r)
    for (std::size_t c = 0; c < w; ++c) out.at(r, c) = (raw.at(r, c) - mean[c]) / scale[c];
  return out;
}

// Metric-space predictions for one task from raw head outputs.
Tensor to_metric_space(const Tensor& out, const data::TaskSpec& task, const Standardizer& stats, std::size_t i) {
  Tensor res = out;
  switch (task.kind) {
    case data::TaskKind::Binary:
      for (double& v : res.data()) v = 1.0 / (1.0 + std::exp(-v));
      break;
    case data::TaskKind::Multiclass:
      res = num::softmax_rows(out);
      break;
    case data::TaskKind::Regression:
      for (double& v : res.data()) v = stats.target_to_raw(i, v);
      break;
  }
  return res;
}

double metric_value(const Tensor& pred, const Tensor& y_raw, std::size_t i, const data::TaskSpec& task,
                    data::MetricKind metric) {
  const Tensor target = column(y_raw, i);
  try {
    if (task.kind == data::TaskKind::Multiclass) return metrics::auc_multiclass(pred, target.data());
    const Tensor p = pred.rank() == 2 ? column(pred, 0) : pred;
    switch (metric) {
      case data::MetricKind::Auc: return metrics::auc_binary(p.data(), target.data());
      case data::MetricKind::ExplainedVariance: return metrics::explained_variance(p.data(), target.data());
      case data::MetricKind::Mse: return metrics::mse(p.data(), target.data());
    }
  } catch (const UndefinedMetricError& e) {
    throw UndefinedMetricError("task '" + task.name + "': " + e.what());
  }
  return 0.0;
}

data::MetricKind monitor_kind(const data::TaskSpec& task) {
  return task.kind == data::TaskKind::Regression ? data::MetricKind::ExplainedVariance : data::MetricKind::Auc;
}

std::vector<double> monitor_values(const model::Model& model, const Split& split, const Standardizer& stats,
                                   std::size_t batch_size) {
  const auto preds = predict_raw(model, split, stats, batch_size);
  std::vector<double> out;
  for (std::size_t i = 0; i < model.tasks.size(); ++i)
    out.push_back(metric_value(preds[i], split.y_raw, i, model.tasks[i], monitor_kind(model.tasks[i])));
  return out;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

// ---- config ----------------------------------------------------------------

void TrainConfig::validate(std::size_t tasks, bool inter_sample) const {
  auto fail = [](const std::string& m) { throw ConfigError("train: " + m); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (patience < 1) fail("patience must be >= 1");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (batch_size < 1 || eval_batch_size < 1) fail("batch sizes must be >= 1");
  if (batch_size < 2 && inter_sample) fail("batch_size must be >= 2 while inter-sample attention is on");
  if (!task_loss_weights.empty() && task_loss_weights.size() != tasks)
    fail("task_loss_weights has " + std::to_string(task_loss_weights.size()) + " entries for " +
         std::to_string(tasks) + " tasks");
  for (double w : task_loss_weights)
    if (!(w >= 0.0)) fail("task_loss_weights must be >= 0");
  if (!(clip_norm >= 0.0)) fail("clip_norm must be >= 0");
  double total = 0.0;
  for (double r : split_ratios) {
    if (!(r > 0.0)) fail("split ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) fail("split ratios must sum to 1");
}

std::vector<double> TrainConfig::loss_weights(std::size_t tasks) const {
  return task_loss_weights.empty() ? std::vector<double>(tasks, 1.0) : task_loss_weights;
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate},
           {"weight_decay", c.weight_decay},
           {"batch_size", c.batch_size},
           {"max_epochs", c.max_epochs},
           {"patience", c.patience},
           {"seed", c.seed},
           {"task_loss_weights", c.task_loss_weights},
           {"standardize_numeric", c.standardize_numeric},
           {"eval_batch_size", c.eval_batch_size},
           {"clip_norm", c.clip_norm},
           {"split_ratios", c.split_ratios}};
}

TrainConfig train_config_from_json(const json& j, const std::string& where) {
  const data::JsonReader r(j, where);
  TrainConfig c;
  c.seed = r.required<std::uint64_t>("seed");
  c.learning_rate = r.optional<double>("learning_rate", c.learning_rate);
  c.weight_decay = r.optional<double>("weight_decay", c.weight_decay);
  c.batch_size = r.optional<std::size_t>("batch_size", c.batch_size);
  c.max_epochs = r.optional<std::size_t>("max_epochs", c.max_epochs);
  c.patience = r.optional<std::size_t>("patience", c.patience);
  c.task_loss_weights = r.optional<std::vector<double>>("task_loss_weights", {});
  c.standardize_numeric = r.optional<bool>("standardize_numeric", c.standardize_numeric);
  c.eval_batch_size = r.optional<std::size_t>("eval_batch_size", c.eval_batch_size);
  c.clip_norm = r.optional<double>("clip_norm", c.clip_norm);
  c.split_ratios = r.optional<std::array<double, 3>>("split_ratios", c.split_ratios);
  return c;
}

// ---- data pipeline ---------------------------------------------------------

Tensor Standardizer::features(const Tensor& raw) const { return affine(raw, feature_mean, feature_scale); }
Tensor Standardizer::targets(const Tensor& raw) const { return affine(raw, target_mean, target_scale); }

void to_json(json& j, const Standardizer& s) {
  j = json{{"feature_mean", s.feature_mean},
           {"feature_scale", s.feature_scale},
           {"target_mean", s.target_mean},
           {"target_scale", s.target_scale}};
}

SplitDataset make_splits(const data::Table& table, const std::array<double, 3>& ratios, std::uint64_t seed,
                         bool standardize) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ContractError("make_splits: ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("make_splits: ratios must sum to 1");
  table.validate();
  const std::size_t n = table.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  num::Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[0]));
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[1]));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw ContractError("make_splits: " + std::to_string(n) + " rows leave an empty split");

  SplitDataset out;
  out.schema = table.schema;
  out.tasks = table.tasks;
  out.train.rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                      order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());

  const std::size_t d = table.schema.size(), t = table.tasks.size();
  Standardizer& s = out.stats;
  s.feature_mean.assign(d, 0.0);
  s.feature_scale.assign(d, 1.0);
  s.target_mean.assign(t, 0.0);
  s.target_scale.assign(t, 1.0);
  if (standardize)
    for (std::size_t j = 0; j < d; ++j)
      if (table.schema.columns[j].kind == data::FeatureKind::Numeric)
        fit_column(table.features, j, out.train.rows, s.feature_mean[j], s.feature_scale[j]);
  for (std::size_t i = 0; i < t; ++i)
    if (table.tasks[i].kind == data::TaskKind::Regression)
      fit_column(table.targets, i, out.train.rows, s.target_mean[i], s.target_scale[i]);

  for (Split* split : {&out.train, &out.val, &out.test}) {
    split->x = s.features(gather(table.features, split->rows));
    split->y_raw = gather(table.targets, split->rows);
    split->y = s.targets(split->y_raw);
  }
  return out;
}

// ---- losses / optimizer ------------------------------------------------------

Var task_loss(const Var& pred, const Tensor& target, const data::TaskSpec& task) {
  switch (task.kind) {
    case data::TaskKind::Binary: return num::bce_with_logits(pred, target);
    case data::TaskKind::Multiclass: return num::softmax_cross_entropy(pred, target);
    case data::TaskKind::Regression: return num::mse_loss(pred, target);
  }
  throw ContractError("task_loss: unknown task kind");
}

Var aggregate_losses(const std::vector<Var>& losses, const std::vector<double>& weights) {
  if (losses.size() != weights.size())
    throw ContractError("aggregate_losses: " + std::to_string(losses.size()) + " losses vs " +
                        std::to_string(weights.size()) + " weights");
  for (double w : weights)
    if (w < 0.0) throw ContractError("aggregate_losses: negative task weight " + std::to_string(w));
  return num::weighted_sum(losses, weights);
}

void adam_step(num::ParamStore& params, const num::GradMap& grads, AdamState& state, const AdamOptions& o) {
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const auto g = grads.find(name);
    if (g == grads.end()) continue;
    if (g->second.shape() != p.shape()) throw DimensionError("adam_step: gradient shape differs for '" + name + "'");
    auto [mi, _m] = state.m.try_emplace(name, p.shape());
    auto [vi, _v] = state.v.try_emplace(name, p.shape());
    auto pd = p.data();
    auto gd = g->second.data();
    auto md = mi->second.data();
    auto vd = vi->second.data();
    for (std::size_t k = 0; k < pd.size(); ++k) {
      const double grad = gd[k] + o.weight_decay * pd[k];
      md[k] = o.beta1 * md[k] + (1.0 - o.beta1) * grad;
      vd[k] = o.beta2 * vd[k] + (1.0 - o.beta2) * grad * grad;
      pd[k] -= o.lr * (md[k] / c1) / (std::sqrt(vd[k] / c2) + o.eps);
    }
  }
}

std::size_t clip_gradients(num::GradMap& grads, const std::function<std::string(const std::string&)>& group,
                           double max_norm) {
  if (max_norm <= 0.0) return 0;
  std::map<std::string, double> sq;
  std::map<std::string, std::string> owner;
  for (const auto& [name, g] : grads) {
    double s = 0.0;
    for (double v : g.data()) s += v * v;
    const std::string key = group(name);
    sq[key] += s;
    owner[name] = key;
  }
  std::size_t clipped = 0;
  for (const auto& [key, s] : sq) {
    const double norm = std::sqrt(s);
    if (!std::isfinite(norm)) throw NumericFailure("gradient norm of group '" + key + "' is not finite");
    if (norm <= max_norm) continue;
    ++clipped;
    const double f = max_norm / norm;
    for (auto& [name, g] : grads)
      if (owner[name] == key)
        for (double& v : g.data()) v *= f;
  }
  return clipped;
}

// ---- evaluation --------------------------------------------------------------

std::vector<Tensor> predict_raw(const model::Model& model, const Split& split, const Standardizer& stats,
                                std::size_t batch_size) {
  const auto out = model.predict(split.x, batch_size);
  std::vector<Tensor> res;
  for (std::size_t i = 0; i < out.size(); ++i) res.push_back(to_metric_space(out[i], model.tasks[i], stats, i));
  return res;
}

double monitor_metric(const Tensor& pred_raw, const Tensor& y_raw, const data::TaskSpec& task) {
  Tensor y = y_raw.rank() == 1 ? y_raw.reshaped({y_raw.size(), 1}) : y_raw;
  return metric_value(pred_raw, y, 0, task, monitor_kind(task));
}

std::vector<metrics::TaskResult> score_predictions(const std::vector<Tensor>& preds_raw, const Tensor& y_raw,
                                                   const std::vector<data::TaskSpec>& tasks) {
  if (preds_raw.size() != tasks.size()) throw ContractError("score_predictions: one prediction per task expected");
  std::vector<metrics::TaskResult> out;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    out.push_back({tasks[i].name, tasks[i].metric, metric_value(preds_raw[i], y_raw, i, tasks[i], tasks[i].metric),
                   tasks[i].lower_is_better()});
  return out;
}

std::vector<metrics::TaskResult> evaluate(const model::Model& model, const Split& split, const Standardizer& stats,
                                          std::size_t eval_batch_size) {
  if (split.size() == 0) throw ContractError("evaluate: empty split");
  return score_predictions(predict_raw(model, split, stats, eval_batch_size), split.y_raw, model.tasks);
}

// ---- fit -------------------------------------------------------------------

json to_json(const EpochRecord& r, const std::vector<data::TaskSpec>& tasks) {
  json loss = json::object(), metric = json::object();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    loss[tasks[i].name] = r.train_loss[i];
    if (i < r.val_metric.size()) metric[tasks[i].name] = r.val_metric[i];
  }
  return json{{"epoch", r.epoch},     {"train_loss", loss},   {"val_metric", metric},
              {"monitor", r.monitor}, {"wall_ms", r.wall_ms}, {"clipped", r.clipped}};
}

FitResult fit(const model::Model& init, const SplitDataset& data, const TrainConfig& config, const FitHooks& hooks) {
  const auto& tasks = init.tasks;
  const bool mixes_samples = init.config.kind == model::ModelKind::MultiTab && init.config.inter_sample;
  config.validate(tasks.size(), mixes_samples);
  if (data.train.size() == 0 || data.val.size() == 0) throw ContractError("fit: empty train or validation split");
  if (data.tasks != tasks) throw ContractError("fit: model tasks differ from the dataset tasks");
  const std::vector<double> weights = config.loss_weights(tasks.size());
  const AdamOptions adam{config.learning_rate, config.weight_decay};
  const auto group = [&init](const std::string& name) { return init.param_group(name); };

  std::vector<Tensor> targets;
  for (std::size_t i = 0; i < tasks.size(); ++i) targets.push_back(column(data.train.y, i));

  FitResult result{init, {}, 0, -std::numeric_limits<double>::infinity(), {}};
  model::Model current = init;
  AdamState state;
  std::size_t stale = 0;
  const std::size_t n = data.train.size();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    num::Rng shuffle(num::derive_seed(config.seed ^ kShuffleStream, epoch));
    shuffle.shuffle(order.begin(), order.end());
    num::Rng dropout(num::derive_seed(config.seed ^ kDropoutStream, epoch));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss.assign(tasks.size(), 0.0);
    for (std::size_t begin = 0; begin < n;) {
      std::size_t end = std::min(n, begin + config.batch_size);
      if (n - end < 2 && mixes_samples) end = n;  // no singleton tail batch
      const std::vector<std::size_t> local(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
      const Tensor xb = gather(data.train.x, local);

      num::Tape tape;
      const auto preds = current.forward(tape, xb, {&dropout, true});
      std::vector<Var> losses;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        Tensor yb(Shape{local.size()});
        for (std::size_t k = 0; k < local.size(); ++k) yb[k] = targets[i][local[k]];
        try {
          losses.push_back(task_loss(preds[i], yb, tasks[i]));
        } catch (const NumericFailure& e) {
          throw NumericFailure("epoch " + std::to_string(epoch) + ", rows " + std::to_string(begin) + ".." +
                               std::to_string(end) + ", task '" + tasks[i].name + "': " + e.what());
        }
        rec.train_loss[i] += losses.back().value().item() * static_cast<double>(local.size());
      }
      const Var total = aggregate_losses(losses, weights);
      num::GradMap grads = tape.backward(total);
      rec.clipped += clip_gradients(grads, group, config.clip_norm);
      adam_step(current.params, grads, state, adam);
      begin = end;
    }
    for (double& l : rec.train_loss) l /= static_cast<double>(n);

    if (hooks.monitor_override) {
      rec.monitor = hooks.monitor_override(epoch);
    } else {
      rec.val_metric = monitor_values(current, data.val, data.stats, config.eval_batch_size);
      rec.monitor = mean_of(rec.val_metric);
    }
    if (!std::isfinite(rec.monitor))
      throw NumericFailure("epoch " + std::to_string(epoch) + ": validation monitor is not finite");
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    if (hooks.log) *hooks.log << to_json(rec, tasks).dump() << '\n' << std::flush;
    if (hooks.on_epoch) hooks.on_epoch(current, epoch);

    if (rec.monitor > result.best_monitor) {
      result.best = current;
      result.best_optimizer = state;
      result.best_epoch = epoch;
      result.best_monitor = rec.monitor;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

void save_checkpoint(const std::string& path, const model::Model& model, const AdamState& optimizer, std::size_t epoch,
                     const json& extra) {
  json header = extra;
  header["epoch"] = epoch;
  header["adam_step"] = optimizer.step;
  num::ParamStore moments;
  for (const auto& [name, t] : optimizer.m) moments.emplace("adam_m/" + name, t);
  for (const auto& [name, t] : optimizer.v) moments.emplace("adam_v/" + name, t);
  model::save_model(model, path, header, moments);
}

}  // namespace multitab::train
