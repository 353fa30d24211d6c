#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "multitab/data/schema.hpp"
#include "multitab/numkit/random.hpp"
#include "multitab/numkit/tape.hpp"
#include "multitab/numkit/tensor.hpp"

namespace multitab::model {

enum class MaskScheme { None, FnotT, TnotT, Both };
enum class ModelKind { MultiTab, Stl, SharedBottom };

std::string to_string(MaskScheme m);
std::string to_string(ModelKind k);
MaskScheme mask_scheme_from_string(const std::string& s);
ModelKind model_kind_from_string(const std::string& s);

struct ModelConfig {
  ModelKind kind = ModelKind::MultiTab;
  std::size_t e = 16;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t ffn_hidden = 0;  // 0 means 2e
  MaskScheme mask = MaskScheme::TnotT;
  bool use_rope = false;
  // false replaces the inter-sample sublayer with the identity (diagnostic).
  bool inter_sample = true;
  // One task token shared by every task head.
  bool single_token = false;
  double attn_dropout = 0.0;
  double ffn_dropout = 0.0;
  std::size_t head_hidden = 16;
  // MLP baselines.
  std::vector<std::size_t> trunk{64, 32};
  std::vector<std::size_t> tower{16};  // shared-bottom per-task hidden widths

  std::size_t ffn_width() const { return ffn_hidden ? ffn_hidden : 2 * e; }
  /// Number of task tokens for t tasks.
  std::size_t task_tokens(std::size_t t) const { return single_token ? 1 : t; }
  /// Throws ConfigError on broken dimensions for d features and t tasks.
  void validate(std::size_t d, std::size_t t) const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& where = "");

/// Additive (d+t) x (d+t) mask, 0 where allowed and -inf where blocked,
/// rows are queries and columns keys.
num::Tensor expand_mask(MaskScheme scheme, std::size_t d, std::size_t t);

/// Hands out tape leaves for named parameters. With `track` off the values
/// enter the tape as constants and no gradient is produced.
class ParamBinder {
 public:
  ParamBinder(num::Tape& tape, const num::ParamStore& store, bool track = true)
      : tape_(&tape), store_(&store), track_(track) {}
  num::Var operator()(const std::string& name);
  num::Tape& tape() const { return *tape_; }

 private:
  num::Tape* tape_;
  const num::ParamStore* store_;
  bool track_;
  std::map<std::string, num::Var> bound_;
};

/// Dropout source; inactive unless an rng is attached.
struct ForwardOptions {
  num::Rng* rng = nullptr;
  // Unseen categories raise SchemaError instead of mapping to the OOV row.
  bool training = false;
};

/// Feature tokens [n*d x e], row s*d + j for sample s and column j.
num::Var embed(ParamBinder& p, const std::string& prefix, const data::FeatureSchema& schema,
               const num::Tensor& features, bool training);

/// Masked multi-head self-attention over the `tokens` rows of each sample.
/// x is [n*tokens x e]; output has the same shape.
num::Var inter_feature_attention(ParamBinder& p, const std::string& prefix, const num::Var& x, std::size_t tokens,
                                 std::size_t heads, const num::Tensor* mask);

/// Attention across samples with each sample flattened to one row of width
/// tokens*e. Rotary encoding uses the row index within the batch.
num::Var inter_sample_attention(ParamBinder& p, const std::string& prefix, const num::Var& x, std::size_t tokens,
                                std::size_t heads, bool use_rope);

/// Post-softmax inter-feature weights [n x heads x tokens x tokens].
num::Tensor inter_feature_weights(const num::ParamStore& params, const std::string& prefix, const num::Tensor& x,
                                  std::size_t tokens, std::size_t heads, const num::Tensor* mask);

num::Var encoder_block(ParamBinder& p, const std::string& prefix, const num::Var& x, std::size_t tokens,
                       const ModelConfig& config, const num::Tensor* mask, const ForwardOptions& opts);

/// A model together with the schema and tasks it was built for.
struct Model {
  ModelConfig config;
  data::FeatureSchema schema;
  std::vector<data::TaskSpec> tasks;
  num::ParamStore params;

  /// Fan-in uniform weights, zero biases, unit layer-norm gains, task
  /// tokens N(0, 0.02^2).
  static Model create(const ModelConfig& config, const data::FeatureSchema& schema,
                      const std::vector<data::TaskSpec>& tasks, std::uint64_t seed);

  /// One prediction var per task: [n x output_dim].
  std::vector<num::Var> forward(ParamBinder& p, const num::Tensor& features, const ForwardOptions& opts = {}) const;
  std::vector<num::Var> forward(num::Tape& tape, const num::Tensor& features, const ForwardOptions& opts = {}) const;

  /// Gradient-free predictions over contiguous batches of `batch_size` rows;
  /// each batch is its own inter-sample context.
  std::vector<num::Tensor> predict(const num::Tensor& features, std::size_t batch_size) const;

  /// Clipping group of a parameter: per task for STL, one group otherwise.
  std::string param_group(const std::string& name) const;

  std::size_t parameter_count() const;
};

/// Gradient-check point: `params` with N(0, scale^2) added to every entry.
/// Freshly initialized task tokens sit where the first layer norm is sharply
/// curved, which swamps central differences with truncation error.
num::ParamStore jitter_params(const num::ParamStore& params, double scale, std::uint64_t seed);
inline constexpr double kGradCheckJitter = 0.1;

/// Manifest key under which model-level fields are stored in a checkpoint.
inline constexpr const char* kCheckpointFormat = "multitab-checkpoint";

/// Binary container: a magic line, an 8-byte little-endian manifest length,
/// the JSON manifest, then raw doubles for every tensor in manifest order.
void write_container(const std::string& path, const nlohmann::json& header, const num::ParamStore& tensors);
std::pair<nlohmann::json, num::ParamStore> read_container(const std::string& path);

/// Model checkpoints; `extra` tensors and `header_extra` fields ride along
/// (optimizer state, epoch stamp).
void save_model(const Model& model, const std::string& path, const nlohmann::json& header_extra = nlohmann::json::object(),
                const num::ParamStore& extra = {});
struct LoadedModel {
  Model model;
  nlohmann::json header;
  num::ParamStore extra;
};
LoadedModel load_model(const std::string& path);

/// 64-bit FNV-1a over names, shapes and payload bytes.
std::uint64_t params_hash(const num::ParamStore& params);

}  // namespace multitab::model
