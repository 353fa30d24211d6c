#include "multitab/model/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "multitab/data/json_reader.hpp"
#include "multitab/data/table.hpp"
#include "multitab/numkit/attention.hpp"
#include "multitab/numkit/error.hpp"
#include "multitab/numkit/ops.hpp"

namespace multitab::model {

using nlohmann::json;
using num::ParamStore;
using num::Shape;
using num::Tape;
using num::Tensor;
using num::Var;

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kTaskTokenStd = 0.02;
constexpr const char* kMagic = "MULTITAB-CKPT 1\n";

std::string idx(const char* stem, std::size_t i) { return stem + std::to_string(i); }

// ---- parameter declarations ---------------------------------------------

enum class Init { FanIn, Zero, One, TaskToken };

struct Decl {
  std::string name;
  Shape shape;
  Init init;
  std::size_t fan_in = 1;
};

void declare_embed(std::vector<Decl>& out, const std::string& prefix, const data::FeatureSchema& schema,
                   std::size_t e) {
  const std::size_t cn = schema.numeric_count();
  if (cn > 0) {
    out.push_back({prefix + "embed/num_w", {cn, e}, Init::FanIn, 1});
    out.push_back({prefix + "embed/num_b", {cn, e}, Init::Zero});
  }
  for (std::size_t j = 0; j < schema.size(); ++j) {
    const auto& col = schema.columns[j];
    if (col.kind == data::FeatureKind::Categorical)
      out.push_back({prefix + idx("embed/cat_", j), {col.cardinality + 1, e}, Init::FanIn, 1});
  }
}

void declare_linear(std::vector<Decl>& out, const std::string& prefix, std::size_t in, std::size_t width) {
  out.push_back({prefix + "/w", {in, width}, Init::FanIn, in});
  out.push_back({prefix + "/b", {width}, Init::Zero});
}

void declare_layernorm(std::vector<Decl>& out, const std::string& prefix, std::size_t e) {
  out.push_back({prefix + "/g", {e}, Init::One});
  out.push_back({prefix + "/b", {e}, Init::Zero});
}

void declare_attention(std::vector<Decl>& out, const std::string& prefix, std::size_t width) {
  for (const char* m : {"/wq", "/wk", "/wv", "/wo"}) out.push_back({prefix + m, {width, width}, Init::FanIn, width});
}

void declare_ffn(std::vector<Decl>& out, const std::string& prefix, std::size_t e, std::size_t hidden) {
  declare_linear(out, prefix + "/l1", e, hidden);
  declare_linear(out, prefix + "/l2", hidden, e);
}

// Returns the input width after the stack.
std::size_t declare_mlp(std::vector<Decl>& out, const std::string& prefix, std::size_t in,
                        const std::vector<std::size_t>& widths) {
  for (std::size_t k = 0; k < widths.size(); ++k) {
    declare_linear(out, prefix + std::to_string(k), in, widths[k]);
    in = widths[k];
  }
  return in;
}

std::vector<Decl> declarations(const ModelConfig& c, const data::FeatureSchema& schema,
                               const std::vector<data::TaskSpec>& tasks) {
  std::vector<Decl> out;
  const std::size_t d = schema.size(), e = c.e;
  switch (c.kind) {
    case ModelKind::MultiTab: {
      const std::size_t tokens = d + c.task_tokens(tasks.size());
      declare_embed(out, "", schema, e);
      out.push_back({"task_tokens", {c.task_tokens(tasks.size()), e}, Init::TaskToken});
      for (std::size_t b = 0; b < c.blocks; ++b) {
        const std::string p = idx("block", b);
        declare_layernorm(out, p + "/ln1", e);
        declare_attention(out, p + "/if", e);
        declare_layernorm(out, p + "/ln2", e);
        declare_ffn(out, p + "/ffn1", e, c.ffn_width());
        if (c.inter_sample) {
          declare_layernorm(out, p + "/ln3", e);
          declare_attention(out, p + "/is", tokens * e);
        }
        declare_layernorm(out, p + "/ln4", e);
        declare_ffn(out, p + "/ffn2", e, c.ffn_width());
      }
      declare_layernorm(out, "final_ln", e);
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        declare_linear(out, idx("head", i) + "/l1", e, c.head_hidden);
        declare_linear(out, idx("head", i) + "/l2", c.head_hidden, tasks[i].output_dim());
      }
      break;
    }
    case ModelKind::Stl:
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        const std::string p = idx("task", i) + "/";
        declare_embed(out, p, schema, e);
        const std::size_t w = declare_mlp(out, p + "trunk", d * e, c.trunk);
        declare_linear(out, p + "out", w, tasks[i].output_dim());
      }
      break;
    case ModelKind::SharedBottom: {
      declare_embed(out, "", schema, e);
      const std::size_t w = declare_mlp(out, "trunk", d * e, c.trunk);
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        const std::string p = idx("head", i);
        const std::size_t tw = declare_mlp(out, p + "/tower", w, c.tower);
        declare_linear(out, p + "/out", tw, tasks[i].output_dim());
      }
      break;
    }
  }
  return out;
}

// ---- forward helpers -------------------------------------------------------

Var linear(ParamBinder& p, const std::string& prefix, const Var& x) {
  return num::add_bias(num::matmul(x, p(prefix + "/w")), p(prefix + "/b"));
}

Var layer_norm(ParamBinder& p, const std::string& prefix, const Var& x) {
  return num::layernorm(x, p(prefix + "/g"), p(prefix + "/b"), kLayerNormEps);
}

Var maybe_dropout(const Var& x, double rate, const ForwardOptions& opts) {
  return opts.rng && rate > 0.0 ? num::dropout(x, rate, *opts.rng) : x;
}

Var ffn(ParamBinder& p, const std::string& prefix, const Var& x, const ForwardOptions& opts, double rate) {
  const Var h = maybe_dropout(num::gelu(linear(p, prefix + "/l1", x)), rate, opts);
  return linear(p, prefix + "/l2", h);
}

Var mlp(ParamBinder& p, const std::string& prefix, Var h, std::size_t depth) {
  for (std::size_t k = 0; k < depth; ++k) h = num::gelu(linear(p, prefix + std::to_string(k), h));
  return h;
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t w = x.dim(1);
  Tensor out(Shape{count, w});
  std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(start * w), count * w, out.data().begin());
  return out;
}

Tensor project(const Tensor& x, const Tensor& w) { return num::matmul(x, w); }

}  // namespace

// ---- enums / config ----------------------------------------------------------

std::string to_string(MaskScheme m) {
  switch (m) {
    case MaskScheme::None: return "none";
    case MaskScheme::FnotT: return "FnotT";
    case MaskScheme::TnotT: return "TnotT";
    case MaskScheme::Both: return "both";
  }
  return "?";
}

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::MultiTab: return "multitab";
    case ModelKind::Stl: return "stl";
    case ModelKind::SharedBottom: return "shared_bottom";
  }
  return "?";
}

MaskScheme mask_scheme_from_string(const std::string& s) {
  for (MaskScheme m : {MaskScheme::None, MaskScheme::FnotT, MaskScheme::TnotT, MaskScheme::Both})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown mask scheme '" + s + "' (expected none, FnotT, TnotT or both)");
}

ModelKind model_kind_from_string(const std::string& s) {
  for (ModelKind k : {ModelKind::MultiTab, ModelKind::Stl, ModelKind::SharedBottom})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown model kind '" + s + "' (expected multitab, stl or shared_bottom)");
}

void ModelConfig::validate(std::size_t d, std::size_t t) const {
  auto fail = [](const std::string& m) { throw ConfigError("model: " + m); };
  if (d < 1 || t < 1) fail("need at least one feature and one task");
  if (e < 1) fail("e must be >= 1");
  if (!(attn_dropout >= 0.0 && attn_dropout < 1.0) || !(ffn_dropout >= 0.0 && ffn_dropout < 1.0))
    fail("dropout rates must lie in [0, 1)");
  if (kind == ModelKind::MultiTab) {
    if (heads < 1 || blocks < 1 || head_hidden < 1) fail("heads, blocks and head_hidden must be >= 1");
    if (e % heads != 0) fail("heads = " + std::to_string(heads) + " does not divide e = " + std::to_string(e));
    const std::size_t width = (d + task_tokens(t)) * e;
    if (inter_sample && width % heads != 0)
      fail("heads = " + std::to_string(heads) + " does not divide (d+t)*e = " + std::to_string(width));
  } else {
    for (std::size_t w : trunk)
      if (w < 1) fail("trunk widths must be >= 1");
    for (std::size_t w : tower)
      if (w < 1) fail("tower widths must be >= 1");
  }
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"kind", to_string(c.kind)},
           {"e", c.e},
           {"heads", c.heads},
           {"blocks", c.blocks},
           {"ffn_hidden", c.ffn_width()},
           {"mask", to_string(c.mask)},
           {"use_rope", c.use_rope},
           {"inter_sample", c.inter_sample},
           {"single_token", c.single_token},
           {"attn_dropout", c.attn_dropout},
           {"ffn_dropout", c.ffn_dropout},
           {"head_hidden", c.head_hidden},
           {"trunk", c.trunk},
           {"tower", c.tower}};
}

ModelConfig model_config_from_json(const json& j, const std::string& where) {
  const data::JsonReader r(j, where);
  ModelConfig c;
  try {
    c.kind = model_kind_from_string(r.optional<std::string>("kind", "multitab"));
    c.mask = mask_scheme_from_string(r.optional<std::string>("mask", "TnotT"));
  } catch (const ConfigError& e) {
    throw ConfigError((where.empty() ? "/" : where) + ": " + e.what());
  }
  c.e = r.optional<std::size_t>("e", c.e);
  c.heads = r.optional<std::size_t>("heads", c.heads);
  c.blocks = r.optional<std::size_t>("blocks", c.blocks);
  c.ffn_hidden = r.optional<std::size_t>("ffn_hidden", 0);
  c.use_rope = r.optional<bool>("use_rope", c.use_rope);
  c.inter_sample = r.optional<bool>("inter_sample", c.inter_sample);
  c.single_token = r.optional<bool>("single_token", c.single_token);
  c.attn_dropout = r.optional<double>("attn_dropout", c.attn_dropout);
  c.ffn_dropout = r.optional<double>("ffn_dropout", c.ffn_dropout);
  c.head_hidden = r.optional<std::size_t>("head_hidden", c.head_hidden);
  c.trunk = r.optional<std::vector<std::size_t>>("trunk", c.trunk);
  c.tower = r.optional<std::vector<std::size_t>>("tower", c.tower);
  return c;
}

// ---- mask ------------------------------------------------------------------

Tensor expand_mask(MaskScheme scheme, std::size_t d, std::size_t t) {
  const std::size_t L = d + t;
  const double blocked = -std::numeric_limits<double>::infinity();
  Tensor m(Shape{L, L});
  const bool f_not_t = scheme == MaskScheme::FnotT || scheme == MaskScheme::Both;
  const bool t_not_t = scheme == MaskScheme::TnotT || scheme == MaskScheme::Both;
  if (f_not_t)
    for (std::size_t q = 0; q < d; ++q)
      for (std::size_t k = d; k < L; ++k) m.at(q, k) = blocked;
  if (t_not_t)
    for (std::size_t q = d; q < L; ++q)
      for (std::size_t k = d; k < L; ++k)
        if (q != k) m.at(q, k) = blocked;
  return m;
}

// ---- building blocks -------------------------------------------------------

Var ParamBinder::operator()(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return it->second;
  const auto found = store_->find(name);
  if (found == store_->end()) throw ContractError("model: parameter '" + name + "' is missing");
  const Var v = track_ ? tape_->param(name, found->second) : tape_->constant(found->second);
  bound_.emplace(name, v);
  return v;
}

Var embed(ParamBinder& p, const std::string& prefix, const data::FeatureSchema& schema, const Tensor& features,
          bool training) {
  const std::size_t d = schema.size();
  if (features.rank() != 2 || features.dim(1) != d)
    throw DimensionError("embed: features " + num::shape_str(features.shape()) + " do not match " +
                         std::to_string(d) + " schema columns");
  const std::size_t n = features.dim(0);
  const std::size_t cn = schema.numeric_count();

  std::vector<Var> parts;
  std::vector<std::size_t> source(d);  // column j -> (offset, stride) of its rows in the concatenation
  std::vector<std::size_t> stride(d);
  std::size_t offset = 0;
  if (cn > 0) {
    Tensor values(Shape{n, cn});
    std::size_t r = 0;
    for (std::size_t j = 0; j < d; ++j) {
      if (schema.columns[j].kind != data::FeatureKind::Numeric) continue;
      for (std::size_t s = 0; s < n; ++s) values.at(s, r) = features.at(s, j);
      source[j] = r;
      stride[j] = cn;
      ++r;
    }
    parts.push_back(num::affine_embed(values, p(prefix + "embed/num_w"), p(prefix + "embed/num_b")));
    if (cn == d) return parts.front();
    offset = n * cn;
  }
  for (std::size_t j = 0; j < d; ++j) {
    const auto& col = schema.columns[j];
    if (col.kind != data::FeatureKind::Categorical) continue;
    std::vector<std::size_t> rows(n);
    for (std::size_t s = 0; s < n; ++s) {
      const double v = features.at(s, j);
      if (!(v >= 0.0) || v != std::floor(v))
        throw SchemaError("embed: column '" + col.name + "' holds non-integer code " + data::format_double(v));
      const auto code = static_cast<std::size_t>(v);
      if (code >= col.cardinality) {
        if (training)
          throw SchemaError("embed: column '" + col.name + "' code " + std::to_string(code) +
                            " >= cardinality " + std::to_string(col.cardinality));
        rows[s] = col.cardinality;  // out-of-vocabulary row
      } else {
        rows[s] = code;
      }
    }
    parts.push_back(num::gather_rows(p(prefix + idx("embed/cat_", j)), std::move(rows)));
    source[j] = offset;
    stride[j] = 1;
    offset += n;
  }
  const Var all = num::concat_rows(parts);
  std::vector<std::size_t> order(n * d);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < d; ++j)
      order[s * d + j] = stride[j] == 1 ? source[j] + s : s * cn + source[j];
  return num::gather_rows(all, std::move(order));
}

Var inter_feature_attention(ParamBinder& p, const std::string& prefix, const Var& x, std::size_t tokens,
                            std::size_t heads, const Tensor* mask) {
  const num::AttentionLayout layout{x.dim(0) / tokens, tokens, heads};
  const Var q = num::matmul(x, p(prefix + "/wq"));
  const Var k = num::matmul(x, p(prefix + "/wk"));
  const Var v = num::matmul(x, p(prefix + "/wv"));
  return num::matmul(num::multihead_attention(q, k, v, layout, mask), p(prefix + "/wo"));
}

Var inter_sample_attention(ParamBinder& p, const std::string& prefix, const Var& x, std::size_t tokens,
                           std::size_t heads, bool use_rope) {
  const std::size_t n = x.dim(0) / tokens, e = x.dim(1), width = tokens * e;
  if (heads == 0 || width % heads != 0)
    throw ConfigError("inter-sample attention: heads = " + std::to_string(heads) + " does not divide " +
                      std::to_string(width));
  const num::AttentionLayout layout{1, n, heads};
  const Var flat = num::reshape(x, Shape{n, width});
  Var q = num::matmul(flat, p(prefix + "/wq"));
  Var k = num::matmul(flat, p(prefix + "/wk"));
  const Var v = num::matmul(flat, p(prefix + "/wv"));
  if (use_rope) {
    q = num::rope(q, layout);
    k = num::rope(k, layout);
  }
  const Var out = num::matmul(num::multihead_attention(q, k, v, layout, nullptr), p(prefix + "/wo"));
  return num::reshape(out, Shape{n * tokens, e});
}

Tensor inter_feature_weights(const ParamStore& params, const std::string& prefix, const Tensor& x,
                             std::size_t tokens, std::size_t heads, const Tensor* mask) {
  const num::AttentionLayout layout{x.dim(0) / tokens, tokens, heads};
  Tensor weights;
  num::attention_forward(project(x, params.at(prefix + "/wq")), project(x, params.at(prefix + "/wk")),
                         project(x, params.at(prefix + "/wv")), layout, mask, &weights);
  return weights;
}

Var encoder_block(ParamBinder& p, const std::string& prefix, const Var& x, std::size_t tokens,
                  const ModelConfig& config, const Tensor* mask, const ForwardOptions& opts) {
  Var h = inter_feature_attention(p, prefix + "/if", layer_norm(p, prefix + "/ln1", x), tokens, config.heads, mask);
  Var y = num::add(x, maybe_dropout(h, config.attn_dropout, opts));
  y = num::add(y, ffn(p, prefix + "/ffn1", layer_norm(p, prefix + "/ln2", y), opts, config.ffn_dropout));
  if (config.inter_sample) {
    h = inter_sample_attention(p, prefix + "/is", layer_norm(p, prefix + "/ln3", y), tokens, config.heads,
                               config.use_rope);
    y = num::add(y, maybe_dropout(h, config.attn_dropout, opts));
  }
  return num::add(y, ffn(p, prefix + "/ffn2", layer_norm(p, prefix + "/ln4", y), opts, config.ffn_dropout));
}

// ---- model -----------------------------------------------------------------

Model Model::create(const ModelConfig& config, const data::FeatureSchema& schema,
                    const std::vector<data::TaskSpec>& tasks, std::uint64_t seed) {
  schema.validate();
  for (const auto& t : tasks) t.validate();
  config.validate(schema.size(), tasks.size());
  Model m{config, schema, tasks, {}};
  num::Rng rng(seed);
  for (const Decl& d : declarations(config, schema, tasks)) {
    Tensor value(d.shape);
    switch (d.init) {
      case Init::Zero: break;
      case Init::One:
        std::fill(value.data().begin(), value.data().end(), 1.0);
        break;
      case Init::FanIn: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(d.fan_in));
        for (double& v : value.data()) v = rng.uniform(-bound, bound);
        break;
      }
      case Init::TaskToken:
        for (double& v : value.data()) v = kTaskTokenStd * rng.normal();
        break;
    }
    m.params.emplace(d.name, std::move(value));
  }
  return m;
}

std::vector<Var> Model::forward(Tape& tape, const Tensor& features, const ForwardOptions& opts) const {
  ParamBinder p(tape, params, true);
  return forward(p, features, opts);
}

std::vector<Var> Model::forward(ParamBinder& p, const Tensor& features, const ForwardOptions& opts) const {
  const std::size_t d = schema.size(), t = tasks.size(), e = config.e;
  const std::size_t n = features.dim(0);
  if (n == 0) throw ContractError("forward: empty batch");
  std::vector<Var> out;

  if (config.kind == ModelKind::Stl) {
    for (std::size_t i = 0; i < t; ++i) {
      const std::string pre = idx("task", i) + "/";
      const Var flat = num::reshape(embed(p, pre, schema, features, opts.training), Shape{n, d * e});
      out.push_back(linear(p, pre + "out", mlp(p, pre + "trunk", flat, config.trunk.size())));
    }
    return out;
  }
  if (config.kind == ModelKind::SharedBottom) {
    const Var flat = num::reshape(embed(p, "", schema, features, opts.training), Shape{n, d * e});
    const Var shared = mlp(p, "trunk", flat, config.trunk.size());
    for (std::size_t i = 0; i < t; ++i) {
      const std::string pre = idx("head", i);
      out.push_back(linear(p, pre + "/out", mlp(p, pre + "/tower", shared, config.tower.size())));
    }
    return out;
  }

  const std::size_t T = config.task_tokens(t), L = d + T;
  const Var feats = embed(p, "", schema, features, opts.training);
  std::vector<std::size_t> order(n * L);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < d; ++j) order[s * L + j] = s * d + j;
    for (std::size_t k = 0; k < T; ++k) order[s * L + d + k] = n * d + k;
  }
  Var x = num::gather_rows(num::concat_rows({feats, p("task_tokens")}), std::move(order));
  const Tensor mask = expand_mask(config.mask, d, T);
  for (std::size_t b = 0; b < config.blocks; ++b) x = encoder_block(p, idx("block", b), x, L, config, &mask, opts);

  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t token = config.single_token ? 0 : i;
    std::vector<std::size_t> rows(n);
    for (std::size_t s = 0; s < n; ++s) rows[s] = s * L + d + token;
    const Var h = layer_norm(p, "final_ln", num::gather_rows(x, std::move(rows)));
    const std::string pre = idx("head", i);
    out.push_back(linear(p, pre + "/l2", num::gelu(linear(p, pre + "/l1", h))));
  }
  return out;
}

std::vector<Tensor> Model::predict(const Tensor& features, std::size_t batch_size) const {
  if (batch_size == 0) throw ContractError("predict: batch_size must be >= 1");
  const std::size_t n = features.dim(0);
  std::vector<Tensor> out;
  for (const auto& task : tasks) out.emplace_back(Shape{n, task.output_dim()});
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    Tape tape;
    ParamBinder p(tape, params, false);
    const std::vector<Var> preds = forward(p, slice_rows(features, start, count));
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const auto src = preds[i].value().data();
      std::copy(src.begin(), src.end(), out[i].data().begin() + static_cast<std::ptrdiff_t>(start * tasks[i].output_dim()));
    }
  }
  return out;
}

std::string Model::param_group(const std::string& name) const {
  if (config.kind == ModelKind::Stl && name.rfind("task", 0) == 0) return name.substr(0, name.find('/'));
  return "model";
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [_, v] : params) total += v.size();
  return total;
}

ParamStore jitter_params(const ParamStore& params, double scale, std::uint64_t seed) {
  num::Rng rng(seed);
  ParamStore out = params;
  for (auto& [_, v] : out)
    for (double& w : v.data()) w += scale * rng.normal();
  return out;
}

// ---- checkpoints -------------------------------------------------------------

void write_container(const std::string& path, const json& header, const ParamStore& tensors) {
  json manifest = header;
  json list = json::array();
  for (const auto& [name, t] : tensors) list.push_back({{"name", name}, {"shape", t.shape()}});
  manifest["tensors"] = list;
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(kMagic, static_cast<std::streamsize>(std::strlen(kMagic)));
  std::uint64_t len = text.size();
  unsigned char bytes[8];
  for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(len >> (8 * b));
  out.write(reinterpret_cast<const char*>(bytes), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");
  for (const auto& [_, t] : tensors)
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw Error("write to '" + path + "' failed");
}

std::pair<json, ParamStore> read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open checkpoint");
  std::string magic(std::strlen(kMagic), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kMagic) throw FormatError(path + ": not a multitab checkpoint (bad magic line)");
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t len = 0;
  for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
  if (!in || len > (1ull << 32)) throw FormatError(path + ": corrupt manifest length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError(path + ": truncated manifest");
  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(path + ": manifest is not JSON (" + e.what() + ")");
  }
  ParamStore tensors;
  for (const auto& entry : manifest.at("tensors")) {
    Tensor t(entry.at("shape").get<Shape>());
    in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw FormatError(path + ": payload ends inside tensor '" + entry.at("name").get<std::string>() + "'");
    tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes after payload");
  manifest.erase("tensors");
  return {manifest, tensors};
}

void save_model(const Model& model, const std::string& path, const json& header_extra, const ParamStore& extra) {
  json header = header_extra;
  header["format"] = kCheckpointFormat;
  header["config"] = model.config;
  header["schema"] = model.schema;
  header["tasks"] = model.tasks;
  ParamStore all;
  for (const auto& [name, t] : model.params) all.emplace("params/" + name, t);
  for (const auto& [name, t] : extra) all.emplace("extra/" + name, t);
  write_container(path, header, all);
}

LoadedModel load_model(const std::string& path) {
  auto [header, tensors] = read_container(path);
  if (header.value("format", "") != kCheckpointFormat) throw FormatError(path + ": not a model checkpoint");
  LoadedModel out;
  try {
    out.model.config = model_config_from_json(header.at("config"), "/config");
    out.model.schema = header.at("schema").get<data::FeatureSchema>();
    out.model.tasks = header.at("tasks").get<std::vector<data::TaskSpec>>();
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad manifest (" + e.what() + ")");
  }
  for (auto& [name, t] : tensors) {
    if (name.rfind("params/", 0) == 0)
      out.model.params.emplace(name.substr(7), std::move(t));
    else if (name.rfind("extra/", 0) == 0)
      out.extra.emplace(name.substr(6), std::move(t));
  }
  for (const auto& d : declarations(out.model.config, out.model.schema, out.model.tasks)) {
    const auto it = out.model.params.find(d.name);
    if (it == out.model.params.end() || it->second.shape() != d.shape)
      throw FormatError(path + ": parameter '" + d.name + "' is missing or has the wrong shape");
  }
  out.header = std::move(header);
  return out;
}

std::uint64_t params_hash(const ParamStore& params) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : params) {
    mix(name.data(), name.size());
    for (std::uint64_t dim : t.shape()) mix(&dim, sizeof dim);
    mix(t.data().data(), t.size() * sizeof(double));
  }
  return h;
}

}  // namespace multitab::model
