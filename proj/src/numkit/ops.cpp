#include "multitab/numkit/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <numbers>

#include "multitab/numkit/error.hpp"

namespace multitab::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

CMap as_matrix(const Tensor& t) { return CMap(t.data().data(), t.dim(0), t.dim(1)); }
MMap as_matrix(Tensor& t) { return MMap(t.data().data(), t.dim(0), t.dim(1)); }

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

std::size_t last_extent(const Tensor& t) { return t.rank() ? t.shape().back() : 1; }

void axpy(std::span<double> dst, std::span<const double> src, double alpha = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

// ---- plain kernels ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out(Shape{a.dim(0), b.dim(1)});
  if (out.size() == 0) return out;
  if (a.dim(1) == 0) return out;
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  return out;
}

void softmax_inplace(std::span<double> row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : row) mx = std::max(mx, v);
  if (mx == -std::numeric_limits<double>::infinity()) {
    throw DegenerateRowError("softmax: row of " + std::to_string(row.size()) + " entries is entirely -inf");
  }
  double total = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    total += v;
  }
  const double inv = 1.0 / total;
  for (double& v : row) v *= inv;
}

Tensor softmax_rows(const Tensor& a) {
  Tensor out = a;
  const std::size_t c = last_extent(a);
  if (c == 0) return out;
  auto d = out.data();
  for (std::size_t off = 0; off < d.size(); off += c) softmax_inplace(d.subspan(off, c));
  return out;
}

Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) throw ContractError("layernorm: eps must be positive");
  const std::size_t e = last_extent(a);
  if (gain.size() != e || bias.size() != e) {
    throw DimensionError("layernorm: gain/bias length must equal last extent " + std::to_string(e));
  }
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t off = 0; off < src.size(); off += e) {
    double mu = 0.0;
    for (std::size_t j = 0; j < e; ++j) mu += src[off + j];
    mu /= static_cast<double>(e);
    double var = 0.0;
    for (std::size_t j = 0; j < e; ++j) var += (src[off + j] - mu) * (src[off + j] - mu);
    var /= static_cast<double>(e);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < e; ++j) dst[off + j] = (src[off + j] - mu) * inv * gain[j] + bias[j];
  }
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

// ---- differentiable ops ----------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul(a.value(), b.value());
  Tape& tape = a.tape();
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor& g) {
    Tape& t = a.tape();
    if (g.size() == 0) return;
    if (Tensor* ga = t.grad_sink(a)) as_matrix(*ga).noalias() += as_matrix(g) * as_matrix(b.value()).transpose();
    if (Tensor* gb = t.grad_sink(b)) as_matrix(*gb).noalias() += as_matrix(a.value()).transpose() * as_matrix(g);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  axpy(out.data(), b.value().data());
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) axpy(ga->data(), g.data());
    if (Tensor* gb = a.tape().grad_sink(b)) axpy(gb->data(), g.data());
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  axpy(out.data(), b.value().data(), -1.0);
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) axpy(ga->data(), g.data());
    if (Tensor* gb = a.tape().grad_sink(b)) axpy(gb->data(), g.data(), -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& g) {
    Tape& t = a.tape();
    if (Tensor* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b.value()[i];
    if (Tensor* gb = t.grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a.value()[i];
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return a.tape().record(std::move(out), {a}, [a, factor](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) axpy(ga->data(), g.data(), factor);
  });
}

Var add_bias(const Var& a, const Var& bias) {
  const std::size_t c = last_extent(a.value());
  if (bias.value().size() != c) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " + shape_str(a.shape()));
  }
  Tensor out = a.value();
  auto d = out.data();
  auto bv = bias.value().data();
  for (std::size_t off = 0; off < d.size(); off += c)
    for (std::size_t j = 0; j < c; ++j) d[off + j] += bv[j];
  return a.tape().record(std::move(out), {a, bias}, [a, bias, c](const Tensor& g) {
    Tape& t = a.tape();
    if (Tensor* ga = t.grad_sink(a)) axpy(ga->data(), g.data());
    if (Tensor* gb = t.grad_sink(bias)) {
      auto gd = g.data();
      for (std::size_t off = 0; off < gd.size(); off += c)
        for (std::size_t j = 0; j < c; ++j) (*gb)[j] += gd[off + j];
    }
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.tape().record(Tensor::scalar(total), {a}, [a](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a))
      for (double& v : ga->data()) v += g[0];
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var gelu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = gelu(v);
  return a.tape().record(std::move(out), {a}, [a](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) {
      const auto x = a.value().data();
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * gelu_grad(x[i]);
    }
  });
}

Var softmax_rows(const Var& a) {
  Tensor out = softmax_rows(a.value());
  const std::size_t c = last_extent(out);
  Tape& tape = a.tape();
  // The node about to be recorded; its value is the softmax output.
  const Var y(&tape, tape.size());
  return tape.record(std::move(out), {a}, [a, y, c](const Tensor& g) {
    Tensor* ga = a.tape().grad_sink(a);
    if (!ga) return;
    const auto s = y.value().data();
    const auto gd = g.data();
    for (std::size_t off = 0; off < gd.size(); off += c) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += gd[off + j] * s[off + j];
      for (std::size_t j = 0; j < c; ++j) (*ga)[off + j] += s[off + j] * (gd[off + j] - dot);
    }
  });
}

Var layernorm(const Var& a, const Var& gain, const Var& bias, double eps) {
  Tensor out = layernorm(a.value(), gain.value(), bias.value(), eps);
  const std::size_t e = last_extent(a.value());
  return a.tape().record(std::move(out), {a, gain, bias}, [a, gain, bias, e, eps](const Tensor& g) {
    Tape& t = a.tape();
    Tensor* ga = t.grad_sink(a);
    Tensor* gg = t.grad_sink(gain);
    Tensor* gb = t.grad_sink(bias);
    const auto x = a.value().data();
    const auto gv = gain.value().data();
    const auto gd = g.data();
    std::vector<double> xhat(e), dxhat(e);
    for (std::size_t off = 0; off < x.size(); off += e) {
      double mu = 0.0;
      for (std::size_t j = 0; j < e; ++j) mu += x[off + j];
      mu /= static_cast<double>(e);
      double var = 0.0;
      for (std::size_t j = 0; j < e; ++j) var += (x[off + j] - mu) * (x[off + j] - mu);
      var /= static_cast<double>(e);
      const double inv = 1.0 / std::sqrt(var + eps);
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = 0; j < e; ++j) {
        xhat[j] = (x[off + j] - mu) * inv;
        dxhat[j] = gd[off + j] * gv[j];
        m1 += dxhat[j];
        m2 += dxhat[j] * xhat[j];
      }
      m1 /= static_cast<double>(e);
      m2 /= static_cast<double>(e);
      for (std::size_t j = 0; j < e; ++j) {
        if (ga) (*ga)[off + j] += inv * (dxhat[j] - m1 - xhat[j] * m2);
        if (gg) (*gg)[j] += gd[off + j] * xhat[j];
        if (gb) (*gb)[j] += gd[off + j];
      }
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [a](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) axpy(ga->data(), g.data());
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t c = parts.front().value().rank() == 2 ? parts.front().dim(1) : 0;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_matrix(p.value(), "concat_rows");
    if (p.dim(1) != c) throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  Tensor out(Shape{rows, c});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.value().size();
  }
  return parts.front().tape().record(std::move(out), parts, [parts](const Tensor& g) {
    std::size_t o = 0;
    for (const auto& p : parts) {
      const std::size_t n = p.value().size();
      if (Tensor* gp = p.tape().grad_sink(p)) axpy(gp->data(), g.data().subspan(o, n));
      o += n;
    }
  });
}

Var gather_rows(const Var& src, std::vector<std::size_t> index) {
  require_matrix(src.value(), "gather_rows");
  const std::size_t rows = src.dim(0), c = src.dim(1);
  Tensor out(Shape{index.size(), c});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " out of range");
    const auto from = src.value().data().subspan(index[i] * c, c);
    std::copy(from.begin(), from.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return src.tape().record(std::move(out), {src}, [src, index = std::move(index), c](const Tensor& g) {
    Tensor* gs = src.tape().grad_sink(src);
    if (!gs) return;
    for (std::size_t i = 0; i < index.size(); ++i) axpy(gs->data().subspan(index[i] * c, c), g.data().subspan(i * c, c));
  });
}

Var dropout(const Var& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return a;
  Tensor keep(a.shape());
  const double s = 1.0 / (1.0 - rate);
  for (double& k : keep.data()) k = rng.uniform() < rate ? 0.0 : s;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= keep[i];
  return a.tape().record(std::move(out), {a}, [a, keep = std::move(keep)](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * keep[i];
  });
}

Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights) {
  if (scalars.size() != weights.size()) throw ContractError("weighted_sum: length mismatch");
  if (scalars.empty()) throw ContractError("weighted_sum: no terms");
  double total = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].value().size() != 1) throw ContractError("weighted_sum: terms must be scalars");
    total += weights[i] * scalars[i].value()[0];
  }
  return scalars.front().tape().record(Tensor::scalar(total), scalars, [scalars, weights](const Tensor& g) {
    for (std::size_t i = 0; i < scalars.size(); ++i)
      if (Tensor* gs = scalars[i].tape().grad_sink(scalars[i])) (*gs)[0] += weights[i] * g[0];
  });
}

Var affine_embed(const Tensor& values, const Var& weight, const Var& bias) {
  require_matrix(values, "affine_embed");
  require_matrix(weight.value(), "affine_embed");
  require_same_shape(weight.value(), bias.value(), "affine_embed");
  const std::size_t n = values.dim(0), c = values.dim(1);
  if (weight.dim(0) != c) {
    throw DimensionError("affine_embed: " + std::to_string(c) + " columns vs weight " + shape_str(weight.shape()));
  }
  const std::size_t e = weight.dim(1);
  Tensor out(Shape{n * c, e});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < c; ++j) {
      const double x = values.at(s, j);
      for (std::size_t k = 0; k < e; ++k) out.at(s * c + j, k) = x * weight.value().at(j, k) + bias.value().at(j, k);
    }
  return weight.tape().record(std::move(out), {weight, bias}, [values, weight, bias, n, c, e](const Tensor& g) {
    Tape& t = weight.tape();
    Tensor* gw = t.grad_sink(weight);
    Tensor* gb = t.grad_sink(bias);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < c; ++j) {
        const double x = values.at(s, j);
        for (std::size_t k = 0; k < e; ++k) {
          const double gv = g.at(s * c + j, k);
          if (gw) gw->at(j, k) += x * gv;
          if (gb) gb->at(j, k) += gv;
        }
      }
  });
}

}  // namespace multitab::num
