#include "multitab/numkit/attention.hpp"

#include <Eigen/Core>
#include <cmath>

#include "multitab/numkit/error.hpp"
#include "multitab/numkit/ops.hpp"

namespace multitab::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Stride = Eigen::OuterStride<>;
using CBlock = Eigen::Map<const RowMat, 0, Stride>;
using MBlock = Eigen::Map<RowMat, 0, Stride>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

std::size_t head_dim(const Tensor& q, const AttentionLayout& L) {
  if (q.rank() != 2 || q.dim(0) != L.groups * L.seq) {
    throw DimensionError("attention: input " + shape_str(q.shape()) + " does not match " + std::to_string(L.groups) +
                         " groups of " + std::to_string(L.seq) + " rows");
  }
  if (L.heads == 0 || q.dim(1) % L.heads != 0) {
    throw ConfigError("attention: " + std::to_string(L.heads) + " heads do not divide width " +
                      std::to_string(q.dim(1)));
  }
  return q.dim(1) / L.heads;
}

CBlock block(const Tensor& t, const AttentionLayout& L, std::size_t g, std::size_t h, std::size_t dk) {
  const std::size_t width = t.dim(1);
  return CBlock(t.data().data() + g * L.seq * width + h * dk, L.seq, dk, Stride(width));
}

MBlock block(Tensor& t, const AttentionLayout& L, std::size_t g, std::size_t h, std::size_t dk) {
  const std::size_t width = t.dim(1);
  return MBlock(t.data().data() + g * L.seq * width + h * dk, L.seq, dk, Stride(width));
}

}  // namespace

Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& L,
                         const Tensor* mask, Tensor* weights) {
  const std::size_t dk = head_dim(q, L);
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("attention: q/k/v shapes differ: " + shape_str(q.shape()) + ", " + shape_str(k.shape()) +
                         ", " + shape_str(v.shape()));
  }
  if (mask && (mask->rank() != 2 || mask->dim(0) != L.seq || mask->dim(1) != L.seq)) {
    throw DimensionError("attention: mask " + shape_str(mask->shape()) + " for sequence length " +
                         std::to_string(L.seq));
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  const std::size_t S = L.seq;
  Tensor out(q.shape());
  Tensor local;
  Tensor& A = weights ? *weights : local;
  A = Tensor(Shape{L.groups, L.heads, S, S});
  for (std::size_t g = 0; g < L.groups; ++g) {
    for (std::size_t h = 0; h < L.heads; ++h) {
      MMap a(A.data().data() + (g * L.heads + h) * S * S, S, S);
      a.noalias() = block(q, L, g, h, dk) * block(k, L, g, h, dk).transpose();
      a *= inv_sqrt;
      if (mask) a += CMap(mask->data().data(), S, S);
      for (std::size_t r = 0; r < S; ++r) softmax_inplace(std::span<double>(a.data() + r * S, S));
      block(out, L, g, h, dk).noalias() = a * block(v, L, g, h, dk);
    }
  }
  return out;
}

Var multihead_attention(const Var& q, const Var& k, const Var& v, const AttentionLayout& L, const Tensor* mask) {
  Tensor weights;
  Tensor out = attention_forward(q.value(), k.value(), v.value(), L, mask, &weights);
  const std::size_t dk = q.dim(1) / L.heads;
  return q.tape().record(std::move(out), {q, k, v}, [q, k, v, L, dk, A = std::move(weights)](const Tensor& g) {
    Tape& t = q.tape();
    Tensor* gq = t.grad_sink(q);
    Tensor* gk = t.grad_sink(k);
    Tensor* gv = t.grad_sink(v);
    const std::size_t S = L.seq;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    RowMat dA(S, S), dS(S, S);
      for (std::size_t grp = 0; grp < L.groups; ++grp) {
      for (std::size_t h = 0; h < L.heads; ++h) {
        CMap a(A.data().data() + (grp * L.heads + h) * S * S, S, S);
        const CBlock dout = block(g, L, grp, h, dk);
        if (gv) block(*gv, L, grp, h, dk).noalias() += a.transpose() * dout;
        if (!gq && !gk) continue;
        dA.noalias() = dout * block(v.value(), L, grp, h, dk).transpose();
        // softmax backward, row-wise
        for (std::size_t r = 0; r < S; ++r) {
          const double dot = dA.row(static_cast<Eigen::Index>(r)).dot(a.row(static_cast<Eigen::Index>(r)));
          for (std::size_t c = 0; c < S; ++c) dS(r, c) = a(r, c) * (dA(r, c) - dot) * inv_sqrt;
        }
        if (gq) block(*gq, L, grp, h, dk).noalias() += dS * block(k.value(), L, grp, h, dk);
        if (gk) block(*gk, L, grp, h, dk).noalias() += dS.transpose() * block(q.value(), L, grp, h, dk);
      }
    }
  });
}

namespace {

// Rotates adjacent column pairs of each head by +angle (sign = 1) or -angle.
void apply_rotation(const Tensor& src, Tensor& dst, const AttentionLayout& L, double base, double sign) {
  const std::size_t width = src.dim(1);
  const std::size_t dk = width / L.heads;
  const std::size_t pairs = dk / 2;
  std::vector<double> freq(pairs);
  for (std::size_t i = 0; i < pairs; ++i)
    freq[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dk));
  for (std::size_t g = 0; g < L.groups; ++g)
    for (std::size_t s = 0; s < L.seq; ++s) {
      const std::size_t row = (g * L.seq + s) * width;
      for (std::size_t i = 0; i < pairs; ++i) {
        const double angle = sign * static_cast<double>(s) * freq[i];
        const double c = std::cos(angle), sn = std::sin(angle);
        for (std::size_t h = 0; h < L.heads; ++h) {
          const std::size_t j = row + h * dk + 2 * i;
          const double x0 = src[j], x1 = src[j + 1];
          dst[j] = x0 * c - x1 * sn;
          dst[j + 1] = x0 * sn + x1 * c;
        }
      }
      if (dk % 2 == 1)
        for (std::size_t h = 0; h < L.heads; ++h) dst[row + h * dk + dk - 1] = src[row + h * dk + dk - 1];
    }
}

}  // namespace

Tensor rope_forward(const Tensor& x, const AttentionLayout& L, double base) {
  head_dim(x, L);
  Tensor out(x.shape());
  apply_rotation(x, out, L, base, 1.0);
  return out;
}

Var rope(const Var& x, const AttentionLayout& L, double base) {
  Tensor out = rope_forward(x.value(), L, base);
  return x.tape().record(std::move(out), {x}, [x, L, base](const Tensor& g) {
    Tensor* gx = x.tape().grad_sink(x);
    if (!gx) return;
    Tensor back(g.shape());
    apply_rotation(g, back, L, base, -1.0);
    for (std::size_t i = 0; i < back.size(); ++i) (*gx)[i] += back[i];
  });
}

}  // namespace multitab::num
