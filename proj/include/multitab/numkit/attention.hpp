#pragma once

#include <cstddef>

#include "multitab/numkit/tape.hpp"
#include "multitab/numkit/tensor.hpp"

namespace multitab::num {

/// Row layout of packed attention inputs: `groups` independent sequences of
/// `seq` rows each, stacked as [groups*seq x heads*head_dim]. Head i owns
/// columns [i*head_dim, (i+1)*head_dim).
struct AttentionLayout {
  std::size_t groups = 1;
  std::size_t seq = 1;
  std::size_t heads = 1;
};

/// Scaled dot-product attention per (group, head): softmax(Q K^T / sqrt(dk) + mask) V.
/// `mask` is an optional [seq x seq] additive mask (0 or -inf), query rows by
/// key columns. When `weights` is non-null it receives the post-softmax
/// weights as [groups x heads x seq x seq].
Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout,
                         const Tensor* mask, Tensor* weights = nullptr);

/// Differentiable multi-head attention core (no projections).
Var multihead_attention(const Var& q, const Var& k, const Var& v, const AttentionLayout& layout, const Tensor* mask);

/// Rotary position encoding applied per head to adjacent column pairs; the
/// position of row (g*seq + s) is s. An odd trailing column is left as is.
Tensor rope_forward(const Tensor& x, const AttentionLayout& layout, double base = 10000.0);
Var rope(const Var& x, const AttentionLayout& layout, double base = 10000.0);

}  // namespace multitab::num
