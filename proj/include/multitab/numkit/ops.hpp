#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "multitab/numkit/random.hpp"
#include "multitab/numkit/tape.hpp"
#include "multitab/numkit/tensor.hpp"

namespace multitab::num {

// ---- plain kernels ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

/// In-place stabilized softmax of one row. -inf entries become exactly 0.
/// Throws DegenerateRowError when every entry is -inf.
void softmax_inplace(std::span<double> row);

/// Softmax over the last axis.
Tensor softmax_rows(const Tensor& a);

/// Normalizes over the last axis, then applies gain and bias (both length e).
Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps);

double gelu(double x);

// ---- differentiable ops ----------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
/// Adds a length-c vector to every row of a [...x c] tensor.
Var add_bias(const Var& a, const Var& bias);
Var sum(const Var& a);
Var mean(const Var& a);
Var gelu(const Var& a);
Var softmax_rows(const Var& a);
Var layernorm(const Var& a, const Var& gain, const Var& bias, double eps);
Var reshape(const Var& a, Shape shape);

/// Stacks 2-D inputs with equal column counts along the row axis.
Var concat_rows(const std::vector<Var>& parts);
/// Row gather out[i] = src[index[i]]; the backward pass scatter-adds.
Var gather_rows(const Var& src, std::vector<std::size_t> index);
/// Inverted dropout; identity when rate == 0.
Var dropout(const Var& a, double rate, Rng& rng);
/// Sum of scalar vars with fixed weights.
Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights);

/// Per-column affine embedding of numeric inputs.
/// values [n x c] (constant), weight and bias [c x e] -> [n*c x e] with row
/// (s*c + j) = values(s, j) * weight[j] + bias[j].
Var affine_embed(const Tensor& values, const Var& weight, const Var& bias);

}  // namespace multitab::num
