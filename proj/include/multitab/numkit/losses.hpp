#pragma once

#include "multitab/numkit/tape.hpp"
#include "multitab/numkit/tensor.hpp"

namespace multitab::num {

// All losses reduce by the mean over the batch and return a rank-0 var.

/// logits [n x 1] (or [n]), targets in {0, 1}.
Var bce_with_logits(const Var& logits, const Tensor& targets);

/// logits [n x k], labels hold class indices 0..k-1.
Var softmax_cross_entropy(const Var& logits, const Tensor& labels);

/// pred and target with n entries each.
Var mse_loss(const Var& pred, const Tensor& target);

}  // namespace multitab::num
