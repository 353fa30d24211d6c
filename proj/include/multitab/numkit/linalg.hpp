#pragma once

#include <vector>

#include "multitab/numkit/random.hpp"
#include "multitab/numkit/tensor.hpp"

namespace multitab::num {

struct SymEigResult {
  std::vector<double> eigenvalues;  // ascending
  Tensor eigenvectors;              // column k pairs with eigenvalues[k]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Sweeps until the
/// off-diagonal Frobenius norm drops below 1e-12 (relative to max(1, |P|_F)).
/// Throws ContractError when |P - P^T|_max >= 1e-10.
SymEigResult sym_eig(const Tensor& p);

/// Modified Gram-Schmidt over the rows of a t x d matrix. A row whose norm
/// after projection falls below 1e-8 is redrawn from `rng` (standard normal),
/// at most 100 times. Throws InfeasibleError when t > d.
Tensor gram_schmidt(const Tensor& rows, Rng& rng);

}  // namespace multitab::num
