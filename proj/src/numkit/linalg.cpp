#include "multitab/numkit/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "multitab/numkit/error.hpp"

namespace multitab::num {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kSymmetryTol = 1e-10;
constexpr double kOffDiagTol = 1e-12;
constexpr double kRedrawNorm = 1e-8;
constexpr int kMaxRedraws = 100;

double off_diagonal_norm(const Tensor& a) {
  const std::size_t n = a.dim(0);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) s += a.at(i, j) * a.at(i, j);
  return std::sqrt(s);
}

}  // namespace

SymEigResult sym_eig(const Tensor& p) {
  if (p.rank() != 2 || p.dim(0) != p.dim(1)) throw DimensionError("sym_eig: expected a square matrix, got " + shape_str(p.shape()));
  const std::size_t n = p.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (!(std::abs(p.at(i, j) - p.at(j, i)) < kSymmetryTol))
        throw ContractError("sym_eig: matrix is not symmetric at (" + std::to_string(i) + ", " + std::to_string(j) + ")");

  Tensor a = p;
  Tensor v = Tensor::identity(n);
  double frob = 0.0;
  for (double x : p.data()) frob += x * x;
  const double tol = kOffDiagTol * std::max(1.0, std::sqrt(frob));

  int sweep = 0;
  while (off_diagonal_norm(a) >= tol) {
    if (++sweep > kMaxSweeps) throw NumericFailure("sym_eig: Jacobi sweeps did not converge");
    for (std::size_t r = 0; r + 1 < n; ++r) {
      for (std::size_t c = r + 1; c < n; ++c) {
        const double arc = a.at(r, c);
        if (arc == 0.0) continue;
        // Rotation zeroing a(r, c); t = tan(angle), smaller root for stability.
        const double theta = (a.at(c, c) - a.at(r, r)) / (2.0 * arc);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;
        for (std::size_t k = 0; k < n; ++k) {
          const double akr = a.at(k, r), akc = a.at(k, c);
          a.at(k, r) = cs * akr - sn * akc;
          a.at(k, c) = sn * akr + cs * akc;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double ark = a.at(r, k), ack = a.at(c, k);
          a.at(r, k) = cs * ark - sn * ack;
          a.at(c, k) = sn * ark + cs * ack;
        }
        a.at(r, c) = 0.0;
        a.at(c, r) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkr = v.at(k, r), vkc = v.at(k, c);
          v.at(k, r) = cs * vkr - sn * vkc;
          v.at(k, c) = sn * vkr + cs * vkc;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a.at(x, x) < a.at(y, y); });
  SymEigResult res{std::vector<double>(n), Tensor(Shape{n, n})};
  for (std::size_t k = 0; k < n; ++k) {
    res.eigenvalues[k] = a.at(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) res.eigenvectors.at(i, k) = v.at(i, order[k]);
  }
  return res;
}

Tensor gram_schmidt(const Tensor& rows, Rng& rng) {
  if (rows.rank() != 2) throw DimensionError("gram_schmidt: expected a matrix, got " + shape_str(rows.shape()));
  const std::size_t t = rows.dim(0), d = rows.dim(1);
  if (t > d) {
    throw InfeasibleError("gram_schmidt: cannot orthonormalize " + std::to_string(t) + " vectors in dimension " +
                          std::to_string(d));
  }
  Tensor u = rows;
  for (std::size_t i = 0; i < t; ++i) {
    double* ui = &u.at(i, 0);
    for (int attempt = 0;; ++attempt) {
      for (std::size_t j = 0; j < i; ++j) {
        const double* uj = &u.at(j, 0);
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += ui[k] * uj[k];
        for (std::size_t k = 0; k < d; ++k) ui[k] -= dot * uj[k];
      }
      double norm = 0.0;
      for (std::size_t k = 0; k < d; ++k) norm += ui[k] * ui[k];
      norm = std::sqrt(norm);
      if (norm >= kRedrawNorm) {
        for (std::size_t k = 0; k < d; ++k) ui[k] /= norm;
        break;
      }
      if (attempt >= kMaxRedraws) throw NumericFailure("gram_schmidt: row " + std::to_string(i) + " stayed degenerate");
      for (std::size_t k = 0; k < d; ++k) ui[k] = rng.normal();
    }
  }
  return u;
}

}  // namespace multitab::num
