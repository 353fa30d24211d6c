#include "multitab/numkit/losses.hpp"

#include <cmath>

#include "multitab/numkit/error.hpp"
#include "multitab/numkit/ops.hpp"

namespace multitab::num {

namespace {

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericFailure(std::string(what) + ": non-finite prediction");
}

}  // namespace

Var bce_with_logits(const Var& logits, const Tensor& targets) {
  const Tensor& z = logits.value();
  if (z.size() != targets.size() || z.size() == 0) {
    throw DimensionError("bce_with_logits: " + shape_str(z.shape()) + " logits vs " + shape_str(targets.shape()) +
                         " targets");
  }
  require_finite(z, "bce_with_logits");
  const double n = static_cast<double>(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    // max(z,0) - z*y + log(1 + exp(-|z|))
    total += std::max(z[i], 0.0) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  return logits.tape().record(Tensor::scalar(total / n), {logits}, [logits, targets, n](const Tensor& g) {
    Tensor* gz = logits.tape().grad_sink(logits);
    if (!gz) return;
    const Tensor& z = logits.value();
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-z[i]));
      (*gz)[i] += g[0] * (sig - targets[i]) / n;
    }
  });
}

Var softmax_cross_entropy(const Var& logits, const Tensor& labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != labels.size() || z.dim(0) == 0) {
    throw DimensionError("softmax_cross_entropy: " + shape_str(z.shape()) + " logits vs " +
                         std::to_string(labels.size()) + " labels");
  }
  require_finite(z, "softmax_cross_entropy");
  const std::size_t n = z.dim(0), k = z.dim(1);
  Tensor probs = softmax_rows(z);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto cls = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || cls >= k) throw ContractError("softmax_cross_entropy: label out of range");
    double mx = z.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z.at(i, j));
    double lse = 0.0;
    for (std::size_t j = 0; j < k; ++j) lse += std::exp(z.at(i, j) - mx);
    total += mx + std::log(lse) - z.at(i, cls);
  }
  const double dn = static_cast<double>(n);
  return logits.tape().record(Tensor::scalar(total / dn), {logits},
                              [logits, labels, probs = std::move(probs), dn](const Tensor& g) {
                                Tensor* gz = logits.tape().grad_sink(logits);
                                if (!gz) return;
                                const std::size_t k = probs.dim(1);
                                for (std::size_t i = 0; i < probs.dim(0); ++i) {
                                  const auto cls = static_cast<std::size_t>(labels[i]);
                                  for (std::size_t j = 0; j < k; ++j) {
                                    const double y = j == cls ? 1.0 : 0.0;
                                    gz->at(i, j) += g[0] * (probs.at(i, j) - y) / dn;
                                  }
                                }
                              });
}

Var mse_loss(const Var& pred, const Tensor& target) {
  const Tensor& p = pred.value();
  if (p.size() != target.size() || p.size() == 0) {
    throw DimensionError("mse_loss: " + shape_str(p.shape()) + " predictions vs " + shape_str(target.shape()) +
                         " targets");
  }
  require_finite(p, "mse_loss");
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - target[i]) * (p[i] - target[i]);
  return pred.tape().record(Tensor::scalar(total / n), {pred}, [pred, target, n](const Tensor& g) {
    Tensor* gp = pred.tape().grad_sink(pred);
    if (!gp) return;
    const Tensor& p = pred.value();
    for (std::size_t i = 0; i < p.size(); ++i) (*gp)[i] += g[0] * 2.0 * (p[i] - target[i]) / n;
  });
}

}  // namespace multitab::num
