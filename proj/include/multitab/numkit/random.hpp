#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "multitab/numkit/tensor.hpp"

namespace multitab::num {

/// splitmix64 finalizer; used to derive independent child seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Seed for stream `index` of a family rooted at `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Seeded generator. Identical seeds give identical streams within one build;
/// the normal sampler is the standard library's, so streams are not promised
/// to match across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  template <class It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// i.i.d. standard normal entries, drawn in row-major order.
Tensor sample_normal(Rng& rng, const Shape& shape);

}  // namespace multitab::num
