#include <cmath>
#include <vector>

#include "doctest.h"
#include "multitab/metrics/metrics.hpp"
#include "multitab/numkit/error.hpp"
#include "multitab/numkit/random.hpp"

using namespace multitab;
using namespace multitab::metrics;
using V = std::vector<double>;

namespace {

// O(n^2) pair counting; ties count one half.
double auc_pairs(const V& s, const V& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1.0 && y[j] == 0.0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

}  // namespace

TEST_CASE("auc_binary") {
  CHECK(auc_binary(V{0.1, 0.2, 0.8, 0.9}, V{0, 0, 1, 1}) == 1.0);
  CHECK(auc_binary(V{0.3, 0.3, 0.3, 0.3}, V{0, 1, 0, 1}) == 0.5);
  CHECK(auc_binary(V{.1, .4, .35, .8}, V{0, 0, 1, 1}) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS(auc_binary(V{0.1, 0.2}, V{1, 1}), UndefinedMetricError);

  SUBCASE("monotone transform and score negation") {
    num::Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
      V s(40), y(40), t(40), neg(40);
      for (std::size_t i = 0; i < 40; ++i) {
        s[i] = rng.normal();
        y[i] = i < 15 ? 1.0 : 0.0;
        t[i] = std::exp(3.0 * s[i]) + 2.0;
        neg[i] = -s[i];
      }
      const double a = auc_binary(s, y);
      CHECK(std::abs(auc_binary(t, y) - a) < 1e-12);
      CHECK(std::abs(a + auc_binary(neg, y) - 1.0) < 1e-12);
    }
  }
  SUBCASE("pair-counting oracle with ties") {
    num::Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 2 + rng.next_u64() % 49;
      V s(n), y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = std::floor(rng.uniform() * 6.0);
        y[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
      }
      y[0] = 1.0;
      y[1] = 0.0;
      CHECK(std::abs(auc_binary(s, y) - auc_pairs(s, y)) < 1e-12);
    }
  }
}

TEST_CASE("auc_multiclass") {
  SUBCASE("k = 2 reduces to binary on class 1") {
    const num::Tensor scores = num::Tensor::matrix({{0.8, 0.2}, {0.4, 0.6}, {0.3, 0.7}, {0.9, 0.1}, {0.5, 0.5}});
    const V labels{0, 1, 0, 0, 1};
    const V col1{0.2, 0.6, 0.7, 0.1, 0.5};
    // class 0 scores are 1 - class 1 scores, so both one-vs-rest AUCs agree.
    CHECK(auc_multiclass(scores, labels) == doctest::Approx(auc_binary(col1, labels)).epsilon(1e-15));
  }
  SUBCASE("one-hot perfect scores") {
    const num::Tensor scores = num::Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
    CHECK(auc_multiclass(scores, V{0, 1, 2, 0}) == 1.0);
  }
  SUBCASE("three-class pairwise oracle") {
    num::Rng rng(12);
    num::Tensor scores(num::Shape{30, 3});
    V labels(30);
    for (std::size_t i = 0; i < 30; ++i) {
      labels[i] = static_cast<double>(i % 3);
      for (std::size_t c = 0; c < 3; ++c) scores.at(i, c) = std::round(rng.normal() * 3.0) / 3.0;
    }
    double expected = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      V s(30), y(30);
      for (std::size_t i = 0; i < 30; ++i) {
        s[i] = scores.at(i, c);
        y[i] = labels[i] == static_cast<double>(c) ? 1.0 : 0.0;
      }
      expected += auc_pairs(s, y) / 3.0;
    }
    CHECK(std::abs(auc_multiclass(scores, labels) - expected) < 1e-12);
  }
  CHECK_THROWS_AS(auc_multiclass(num::Tensor(num::Shape{2, 3}, 0.1), V{1, 1}), UndefinedMetricError);
}

TEST_CASE("explained variance and mse") {
  const V target{1.0, 2.5, -0.5, 4.0};
  CHECK(explained_variance(target, target) == 1.0);
  const double m = (1.0 + 2.5 - 0.5 + 4.0) / 4.0;
  CHECK(explained_variance(V(4, m), target) == doctest::Approx(0.0));
  V shifted = target;
  for (double& v : shifted) v += 3.0;
  CHECK(explained_variance(shifted, target) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(mse(shifted, target) == doctest::Approx(9.0));
  CHECK_THROWS_AS(explained_variance(V{1, 2}, V{3, 3}), UndefinedMetricError);

  CHECK(mse(target, target) == 0.0);
  V plus1 = target;
  for (double& v : plus1) v += 1.0;
  CHECK(mse(plus1, target) == 1.0);
  CHECK_THROWS_AS(mse(V{}, V{}), ContractError);

  num::Rng rng(4);
  V a(100), b(100);
  long double direct = 0.0L;
  for (std::size_t i = 0; i < 100; ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
    direct += (static_cast<long double>(a[i]) - b[i]) * (static_cast<long double>(a[i]) - b[i]);
  }
  CHECK(std::abs(mse(a, b) - static_cast<double>(direct / 100.0L)) < 1e-12);
}

TEST_CASE("pearson") {
  num::Rng rng(77);
  V a(1000), b(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    a[i] = rng.normal();
    b[i] = 0.3 * a[i] + rng.normal();
  }
  CHECK(pearson(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  V neg(1000), affine(1000), naffine(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    neg[i] = -a[i];
    affine[i] = 2.5 * a[i] + 7.0;
    naffine[i] = -0.1 * a[i] - 3.0;
  }
  CHECK(std::abs(pearson(a, neg) + 1.0) < 1e-12);
  CHECK(std::abs(pearson(a, affine) - 1.0) < 1e-12);
  CHECK(std::abs(pearson(a, naffine) + 1.0) < 1e-12);

  // Two-pass oracle in extended precision.
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= 1000;
  mb /= 1000;
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  CHECK(std::abs(pearson(a, b) - static_cast<double>(sab / std::sqrt(saa * sbb))) < 1e-12);
  CHECK_THROWS_AS(pearson(V{1, 1, 1}, V{1, 2, 3}), UndefinedMetricError);
}

TEST_CASE("multitask_gain") {
  auto auc = [](const char* name, double v) { return TaskResult{name, MetricKind::Auc, v, false}; };
  SUBCASE("identity") {
    const std::vector<TaskResult> r{auc("a", 0.7), auc("b", 0.9)};
    CHECK(multitask_gain(r, r).delta_m == 0.0);
  }
  SUBCASE("AliExpress row") {
    const auto g = multitask_gain({auc("click", 72.57), auc("conv", 86.02)}, {auc("click", 72.07), auc("conv", 85.67)});
    CHECK(std::abs(g.delta_m - 0.5512) < 1e-4);
  }
  SUBCASE("lower is better flips the sign") {
    const TaskResult m{"r", MetricKind::Mse, 0.5, true}, b{"r", MetricKind::Mse, 1.0, true};
    const auto g = multitask_gain({m}, {b});
    CHECK(g.per_task_deltas[0] == doctest::Approx(50.0));
  }
  SUBCASE("zero iff equal values") {
    const auto g = multitask_gain({auc("a", 0.8), auc("b", 0.8)}, {auc("a", 0.8), auc("b", 0.8)});
    CHECK(g.delta_m == 0.0);
    for (double d : g.per_task_deltas) CHECK(d == 0.0);
  }
  SUBCASE("errors") {
    try {
      multitask_gain({auc("a", 0.5)}, {auc("a", 0.0)});
      FAIL("expected division-by-zero error");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("'a'") != std::string::npos);
    }
    CHECK_THROWS_AS(multitask_gain({auc("a", 0.5)}, {auc("b", 0.5)}), ContractError);
    CHECK_THROWS_AS(multitask_gain({auc("a", 0.5)}, {auc("a", 0.5), auc("b", 0.5)}), ContractError);
  }
}
