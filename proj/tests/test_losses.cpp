#include <doctest.h>

#include <cmath>

#include "rankpyr/errors.hpp"
#include "rankpyr/losses.hpp"
#include "rankpyr/rng.hpp"

using namespace rankpyr;
using namespace rankpyr::losses;
using autograd::Var;

namespace {

// Independent brute-force route: explicit double loops, no shared helpers.
double brute_force_rank_loss(const std::vector<std::vector<std::vector<double>>>& counts, double eps) {
  const size_t n_images = counts.size();
  const size_t k_levels = counts[0].size();
  const size_t m = counts[0][0].size() - 1;
  double total = 0.0;
  for (size_t i = 0; i < n_images; ++i)
    for (size_t k = 0; k < k_levels; ++k)
      for (size_t a = 0; a + 1 <= m; ++a)
        for (size_t b = a + 1; b <= m; ++b) {
          const double v = counts[i][k][a] - counts[i][k][b] + eps;
          total += v > 0.0 ? v : 0.0;
        }
  return total * 2.0 / (static_cast<double>(n_images) * k_levels * m * (m + 1));
}

std::vector<std::vector<std::vector<double>>> random_counts(int n, int k, int m1, Rng& rng) {
  std::vector<std::vector<std::vector<double>>> c(n);
  for (auto& img : c) {
    img.resize(k);
    for (auto& lvl : img) {
      lvl.resize(m1);
      for (auto& v : lvl) v = rng.uniform(0.0, 50.0);
    }
  }
  return c;
}

}  // namespace

TEST_CASE("supervised_l2: identity, hand value, batch-mean normalization") {
  Tensor a(1, 4, 4, 0.5);
  CHECK(supervised_l2({a}, {a}) == 0.0);

  Tensor pred(1, 2, 2), gt(1, 2, 2);
  pred.data = {3.0, 0.0, 0.0, 4.0};
  gt.data = {0.0, 0.0, 0.0, 0.0};
  CHECK(supervised_l2({pred}, {gt}) == doctest::Approx(12.5));

  // Duplicating every sample leaves the value unchanged.
  CHECK(supervised_l2({pred, pred}, {gt, gt}) == doctest::Approx(12.5));

  Tensor bad(1, 2, 3);
  CHECK_THROWS_AS(supervised_l2({pred}, {bad}), InvalidInput);
  CHECK_THROWS_AS(supervised_l2({}, {}), InvalidInput);
}

TEST_CASE("margin_rank_pair: ordered, violated, margin at equality") {
  CHECK(margin_rank_pair(3.0, 5.0, 0.0) == 0.0);
  CHECK(margin_rank_pair(5.0, 3.0, 0.0) == 2.0);
  CHECK(margin_rank_pair(5.0, 5.0, 1.0) == 1.0);
  CHECK(margin_rank_pair(4.0, 5.0, 1.0) == 0.0);  // zero iff small + eps <= large
  CHECK_THROWS_AS(margin_rank_pair(1.0, 2.0, -0.5), InvalidParameter);
}

TEST_CASE("pyramid_rank_loss: normalizer, monotone-zero, single pair") {
  // All counts monotone with slack >= eps -> 0.
  std::vector<std::vector<std::vector<double>>> mono(2);
  for (auto& img : mono) img.assign(3, {1.0, 2.0, 3.0, 4.0, 5.0});
  CHECK(pyramid_rank_loss(mono, 0.5) == 0.0);

  // N=1, K=3, M=4 with all-unit hinges: every pair violates by exactly 1.
  std::vector<std::vector<std::vector<double>>> unit(1);
  unit[0].assign(3, {1.0, 1.0, 1.0, 1.0, 1.0});
  CHECK(pyramid_rank_loss(unit, 1.0) == doctest::Approx(1.0));

  // N=1, K=1, M=1 single violated pair: normalizer 2/(1*1*1*2) = 1.
  std::vector<std::vector<std::vector<double>>> single{{{2.0, 1.0}}};
  CHECK(pyramid_rank_loss(single, 0.0) == doctest::Approx(1.0));

  // Missing patch in one level.
  std::vector<std::vector<std::vector<double>>> ragged{{{1.0, 2.0, 3.0}, {1.0, 2.0}}};
  CHECK_THROWS_AS(pyramid_rank_loss(ragged, 0.0), InvalidInput);
}

TEST_CASE("pyramid_rank_loss matches the brute-force route on random configs") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 3));
    const int k = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int m1 = 2 + static_cast<int>(rng.uniform_int(0, 4));
    const double eps = rng.uniform(0.0, 2.0);
    auto counts = random_counts(n, k, m1, rng);
    const double got = pyramid_rank_loss(counts, eps);
    const double expect = brute_force_rank_loss(counts, eps);
    CHECK(got == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("pyramid_rank_loss is invariant to replicating the batch") {
  Rng rng(13);
  auto counts = random_counts(3, 3, 5, rng);
  auto doubled = counts;
  doubled.insert(doubled.end(), counts.begin(), counts.end());
  CHECK(pyramid_rank_loss(doubled, 0.3) == doctest::Approx(pyramid_rank_loss(counts, 0.3)).epsilon(1e-12));
}

TEST_CASE("total_loss: affine combination and defaults") {
  CHECK(total_loss(2.0, 0.5, 4.0) == doctest::Approx(4.0));
  CHECK(total_loss(1.25, 99.0, 0.0) == 1.25);  // lambda = 0 reduces to supervised
  CHECK(total_loss(1.0, 2.0, 1.0) == doctest::Approx(3.0));
  CHECK_THROWS_AS(total_loss(1.0, 1.0, -1.0), InvalidParameter);
}

TEST_CASE("non-negativity of both loss terms") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto counts = random_counts(2, 2, 4, rng);
    CHECK(pyramid_rank_loss(counts, rng.uniform(0.0, 1.0)) >= 0.0);
  }
  Tensor a(1, 3, 3), b(1, 3, 3);
  for (double& v : a.data) v = rng.uniform(-1, 1);
  for (double& v : b.data) v = rng.uniform(-1, 1);
  CHECK(supervised_l2({a}, {b}) >= 0.0);
}

TEST_CASE("hinge gradients: finite differences away from kinks, exact zero when satisfied") {
  Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    auto counts = random_counts(1, 2, 4, rng);
    const double eps = 0.25;

    // Build Var counts and the Var loss.
    std::vector<std::vector<std::vector<Var>>> vars(1);
    vars[0].resize(counts[0].size());
    for (size_t k = 0; k < counts[0].size(); ++k)
      for (double v : counts[0][k]) vars[0][k].push_back(autograd::leaf(Tensor::scalar(v), true));
    Var loss = pyramid_rank_loss_var(vars, eps);
    CHECK(loss->scalar() == doctest::Approx(pyramid_rank_loss(counts, eps)).epsilon(1e-12));
    autograd::backward(loss);

    const double h = 1e-7;
    for (size_t k = 0; k < counts[0].size(); ++k) {
      for (size_t m = 0; m < counts[0][k].size(); ++m) {
        // Only check when every hinge containing this count is away from its
        // kink by more than 1e-3.
        bool near_kink = false;
        for (size_t other = 0; other < counts[0][k].size(); ++other) {
          if (other == m) continue;
          const size_t s = std::min(m, other), l = std::max(m, other);
          if (std::abs(counts[0][k][s] - counts[0][k][l] + eps) <= 1e-3) near_kink = true;
        }
        if (near_kink) continue;
        auto perturbed = counts;
        perturbed[0][k][m] += h;
        const double fp = pyramid_rank_loss(perturbed, eps);
        perturbed[0][k][m] -= 2 * h;
        const double fm = pyramid_rank_loss(perturbed, eps);
        const double fd = (fp - fm) / (2 * h);
        const double an = vars[0][k][m]->grad.empty() ? 0.0 : vars[0][k][m]->grad.data[0];
        CHECK(std::abs(an - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("zero-loss fixed point: satisfied pairs give exactly zero gradient") {
  std::vector<std::vector<std::vector<Var>>> vars(1);
  vars[0].resize(2);
  for (int k = 0; k < 2; ++k)
    for (double v : {1.0, 5.0, 10.0, 20.0, 40.0}) vars[0][k].push_back(autograd::leaf(Tensor::scalar(v), true));
  Var loss = pyramid_rank_loss_var(vars, 0.5);
  CHECK(loss->scalar() == 0.0);
  autograd::backward(loss);
  for (const auto& lvl : vars[0])
    for (const auto& v : lvl) CHECK((v->grad.empty() || v->grad.data[0] == 0.0));
}

TEST_CASE("Var path agrees with scalar path for the supervised loss") {
  Rng rng(23);
  std::vector<Tensor> preds, gts;
  std::vector<Var> pred_vars;
  for (int i = 0; i < 3; ++i) {
    Tensor p(1, 5, 5), g(1, 5, 5);
    for (double& v : p.data) v = rng.uniform(0, 3);
    for (double& v : g.data) v = rng.uniform(0, 3);
    preds.push_back(p);
    gts.push_back(g);
    pred_vars.push_back(autograd::leaf(p, true));
  }
  Var var = supervised_l2_var(pred_vars, gts);
  CHECK(var->scalar() == doctest::Approx(supervised_l2(preds, gts)).epsilon(1e-12));

  // d/dpred of (1/2N) sum ||p - g||^2 is (p - g) / N.
  autograd::backward(var);
  for (int i = 0; i < 3; ++i)
    for (size_t j = 0; j < preds[i].size(); ++j)
      CHECK(pred_vars[i]->grad.data[j] ==
            doctest::Approx((preds[i].data[j] - gts[i].data[j]) / 3.0).epsilon(1e-12));
}

TEST_CASE("LossBreakdown: exact total identity and JSON shape") {
  LossBreakdown b;
  b.supervised = 1.25;
  b.ranking = 0.75;
  b.lambda = 2.0;
  b.total = b.supervised + b.lambda * b.ranking;
  b.pair_terms.push_back({0, 1, 2, 3, 0.5});
  const auto j = b.to_json();
  CHECK(j.at("total").get<double>() == b.supervised + b.lambda * b.ranking);
  CHECK(j.at("pair_terms").size() == 1);
  CHECK(j.at("pair_terms")[0][4].get<double>() == 0.5);
}
