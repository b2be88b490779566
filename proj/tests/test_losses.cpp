#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "tfm/errors.hpp"
#include "tfm/gradcheck.hpp"
#include "tfm/losses.hpp"
#include "tfm/ops.hpp"

using namespace tfm;
using T = Tensor<double>;

namespace {

T simplex(std::size_t n, std::size_t k, Rng& rng) {
  return T::from({n, k}, testutil::random_simplex_rows(n, k, rng), true);
}

// Logits -> row softmax, so grad checks stay on the simplex.
T soft(const T& logits) { return ops::softmax_rows(logits); }

}  // namespace

TEST_CASE("topic coherence is the inner product of topic rows") {
  Rng rng(1);
  const auto ta = simplex(5, 3, rng), tb = simplex(4, 3, rng);
  const std::vector<CellPair> pairs{{0, 1}, {4, 3}, {2, 2}};
  const auto coh = topic_coherence(ta, tb, pairs);
  for (std::size_t m = 0; m < pairs.size(); ++m) {
    double s = 0;
    for (std::size_t k = 0; k < 3; ++k) s += ta.at(pairs[m].first, k) * tb.at(pairs[m].second, k);
    CHECK(coh.values()[m] == doctest::Approx(s).epsilon(1e-14));
  }
}

TEST_CASE("positive coarse loss") {
  const auto e = T::scalar(-3.0, true);
  const auto coh = T::from({2}, {0.5, 0.25}, true);
  CHECK(coarse_pos_loss(e, coh).item() == doctest::Approx(3.0 - std::log(0.5) - std::log(0.25)));
  // Disjoint one-hot topics hit the guard.
  const auto zero = T::from({1}, {0.0}, true);
  const auto l = coarse_pos_loss(T::scalar(0.0), zero);
  CHECK(l.item() == doctest::Approx(-std::log(kLogGuard)));
  l.backward();
  CHECK(zero.grad()[0] == 0.0);
}

TEST_CASE("negative coarse loss") {
  Rng rng(2);
  const auto ta = simplex(6, 4, rng), tb = simplex(6, 4, rng);
  const std::vector<CellPair> pos{{0, 1}, {3, 5}};
  const std::vector<std::vector<std::size_t>> neg{{4, 2, 4}, {0, 1, 2}};
  double expected = 0;
  for (std::size_t m = 0; m < 2; ++m)
    for (auto j : neg[m]) {
      double c = 0;
      for (std::size_t k = 0; k < 4; ++k) c += ta.at(pos[m].first, k) * tb.at(j, k);
      expected -= std::log(1 - c) / 3.0;
    }
  CHECK(coarse_neg_loss(ta, tb, pos, neg).item() == doctest::Approx(expected).epsilon(1e-13));
  // Identical one-hot topics give the clipped maximum.
  const auto one = T::from({1, 2}, {1.0, 0.0});
  CHECK(coarse_neg_loss(one, one, {{0, 0}}, {{0}}).item() == doctest::Approx(-std::log(kLogGuard)));
}

TEST_CASE("fine loss weights squared errors by inverse variance") {
  CHECK(fine_loss(T::from({1, 2}, {1.0, 0.0}), T::zeros({1, 2}), T::from({1}, {1.0})).item() == doctest::Approx(1.0));
  const auto off = T::from({2, 2}, {1.0, 1.0, 0.0, 2.0}, true);
  const auto var = T::from({2}, {2.0, 0.0}, true);
  const auto l = fine_loss(off, T::zeros({2, 2}), var);
  CHECK(l.item() == doctest::Approx(0.5 * (2.0 / 2.0 + 4.0 / 1e-6)));
  l.backward();
  CHECK(off.has_grad());
  // No gradient reaches the variance.
  for (double g : var.has_grad() ? std::vector<double>(var.grad().begin(), var.grad().end()) : std::vector<double>{})
    CHECK(g == 0.0);
  CHECK_THROWS_AS(fine_loss(T::zeros({0, 2}), T::zeros({0, 2}), T::zeros({0})), InsufficientDataError);
}

TEST_CASE("loss gradients against finite differences") {
  Rng rng(3);
  const auto la = testutil::randn({6, 4}, rng), lb = testutil::randn({6, 4}, rng, 1.0, false);
  const std::vector<CellPair> pos{{0, 1}, {3, 5}, {2, 2}};
  const std::vector<std::vector<std::size_t>> neg{{4, 2}, {0, 1}, {5, 5}};
  const auto e = T::scalar(-1.5);
  CHECK(grad_check([&](const T& x) { return coarse_pos_loss(e, topic_coherence(soft(x), soft(lb), pos)); }, la, 1e-6) < 1e-4);
  CHECK(grad_check([&](const T& x) { return coarse_neg_loss(soft(x), soft(lb), pos, neg); }, la, 1e-6) < 1e-4);
  const auto target = testutil::randn({3, 2}, rng, 1.0, false);
  const auto var = testutil::randu({3}, rng, 0.3, 2.0, false);
  CHECK(grad_check([&](const T& o) { return fine_loss(o, target, var); }, testutil::randn({3, 2}, rng), 1e-6) < 1e-4);
  // Perturbing the variance changes the value but the analytic gradient
  // with respect to it stays zero.
  auto v = testutil::randu({3}, rng, 0.3, 2.0, true);
  const auto off = testutil::randn({3, 2}, rng, 1.0, false);
  fine_loss(off, target, v).backward();
  for (double g : v.grad()) CHECK(g == 0.0);
}

TEST_CASE("negative cells avoid the positive neighborhood") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const std::size_t pos = rng.below(64);
    for (auto c : sample_negatives(pos, 8, 8, 5, rng)) {
      CHECK(c < 64);
      const long dy = long(c / 8) - long(pos / 8), dx = long(c % 8) - long(pos % 8);
      CHECK((std::abs(dy) > 1 || std::abs(dx) > 1));
    }
  }
  CHECK_THROWS_AS(sample_negatives(4, 3, 3, 2, rng), InsufficientDataError);
}
