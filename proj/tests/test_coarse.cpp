#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tfm/coarse_match.hpp"
#include "tfm/errors.hpp"
#include "tfm/gradcheck.hpp"
#include "tfm/ops.hpp"

using namespace tfm;
using T = Tensor<double>;

TEST_CASE("features are grouped by topics shared by both images") {
  const std::vector<std::uint32_t> la{2, 0, 2, 1, 3}, lb{1, 2, 2, 0, 0};
  const std::vector<std::uint32_t> all{0, 1, 2, 3}, some{2, 0};
  const auto g = group_by_topic(la, lb, all);
  CHECK(g.topics == std::vector<std::uint32_t>{0, 1, 2});
  CHECK(g.rows_a[0] == std::vector<std::size_t>{1});
  CHECK(g.rows_b[0] == std::vector<std::size_t>{3, 4});
  CHECK(g.rows_a[2] == std::vector<std::size_t>{0, 2});
  CHECK(g.flat_a() == std::vector<std::size_t>{1, 3, 0, 2});
  CHECK(g.sizes_b() == std::vector<std::size_t>{2, 1, 2});
  const auto h = group_by_topic(la, lb, some);
  CHECK(h.topics == std::vector<std::uint32_t>{0, 2});
  const std::vector<std::uint32_t> only3{3};
  CHECK(group_by_topic(la, lb, only3).size() == 0);
}

TEST_CASE("dual softmax equals the product of row and column softmaxes") {
  Rng rng(1);
  const auto a = testutil::randn({4, 6}, rng), b = testutil::randn({5, 6}, rng);
  const auto p = dual_softmax(a, b, 0.1);
  std::vector<double> s(20);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      for (std::size_t c = 0; c < 6; ++c) s[i * 5 + j] += a.at(i, c) * b.at(j, c) / 0.1;
    }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double zr = 0, zc = 0;
      for (std::size_t jj = 0; jj < 5; ++jj) zr += std::exp(s[i * 5 + jj] - s[i * 5 + j]);
      for (std::size_t ii = 0; ii < 4; ++ii) zc += std::exp(s[ii * 5 + j] - s[i * 5 + j]);
      CHECK(p.at(i, j) == doctest::Approx(1.0 / (zr * zc)).epsilon(1e-10));
      CHECK(p.at(i, j) <= 1.0);
    }
  CHECK(grad_check([&](const T& x) { return ops::sum(ops::square(dual_softmax(x, b, 0.5))); }, testutil::randn({4, 6}, rng), 1e-6) < 1e-6);
  CHECK_THROWS_AS(dual_softmax(a, b, 0.0), ContractError);
}

TEST_CASE("elbo averages valid samples per match") {
  const auto lp = T::from({2, 3}, {-1.0, -2.0, -3.0, -4.0, -5.0, -6.0}, true);
  const std::vector<char> valid{1, 0, 1, 0, 0, 0};
  const auto e = elbo(lp, valid);
  CHECK(e.item() == doctest::Approx(-2.0));
  e.backward();
  CHECK(lp.grad()[0] == doctest::Approx(0.5));
  CHECK(lp.grad()[1] == 0.0);
  CHECK(lp.grad()[4] == 0.0);
  CHECK_THROWS_AS(elbo(lp, std::vector<char>{1, 1}), DimensionError);
}

TEST_CASE("augmentation never mixes topics") {
  Rng rng(2);
  Augmenter<double> aug(8, 2, AttentionKernel::linear, rng);
  const auto fa = testutil::randn({6, 8}, rng, 1.0, false), fb = testutil::randn({5, 8}, rng, 1.0, false);
  const std::vector<std::uint32_t> la{0, 1, 0, 1, 2, 0}, lb{1, 0, 0, 1, 2}, allowed{0, 1};
  const auto groups = group_by_topic(la, lb, allowed);
  const auto out = aug(fa, fb, groups);
  REQUIRE(out.a.dim(0) == 5);

  // Perturb a topic-1 row of each image; topic-0 outputs must not move.
  auto va = std::vector<double>(fa.values().begin(), fa.values().end());
  auto vb = std::vector<double>(fb.values().begin(), fb.values().end());
  for (std::size_t c = 0; c < 8; ++c) {
    va[1 * 8 + c] += 3.0;
    vb[0 * 8 + c] -= 2.0;
  }
  const auto out2 = aug(T::from({6, 8}, va), T::from({5, 8}, vb), groups);
  const std::size_t n0a = groups.rows_a[0].size(), n0b = groups.rows_b[0].size();
  for (std::size_t r = 0; r < n0a * 8; ++r) CHECK(out.a.values()[r] == out2.a.values()[r]);
  for (std::size_t r = 0; r < n0b * 8; ++r) CHECK(out.b.values()[r] == out2.b.values()[r]);
  CHECK(testutil::max_abs_diff(out.a.values(), out2.a.values()) > 1e-6);

  // Rows outside the groups pass through unchanged.
  const auto [sa, sb] = scatter_augmented(fa, fb, groups, out);
  for (std::size_t c = 0; c < 8; ++c) CHECK(sa.at(4, c) == fa.at(4, c));

  const std::vector<std::uint32_t> none{3};
  CHECK_THROWS_AS(aug(fa, fb, group_by_topic(la, lb, none)), InsufficientDataError);
}

TEST_CASE("augmentation parameter gradients") {
  Rng rng(3);
  for (auto kernel : {AttentionKernel::linear, AttentionKernel::dot}) {
    Augmenter<double> aug(8, 2, kernel, rng);
    const auto fa = testutil::randn({6, 8}, rng, 1.0, false), fb = testutil::randn({5, 8}, rng, 1.0, false);
    const std::vector<std::uint32_t> la{0, 1, 0, 1, 2, 0}, lb{1, 0, 0, 1, 2}, allowed{0, 1, 2};
    const auto groups = group_by_topic(la, lb, allowed);
    auto loss = [&] {
      const auto o = aug(fa, fb, groups);
      return ops::sum(ops::log(dual_softmax(o.a, o.b, 0.5)));
    };
    Registry<double> reg;
    aug.collect("coarse", reg);
    for (auto& p : reg.params) {
      CAPTURE(p.name);
      CHECK(testutil::param_grad_error(loss, p.tensor, 5) < 1e-5);
    }
  }
}

TEST_CASE("match selection agrees with the brute-force rule") {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<GroupProbabilities> groups;
    const std::size_t count = 1 + rng.below(3);
    for (std::size_t g = 0; g < count; ++g) groups.push_back(oracle::random_group(rng, static_cast<std::uint32_t>(g)));
    const double tau = 0.05 + 0.9 * rng.uniform();
    for (bool mutual : {true, false}) {
      CAPTURE(trial);
      CHECK(oracle::same_matches(select_coarse_matches(groups, tau, mutual), oracle::select_matches(groups, tau, mutual)));
    }
  }
}

TEST_CASE("match selection edge cases") {
  GroupProbabilities g{0, {0, 1}, {0, 1}, {0.5, 0.5, 0.5, 0.5}};
  // All entries tie: only the first of row 0 and column 0 survives.
  const auto m = select_coarse_matches({g}, 0.2);
  REQUIRE(m.size() == 1);
  CHECK(m[0].i == 0);
  CHECK(m[0].j == 0);
  CHECK(select_coarse_matches({g}, 0.999).empty());
  CHECK_THROWS_AS(select_coarse_matches({g}, 1.0), ContractError);
  CHECK_THROWS_AS(select_coarse_matches({g}, 0.0), ContractError);
  // A pair found in two groups keeps its higher confidence.
  GroupProbabilities g1{1, {3}, {4}, {0.6}}, g2{2, {3}, {4}, {0.8}};
  const auto d = select_coarse_matches({g1, g2}, 0.2);
  REQUIRE(d.size() == 1);
  CHECK(d[0].confidence == 0.8);
  CHECK(d[0].topic == 2);
}
