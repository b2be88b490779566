#include <doctest.h>

#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "tfm/attention.hpp"
#include "tfm/errors.hpp"
#include "tfm/gradcheck.hpp"
#include "tfm/layers.hpp"
#include "tfm/ops.hpp"

using namespace tfm;
using testutil::randn;
using testutil::randu;
using T = Tensor<double>;

namespace {

constexpr double kGradTol = 1e-5;

// Reference attention computed with plain loops, one head at a time.
std::vector<double> naive_attention(const T& q, const T& k, const T& v, std::size_t heads, bool linear) {
  const std::size_t nq = q.dim(0), nk = k.dim(0), d = q.dim(1), dh = d / heads;
  std::vector<double> out(nq * d, 0.0);
  auto phi = [](double x) { return x > 0 ? x + 1.0 : std::exp(x); };
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<double> w(nk);
      for (std::size_t j = 0; j < nk; ++j) {
        double s = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c)
          s += linear ? phi(q.at(i, c)) * phi(k.at(j, c)) : q.at(i, c) * k.at(j, c);
        w[j] = linear ? s : s / std::sqrt(static_cast<double>(dh));
      }
      if (!linear) {
        const double mx = *std::max_element(w.begin(), w.end());
        for (auto& x : w) x = std::exp(x - mx);
      }
      const double z = std::accumulate(w.begin(), w.end(), 0.0);
      for (std::size_t c = h * dh; c < (h + 1) * dh; ++c)
        for (std::size_t j = 0; j < nk; ++j) out[i * d + c] += w[j] / z * v.at(j, c);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("tensor construction checks extents") {
  CHECK_THROWS_AS(T::from({2, 3}, std::vector<double>(5)), DimensionError);
  CHECK(T::from({2, 3}, std::vector<double>(6, 1.0)).numel() == 6);
  CHECK_THROWS_AS(T::from({2}, {1.0, 2.0}).item(), DimensionError);
}

TEST_CASE("rng streams are pure functions of key and position") {
  Rng a(7), b(7);
  for (int i = 0; i < 10; ++i) CHECK(a() == b());
  Rng root(3);
  auto s1 = root.split(5), s2 = root.split(5), s3 = root.split(6);
  CHECK(s1() == s2());
  CHECK(s1() != s3());
  Rng u(11);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK((x >= 0.0 && x < 1.0));
  }
}

TEST_CASE("matmul agrees with a loop") {
  Rng rng(1);
  auto a = randn({3, 4}, rng), b = randn({4, 5}, rng);
  auto c = ops::matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
      CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
  CHECK_THROWS_AS(ops::matmul(a, a), DimensionError);
}

TEST_CASE("elementwise and reduction gradients") {
  Rng rng(2);
  const auto x = randu({3, 4}, rng, 0.2, 2.0);
  const auto other = randu({3, 4}, rng, 0.5, 1.5, false);
  const auto row = randn({4}, rng, 1.0, false);
  const auto col = randu({3}, rng, 0.5, 2.0, false);
  std::vector<double> w{0.5, -1.0, 2.0, 0.25, 1.0, 3.0, -0.5, 0.1, 0.2, 0.3, 0.4, 0.5};

  const std::vector<std::pair<const char*, ScalarFunction>> cases{
      {"add", [&](const T& a) { return ops::sum(ops::square(ops::add(a, other))); }},
      {"sub", [&](const T& a) { return ops::sum(ops::square(ops::sub(other, a))); }},
      {"mul", [&](const T& a) { return ops::sum(ops::mul(a, ops::mul(a, other))); }},
      {"div", [&](const T& a) { return ops::sum(ops::div(other, a)); }},
      {"exp-log", [&](const T& a) { return ops::mean(ops::mul(ops::exp(a), ops::log(a))); }},
      {"log_clamped", [&](const T& a) { return ops::sum(ops::log_clamped(a, 1e-9)); }},
      {"relu", [&](const T& a) { return ops::sum(ops::square(ops::relu(ops::add_scalar(a, -1.0)))); }},
      {"gelu", [&](const T& a) { return ops::sum(ops::gelu(ops::add_scalar(a, -1.0))); }},
      {"elu+1", [&](const T& a) { return ops::sum(ops::square(ops::elu_plus_one(ops::add_scalar(a, -1.3)))); }},
      {"weighted_sum", [&](const T& a) { return ops::weighted_sum(ops::square(a), std::span<const double>(w)); }},
      {"sum_rows", [&](const T& a) { return ops::sum(ops::square(ops::sum_rows(a))); }},
      {"add_row", [&](const T& a) { return ops::sum(ops::square(ops::add_row(a, row))); }},
      {"mul_row", [&](const T& a) { return ops::sum(ops::square(ops::mul_row(a, row))); }},
      {"div_col", [&](const T& a) { return ops::sum(ops::square(ops::div_col(a, col))); }},
      {"scale", [&](const T& a) { return ops::sum(ops::square(ops::scale(a, -2.5))); }},
      {"softmax_rows", [&](const T& a) { return ops::sum(ops::mul(ops::softmax_rows(a), other)); }},
      {"softmax_cols", [&](const T& a) { return ops::sum(ops::mul(ops::softmax_cols(a), other)); }},
      {"transpose", [&](const T& a) { return ops::sum(ops::matmul(ops::transpose(a), other)); }},
      {"matmul_nt", [&](const T& a) { return ops::sum(ops::square(ops::matmul_nt(a, other))); }},
      {"reshape", [&](const T& a) { return ops::sum(ops::square(ops::matmul(ops::reshape(a, {4, 3}), a))); }},
      {"slice_cols", [&](const T& a) { return ops::sum(ops::square(ops::slice_cols(a, 1, 2))); }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    CHECK(grad_check(f, x, 1e-6) < kGradTol);
  }
}

TEST_CASE("indexing gradients") {
  Rng rng(3);
  const auto x = randn({5, 3}, rng);
  const std::vector<std::size_t> rows{4, 0, 0, 2};
  const std::vector<std::size_t> put{1, 3, 4};
  const std::vector<std::size_t> flat{0, 7, 7, 14, 3};
  const auto base = randn({5, 3}, rng, 1.0, false);
  CHECK(grad_check([&](const T& a) { return ops::sum(ops::square(ops::gather_rows(a, std::span<const std::size_t>(rows)))); }, x, 1e-6) < kGradTol);
  CHECK(grad_check([&](const T& a) {
          return ops::sum(ops::square(ops::index_put_rows(base, std::span<const std::size_t>(put), ops::slice_cols(ops::reshape(a, {3, 5}), 0, 3))));
        }, x, 1e-6) < kGradTol);
  CHECK(grad_check([&](const T& a) {
          return ops::sum(ops::square(ops::scatter_add_flat(ops::gather_flat(a, std::span<const std::size_t>(flat)), std::span<const std::size_t>(flat), 15)));
        }, x, 1e-6) < kGradTol);
  CHECK(grad_check([&](const T& a) { return ops::sum(ops::square(ops::concat_cols<double>({a, ops::exp(a)}))); }, x, 1e-6) < kGradTol);
  CHECK(grad_check([&](const T& a) { return ops::sum(ops::square(ops::concat_rows<double>({a, ops::exp(a)}))); }, x, 1e-6) < kGradTol);
  const std::vector<std::size_t> dup{1, 1}, two{0, 1};
  CHECK_THROWS_AS(ops::index_put_rows(base, std::span<const std::size_t>(dup), ops::gather_rows(x, std::span<const std::size_t>(two))), ContractError);
}

TEST_CASE("layer norm and linear gradients") {
  Rng rng(4);
  const auto x = randn({4, 6}, rng);
  const auto gamma = randn({6}, rng), beta = randn({6}, rng);
  CHECK(grad_check([&](const T& a) { return ops::sum(ops::square(ops::layer_norm_rows(a, gamma, beta, 1e-5))); }, x, 1e-6) < kGradTol);
  CHECK(grad_check([&](const T& g) { return ops::sum(ops::square(ops::layer_norm_rows(x, g, beta, 1e-5))); }, gamma, 1e-6) < kGradTol);
  // Each normalized row has zero mean and unit variance before the affine map.
  const auto y = ops::layer_norm_rows(x, T::full({6}, 1.0), T::zeros({6}), 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 6; ++c) m += y.at(r, c) / 6;
    for (std::size_t c = 0; c < 6; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m) / 6;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("conv2d matches a direct loop and has correct gradients") {
  Rng rng(5);
  const auto x = randn({2, 3, 6, 5}, rng);
  const auto w = randn({4, 3, 3, 3}, rng);
  const auto b = randn({4}, rng);
  for (std::size_t stride : {1u, 2u}) {
    const auto y = ops::conv2d(x, w, b, stride, 1);
    const std::size_t ho = (6 + 2 - 3) / stride + 1, wo = (5 + 2 - 3) / stride + 1;
    REQUIRE(y.shape() == Shape{2, 4, ho, wo});
    double worst = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            double s = b.values()[o];
            for (std::size_t c = 0; c < 3; ++c)
              for (std::size_t ky = 0; ky < 3; ++ky)
                for (std::size_t kx = 0; kx < 3; ++kx) {
                  const long iy = static_cast<long>(oy * stride + ky) - 1, ix = static_cast<long>(ox * stride + kx) - 1;
                  if (iy < 0 || ix < 0 || iy >= 6 || ix >= 5) continue;
                  s += x.values()[((n * 3 + c) * 6 + iy) * 5 + ix] * w.values()[((o * 3 + c) * 3 + ky) * 3 + kx];
                }
            worst = std::max(worst, std::abs(s - y.values()[((n * 4 + o) * ho + oy) * wo + ox]));
          }
    CHECK(worst < 1e-12);
  }
  CHECK(grad_check([&](const T& a) { return ops::sum(ops::square(ops::conv2d(a, w, b, 2, 1))); }, x, 1e-6) < kGradTol);
  CHECK(grad_check([&](const T& k) { return ops::sum(ops::square(ops::conv2d(x, k, b, 1, 1))); }, w, 1e-6) < kGradTol);
}

TEST_CASE("batch norm normalizes in training mode and updates running stats") {
  Rng rng(6);
  const auto x = randn({2, 3, 4, 4}, rng, 3.0);
  std::vector<double> rm(3, 0.0), rv(3, 1.0);
  const auto y = ops::batch_norm2d(x, T::full({3}, 1.0), T::zeros({3}), rm, rv, true, 0.1, 1e-5);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t p = 0; p < 16; ++p) m += y.values()[(n * 3 + c) * 16 + p] / 32;
    CHECK(std::abs(m) < 1e-12);
    CHECK(rm[c] != 0.0);
  }
  const auto gamma = randn({3}, rng);
  const auto weight = randn({2, 3, 4, 4}, rng, 1.0, false);
  const auto x1 = randn({2, 3, 4, 4}, rng);
  CHECK(grad_check([&](const T& a) {
          auto m = rm, v = rv;
          return ops::sum(ops::mul(ops::square(ops::batch_norm2d(a, gamma, T::zeros({3}), m, v, true, 0.1, 1e-5)), weight));
        }, x1, 1e-6) < kGradTol);
  CHECK(grad_check([&](const T& a) {
          auto m = rm, v = rv;
          return ops::sum(ops::mul(ops::square(ops::batch_norm2d(a, gamma, T::zeros({3}), m, v, false, 0.1, 1e-5)), weight));
        }, x1, 1e-6) < kGradTol);
}

TEST_CASE("bilinear upsampling uses half-pixel centers") {
  const auto x = T::from({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto y = ops::upsample2x(x);
  const std::vector<double> expected{1.0, 1.25, 1.75, 2.0, 1.5, 1.75, 2.25, 2.5,
                                     2.5, 2.75, 3.25, 3.5, 3.0, 3.25, 3.75, 4.0};
  CHECK(testutil::max_abs_diff(y.values(), expected) < 1e-15);
  Rng rng(7);
  const auto z = randn({1, 2, 3, 2}, rng);
  CHECK(grad_check([&](const T& a) { return ops::sum(ops::square(ops::crop2d(ops::upsample2x(a), 5, 3))); }, z, 1e-6) < kGradTol);
}

TEST_CASE("attention kernels agree with a loop implementation") {
  Rng rng(8);
  const auto q = randn({5, 8}, rng), k = randn({7, 8}, rng), v = randn({7, 8}, rng);
  for (std::size_t heads : {1u, 2u, 4u}) {
    CAPTURE(heads);
    CHECK(testutil::max_abs_diff(dot_product_attention(q, k, v, heads).values(), naive_attention(q, k, v, heads, false)) < 1e-12);
    CHECK(testutil::max_abs_diff(linear_attention(q, k, v, heads).values(), naive_attention(q, k, v, heads, true)) < 1e-12);
  }
}

TEST_CASE("segmented attention is block diagonal") {
  Rng rng(9);
  const auto q = randn({6, 4}, rng), k = randn({5, 4}, rng), v = randn({5, 4}, rng);
  const std::vector<std::size_t> qs{2, 0, 4}, ks{3, 1, 1};
  for (auto kernel : {AttentionKernel::dot, AttentionKernel::linear}) {
    const auto out = segmented_attention(q, k, v, 2, qs, ks, kernel);
    const std::vector<std::size_t> q0{0, 1}, k0{0, 1, 2}, q2{2, 3, 4, 5}, k2{4};
    auto block = [&](const std::vector<std::size_t>& qr, const std::vector<std::size_t>& kr) {
      const auto qq = ops::gather_rows(q, std::span<const std::size_t>(qr));
      const auto kk = ops::gather_rows(k, std::span<const std::size_t>(kr));
      const auto vv = ops::gather_rows(v, std::span<const std::size_t>(kr));
      return naive_attention(qq, kk, vv, 2, kernel == AttentionKernel::linear);
    };
    auto expected = block(q0, k0);
    const auto tail = block(q2, k2);
    expected.insert(expected.end(), tail.begin(), tail.end());
    CHECK(testutil::max_abs_diff(out.values(), expected) < 1e-12);
    CHECK(grad_check([&](const T& a) { return ops::sum(ops::square(segmented_attention(a, k, v, 2, std::span<const std::size_t>(qs), std::span<const std::size_t>(ks), kernel))); },
                     randn({6, 4}, rng), 1e-6) < kGradTol);
    CHECK(grad_check([&](const T& a) { return ops::sum(ops::square(segmented_attention(q, a, ops::exp(a), 2, std::span<const std::size_t>(qs), std::span<const std::size_t>(ks), kernel))); },
                     randn({5, 4}, rng), 1e-6) < kGradTol);
  }
  const std::vector<std::size_t> bad{2, 1, 3}, badk{3, 0, 2};
  CHECK_THROWS_AS(segmented_attention(q, k, v, 2, bad, badk, AttentionKernel::dot), Error);
}

TEST_CASE("linear attention rejects a vanishing normalizer") {
  const auto q = T::full({1, 2}, -800.0);
  const auto k = T::full({2, 2}, -800.0);
  CHECK_THROWS_AS(linear_attention(q, k, k, 1), NumericError);
  CHECK_THROWS_AS(parse_kernel("cosine"), ConfigError);
}

TEST_CASE("attention flop counts follow the closed forms") {
  Rng rng(10);
  const auto q = randn({6, 8}, rng), k = randn({10, 8}, rng);
  FlopCounter dot, lin;
  dot_product_attention(q, k, k, 2, &dot);
  linear_attention(q, k, k, 2, &lin);
  CHECK(dot.total() == 2ull * 6 * 10 * 8);
  CHECK(lin.total() == 2ull * ((10 + 6) * 4 * 4 + (10 + 6) * 4));
  CHECK(attention_core_flops(AttentionKernel::linear, 6, 10, 8, 2) == lin.total());
}

TEST_CASE("attention layer gradients reach every parameter") {
  Rng rng(11);
  for (auto kernel : {AttentionKernel::dot, AttentionKernel::linear}) {
    AttentionLayer<double> layer(8, 2, kernel, rng);
    const auto src = randn({4, 8}, rng, 1.0, false);
    CHECK(grad_check([&](const T& a) { return ops::sum(ops::square(layer(a, src))); }, randn({3, 8}, rng), 1e-6) < kGradTol);
    Registry<double> reg;
    layer.collect("layer", reg);
    for (auto& p : reg.params) {
      CAPTURE(p.name);
      CHECK(testutil::param_grad_error([&] { return ops::sum(ops::square(layer(src, src))); }, p.tensor, 8) < kGradTol);
    }
  }
}

TEST_CASE("no-grad mode records no history") {
  Rng rng(12);
  const auto x = randn({2, 2}, rng);
  NoGradGuard guard;
  const auto y = ops::exp(x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("grad_check validates its step size") {
  const auto x = T::from({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(grad_check([](const T& a) { return ops::sum(a); }, x, 1e-2), ContractError);
  CHECK_THROWS_AS(grad_check([](const T& a) { return a; }, x, 1e-6), ContractError);
}
