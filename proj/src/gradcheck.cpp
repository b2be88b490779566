#include "tfm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tfm/errors.hpp"
#include "tfm/rng.hpp"

namespace tfm {

double grad_check(const ScalarFunction& f, const Tensor<double>& x, double eps,
                  std::size_t max_coords, std::uint64_t seed) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ContractError("grad_check: eps outside [1e-7, 1e-3]");

  auto leaf = x.detach();
  leaf.set_requires_grad(true);
  const auto y = f(leaf);
  if (!y.defined() || y.numel() != 1) throw ContractError("grad_check: function output is not a scalar");
  std::vector<double> analytic(leaf.numel(), 0.0);
  if (y.requires_grad()) {
    y.backward();
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
  }

  std::vector<std::size_t> coords(leaf.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (max_coords > 0 && max_coords < coords.size()) {
    Rng rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
    std::sort(coords.begin(), coords.end());
  }

  NoGradGuard guard;
  auto probe = x.detach();
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double orig = probe.values()[i];
    probe.mutable_values()[i] = orig + eps;
    const double fp = f(probe).item();
    probe.mutable_values()[i] = orig - eps;
    const double fm = f(probe).item();
    probe.mutable_values()[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) /
                       std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace tfm
