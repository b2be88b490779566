#include "tfm/optim.hpp"

#include <cmath>
#include <numbers>

namespace tfm {

template <typename T>
Adam<T>::Adam(const Registry<T>& reg, double beta1, double beta2, double eps)
    : reg_(reg), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : reg_.params) {
    m.emplace_back(p.tensor.numel(), T(0));
    v.emplace_back(p.tensor.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  ++steps;
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T c1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(steps)));
  const T c2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(steps)));
  const T rate = static_cast<T>(lr), eps = static_cast<T>(eps_);
  for (std::size_t k = 0; k < reg_.params.size(); ++k) {
    auto& t = reg_.params[k].tensor;
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    auto p = t.mutable_values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[k][i] = b1 * m[k][i] + (T(1) - b1) * g[i];
      v[k][i] = b2 * v[k][i] + (T(1) - b2) * g[i] * g[i];
      if (rate != T(0)) p[i] -= rate * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + eps);
    }
  }
}

double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

template <typename T>
double clip_grad_norm(Registry<T>& reg, double max_norm) {
  double sq = 0.0;
  for (const auto& p : reg.params)
    if (p.tensor.has_grad())
      for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : reg.params)
      if (p.tensor.has_grad())
        for (auto& g : p.tensor.mutable_grad()) g *= s;
  }
  return norm;
}

template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm(Registry<float>&, double);
template double clip_grad_norm(Registry<double>&, double);

}  // namespace tfm
