#include "tfm/losses.hpp"

#include <algorithm>
#include <cstdlib>

#include "tfm/errors.hpp"
#include "tfm/ops.hpp"

namespace tfm {

template <typename T>
Tensor<T> topic_coherence(const Tensor<T>& theta_a, const Tensor<T>& theta_b,
                          const std::vector<CellPair>& pairs) {
  std::vector<std::size_t> ia, jb;
  for (const auto& [i, j] : pairs) {
    ia.push_back(i);
    jb.push_back(j);
  }
  const auto ga = ops::gather_rows(theta_a, std::span<const std::size_t>(ia));
  const auto gb = ops::gather_rows(theta_b, std::span<const std::size_t>(jb));
  return ops::sum_rows(ops::mul(ga, gb));
}

template <typename T>
Tensor<T> coarse_pos_loss(const Tensor<T>& elbo_term, const Tensor<T>& coherence) {
  if (coherence.numel() == 0) throw InsufficientDataError("coarse_pos_loss: no ground-truth matches");
  const auto log_coh = ops::sum(ops::log_clamped(coherence, static_cast<T>(kLogGuard)));
  return ops::scale(ops::add(elbo_term, log_coh), T(-1));
}

template <typename T>
Tensor<T> coarse_neg_loss(const Tensor<T>& theta_a, const Tensor<T>& theta_b,
                          const std::vector<CellPair>& positives,
                          const std::vector<std::vector<std::size_t>>& negatives) {
  if (positives.empty()) throw InsufficientDataError("coarse_neg_loss: no ground-truth matches");
  if (negatives.size() != positives.size()) throw DimensionError("coarse_neg_loss: negatives per positive");
  std::vector<CellPair> pairs;
  std::vector<T> weights;
  for (std::size_t m = 0; m < positives.size(); ++m) {
    if (negatives[m].empty()) throw ContractError("coarse_neg_loss: at least one negative per positive");
    for (std::size_t n : negatives[m]) {
      pairs.emplace_back(positives[m].first, n);
      weights.push_back(T(-1) / static_cast<T>(negatives[m].size()));
    }
  }
  const auto coh = topic_coherence(theta_a, theta_b, pairs);
  const auto logs = ops::log_clamped(ops::add_scalar(ops::scale(coh, T(-1)), T(1)), static_cast<T>(kLogGuard));
  return ops::weighted_sum(logs, std::span<const T>(weights));
}

template <typename T>
Tensor<T> fine_loss(const Tensor<T>& offset, const Tensor<T>& target, const Tensor<T>& variance) {
  if (offset.rank() != 2 || offset.shape() != target.shape() || variance.numel() != offset.dim(0))
    throw DimensionError("fine_loss: offsets, targets and variances disagree");
  const std::size_t m = offset.dim(0);
  if (m == 0) throw InsufficientDataError("fine_loss: no refined matches");
  std::vector<T> inv(m);
  for (std::size_t i = 0; i < m; ++i)
    inv[i] = T(1) / std::max(variance.values()[i], static_cast<T>(1e-6));
  const auto err = ops::sum_rows(ops::square(ops::sub(offset, target)));
  for (auto& w : inv) w /= static_cast<T>(m);
  return ops::weighted_sum(err, std::span<const T>(inv));
}

std::vector<std::size_t> sample_negatives(std::size_t positive, std::size_t gw, std::size_t gh,
                                          std::size_t n, Rng& rng) {
  const long py = static_cast<long>(positive / gw), px = static_cast<long>(positive % gw);
  std::vector<std::size_t> pool;
  for (std::size_t c = 0; c < gw * gh; ++c) {
    const long y = static_cast<long>(c / gw), x = static_cast<long>(c % gw);
    if (std::abs(y - py) <= 1 && std::abs(x - px) <= 1) continue;
    pool.push_back(c);
  }
  if (pool.empty()) throw InsufficientDataError("sample_negatives: grid too small for negatives");
  std::vector<std::size_t> out(n);
  for (auto& c : out) c = pool[rng.below(pool.size())];
  return out;
}

#define TFM_INSTANTIATE_LOSSES(T)                                                               \
  template Tensor<T> topic_coherence(const Tensor<T>&, const Tensor<T>&,                       \
                                     const std::vector<CellPair>&);                            \
  template Tensor<T> coarse_pos_loss(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> coarse_neg_loss(const Tensor<T>&, const Tensor<T>&,                       \
                                     const std::vector<CellPair>&,                             \
                                     const std::vector<std::vector<std::size_t>>&);            \
  template Tensor<T> fine_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

TFM_INSTANTIATE_LOSSES(float)
TFM_INSTANTIATE_LOSSES(double)

}  // namespace tfm
