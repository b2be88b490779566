#pragma once

#include <utility>
#include <vector>

#include "tfm/rng.hpp"
#include "tfm/tensor.hpp"

namespace tfm {

inline constexpr double kLogGuard = 1e-9;

using CellPair = std::pair<std::size_t, std::size_t>;

/// [M] vector of sum_k theta_A[i,k] theta_B[j,k] for each pair (i, j).
template <typename T>
Tensor<T> topic_coherence(const Tensor<T>& theta_a, const Tensor<T>& theta_b,
                          const std::vector<CellPair>& pairs);

/// -(elbo + sum_m log max(coherence_m, eps)).
template <typename T>
Tensor<T> coarse_pos_loss(const Tensor<T>& elbo_term, const Tensor<T>& coherence);

/// negatives[m] holds the N sampled B cells of positive m.
/// -sum_m (1/N) sum_n log max(1 - coherence(i_m, n), eps).
template <typename T>
Tensor<T> coarse_neg_loss(const Tensor<T>& theta_a, const Tensor<T>& theta_b,
                          const std::vector<CellPair>& positives,
                          const std::vector<std::vector<std::size_t>>& negatives);

/// mean_m ||offset_m - target_m||^2 / max(variance_m, 1e-6). The variance is
/// detached: no gradient flows into it.
template <typename T>
Tensor<T> fine_loss(const Tensor<T>& offset, const Tensor<T>& target, const Tensor<T>& variance);

/// N cells drawn uniformly from a gw x gh grid, excluding the 3x3
/// neighborhood of `positive` (duplicates allowed between draws).
std::vector<std::size_t> sample_negatives(std::size_t positive, std::size_t gw, std::size_t gh,
                                          std::size_t n, Rng& rng);

}  // namespace tfm
