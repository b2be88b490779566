#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tfm/layers.hpp"

namespace tfm {

/// Features of both images partitioned by topic. Only topics present in both
/// images form a group; groups are ordered by topic id.
struct TopicGroups {
  std::vector<std::uint32_t> topics;
  std::vector<std::vector<std::size_t>> rows_a, rows_b;

  std::size_t size() const { return topics.size(); }
  std::vector<std::size_t> sizes_a() const;
  std::vector<std::size_t> sizes_b() const;
  /// Row indices of all groups concatenated in group order.
  std::vector<std::size_t> flat_a() const;
  std::vector<std::size_t> flat_b() const;
};

/// `allowed` lists the topic ids that may form groups (any order).
TopicGroups group_by_topic(std::span<const std::uint32_t> labels_a,
                           std::span<const std::uint32_t> labels_b,
                           std::span<const std::uint32_t> allowed);

/// Group-concatenated augmented features: rows follow TopicGroups::flat_a()
/// and flat_b().
template <typename T>
struct AugmentedFeatures {
  Tensor<T> a, b;
};

/// One self-attention and one cross-attention layer shared by every topic.
template <typename T>
class Augmenter {
 public:
  Augmenter() = default;
  Augmenter(std::size_t d, std::size_t heads, AttentionKernel kernel, Rng& rng);

  /// Within each group: self-attention per image, then cross-attention A<-B
  /// and B<-A (the latter reading the updated A).
  AugmentedFeatures<T> operator()(const Tensor<T>& features_a, const Tensor<T>& features_b,
                                  const TopicGroups& groups, FlopCounter* flops = nullptr) const;
  void collect(const std::string& prefix, Registry<T>& reg) const;

  AttentionLayer<T> self_attn, cross_attn;
};

/// Full feature matrices with the augmented rows written back; rows outside
/// the groups are unchanged.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> scatter_augmented(const Tensor<T>& features_a,
                                                  const Tensor<T>& features_b,
                                                  const TopicGroups& groups,
                                                  const AugmentedFeatures<T>& aug);

/// softmax_rows(S) * softmax_cols(S) with S = a b^T / t.
template <typename T>
Tensor<T> dual_softmax(const Tensor<T>& a, const Tensor<T>& b, T temperature);

/// Sum over matches of the mean log-probability over valid samples.
/// log_prob is [M x S]; entries with valid == 0 are ignored, and a match
/// without valid samples contributes 0.
template <typename T>
Tensor<T> elbo(const Tensor<T>& log_prob, const std::vector<char>& valid);

struct GroupProbabilities {
  std::uint32_t topic = 0;
  std::vector<std::size_t> rows_a, rows_b;
  std::vector<double> prob;  // rows_a.size() x rows_b.size()
};

struct CoarseMatch {
  std::size_t i = 0, j = 0;
  double confidence = 0.0;
  std::uint32_t topic = 0;
  double coherence = 0.0;  // sum_k theta_A[i,k] theta_B[j,k]
};

/// Keeps entries >= tau that are mutual row/column maxima (lowest index wins
/// ties) when `mutual` is set, maps them to grid indices and removes
/// duplicate (i, j) pairs keeping the most confident.
std::vector<CoarseMatch> select_coarse_matches(const std::vector<GroupProbabilities>& groups,
                                               double tau, bool mutual = true);

}  // namespace tfm
