#pragma once

#include <cstdint>
#include <vector>

#include "tfm/layers.hpp"

namespace tfm {

/// Learnable topic embeddings plus the cross-attention stack that specializes
/// them to one image. Topic ids are 0-based.
template <typename T>
class TopicModule {
 public:
  TopicModule() = default;
  TopicModule(std::size_t num_topics, std::size_t d, std::size_t depth, std::size_t heads,
              AttentionKernel kernel, Rng& rng);

  /// Local topics [K x d]: every layer updates the topics by attending to the
  /// image features [n x d].
  Tensor<T> infer_local_topics(const Tensor<T>& features, FlopCounter* flops = nullptr) const;
  void collect(const std::string& prefix, Registry<T>& reg) const;
  std::size_t num_topics() const { return bank.dim(0); }

  Tensor<T> bank;
  std::vector<AttentionLayer<T>> layers;
};

/// theta [n x K] = softmax over topics of <F_i, T_k> / sqrt(d).
template <typename T>
Tensor<T> topic_distribution(const Tensor<T>& local_topics, const Tensor<T>& features);

/// Column mean of theta.
std::vector<double> image_topic_distribution(std::span<const double> theta, std::size_t n,
                                             std::size_t k);
template <typename T>
std::vector<double> image_topic_distribution(const Tensor<T>& theta);

struct CovisibleReport {
  std::vector<double> probability;   // theta_A * theta_B per topic
  std::vector<std::size_t> selected;  // by decreasing probability, ties to lower id
};

CovisibleReport covisible_topics(std::span<const double> image_a, std::span<const double> image_b,
                                 std::size_t k_co);

/// K + 1 entries: P(both in topic k) for each k, then the probability that
/// the features sit in different topics.
std::vector<double> pair_topic_distribution(std::span<const double> theta_i,
                                            std::span<const double> theta_j);

/// labels[i * samples + s] is draw s of feature i.
struct TopicAssignment {
  std::size_t features = 0, samples = 0;
  std::vector<std::uint32_t> labels;
  std::uint64_t seed = 0;

  std::uint32_t at(std::size_t i, std::size_t s) const { return labels[i * samples + s]; }
  /// Labels of one draw for every feature.
  std::vector<std::uint32_t> column(std::size_t s) const;
};

/// Inverse-CDF categorical draws; draw s of feature i depends only on
/// (seed, i, s).
TopicAssignment sample_assignments(std::span<const double> theta, std::size_t n, std::size_t k,
                                   std::size_t samples, std::uint64_t seed);
/// Most probable topic per feature, ties to lower id.
std::vector<std::uint32_t> argmax_assignment(std::span<const double> theta, std::size_t n,
                                             std::size_t k);

template <typename T>
std::vector<double> to_double(const Tensor<T>& t);

}  // namespace tfm
