#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "tfm/tensor.hpp"

namespace tfm {

enum class AttentionKernel { dot, linear };

AttentionKernel parse_kernel(const std::string& name);
std::string kernel_name(AttentionKernel kernel);

/// Multiply-accumulate counts keyed by operation name.
class FlopCounter {
 public:
  void add(const std::string& op, std::uint64_t macs) { breakdown_[op] += macs; }
  std::uint64_t total() const;
  const std::map<std::string, std::uint64_t>& breakdown() const { return breakdown_; }
  void clear() { breakdown_.clear(); }

 private:
  std::map<std::string, std::uint64_t> breakdown_;
};

/// MACs of the attention core (projections excluded) for one query/key block
/// of width d split into `heads` heads.
std::uint64_t attention_core_flops(AttentionKernel kernel, std::size_t n_q, std::size_t n_k,
                                   std::size_t d, std::size_t heads);

/// Block-diagonal multi-head attention: query segment g attends only to key
/// segment g. Segment lengths must sum to the row counts of q and k/v, and a
/// non-empty query segment needs a non-empty key segment.
template <typename T>
Tensor<T> segmented_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                              std::size_t heads, std::span<const std::size_t> q_segments,
                              std::span<const std::size_t> kv_segments, AttentionKernel kernel,
                              FlopCounter* flops = nullptr);

/// softmax(Q K^T / sqrt(d/heads)) V per head, heads concatenated.
template <typename T>
Tensor<T> dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                std::size_t heads, FlopCounter* flops = nullptr);

/// phi(Q)(phi(K)^T V) / (phi(Q) phi(K)^T 1) per head with phi = elu + 1.
template <typename T>
Tensor<T> linear_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           std::size_t heads, FlopCounter* flops = nullptr);

}  // namespace tfm
