#pragma once

#include <span>
#include <string>
#include <vector>

#include "tfm/attention.hpp"
#include "tfm/rng.hpp"
#include "tfm/tensor.hpp"

namespace tfm {

/// Named view of every learnable tensor and persistent buffer of a model, in
/// a fixed order. Tensor handles share storage with the owning module.
template <typename T>
struct Registry {
  struct Param {
    std::string name;
    Tensor<T> tensor;
  };
  struct Buffer {
    std::string name;
    std::vector<T>* data;
  };
  std::vector<Param> params;
  std::vector<Buffer> buffers;

  void add_param(const std::string& name, const Tensor<T>& t) { params.push_back({name, t}); }
  void add_buffer(const std::string& name, std::vector<T>& b) { buffers.push_back({name, &b}); }
  std::size_t parameter_count() const;
  void zero_grad();
};

/// y = x W + b with W stored [in x out].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool bias, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, FlopCounter* flops = nullptr) const;
  void collect(const std::string& prefix, Registry<T>& reg) const;

  Tensor<T> weight, bias;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t d);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, Registry<T>& reg) const;

  Tensor<T> gamma, beta;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, bool bias, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, Registry<T>& reg) const;

  Tensor<T> weight, bias;
  std::size_t stride = 1, pad = 0;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x, bool training);
  void collect(const std::string& prefix, Registry<T>& reg);

  Tensor<T> gamma, beta;
  std::vector<T> running_mean, running_var;
};

/// Transformer encoder layer in the coarse-to-fine matcher style: multi-head
/// attention from x to source, merge, norm, a two-layer MLP on [x, message],
/// norm, residual add. Optional segments restrict attention to blocks.
template <typename T>
class AttentionLayer {
 public:
  AttentionLayer() = default;
  AttentionLayer(std::size_t d, std::size_t heads, AttentionKernel kernel, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& source,
                       FlopCounter* flops = nullptr) const;
  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& source,
                       std::span<const std::size_t> x_segments,
                       std::span<const std::size_t> source_segments,
                       FlopCounter* flops = nullptr) const;
  void collect(const std::string& prefix, Registry<T>& reg) const;

  std::size_t heads = 1;
  AttentionKernel kernel = AttentionKernel::linear;
  Linear<T> q_proj, k_proj, v_proj, merge, mlp1, mlp2;
  LayerNorm<T> norm1, norm2;
};

}  // namespace tfm
