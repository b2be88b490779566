#include "tfm/layers.hpp"

#include <cmath>

#include "tfm/errors.hpp"
#include "tfm/ops.hpp"

namespace tfm {

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

}  // namespace

template <typename T>
std::size_t Registry<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

template <typename T>
void Registry<T>::zero_grad() {
  for (auto& p : params) p.tensor.zero_grad();
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  // Xavier-uniform weights, zero bias.
  weight = uniform_tensor<T>({in, out}, std::sqrt(6.0 / static_cast<double>(in + out)), rng);
  if (with_bias) bias = Tensor<T>::zeros({out}, true);
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x, FlopCounter* flops) const {
  if (flops) flops->add("projection", static_cast<std::uint64_t>(x.dim(0)) * weight.numel());
  auto y = ops::matmul(x, weight);
  return bias.defined() ? ops::add_row(y, bias) : y;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  reg.add_param(prefix + ".weight", weight);
  if (bias.defined()) reg.add_param(prefix + ".bias", bias);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t d)
    : gamma(Tensor<T>::full({d}, T(1), true)), beta(Tensor<T>::zeros({d}, true)) {}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return ops::layer_norm_rows(x, gamma, beta, T(1e-5));
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  reg.add_param(prefix + ".gamma", gamma);
  reg.add_param(prefix + ".beta", beta);
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_,
                  bool with_bias, Rng& rng)
    : stride(stride_), pad(k / 2) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  weight = uniform_tensor<T>({out, in, k, k}, std::sqrt(3.0) * bound, rng);
  if (with_bias) bias = uniform_tensor<T>({out}, bound, rng);
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return ops::conv2d(x, weight, bias, stride, pad);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  reg.add_param(prefix + ".weight", weight);
  if (bias.defined()) reg.add_param(prefix + ".bias", bias);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels)
    : gamma(Tensor<T>::full({channels}, T(1), true)),
      beta(Tensor<T>::zeros({channels}, true)),
      running_mean(channels, T(0)),
      running_var(channels, T(1)) {}

template <typename T>
Tensor<T> BatchNorm2d<T>::operator()(const Tensor<T>& x, bool training) {
  return ops::batch_norm2d(x, gamma, beta, running_mean, running_var, training, T(0.1), T(1e-5));
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, Registry<T>& reg) {
  reg.add_param(prefix + ".gamma", gamma);
  reg.add_param(prefix + ".beta", beta);
  reg.add_buffer(prefix + ".running_mean", running_mean);
  reg.add_buffer(prefix + ".running_var", running_var);
}

template <typename T>
AttentionLayer<T>::AttentionLayer(std::size_t d, std::size_t heads_, AttentionKernel kernel_,
                                  Rng& rng)
    : heads(heads_),
      kernel(kernel_),
      q_proj(d, d, false, rng),
      k_proj(d, d, false, rng),
      v_proj(d, d, false, rng),
      merge(d, d, false, rng),
      mlp1(2 * d, 2 * d, false, rng),
      mlp2(2 * d, d, false, rng),
      norm1(d),
      norm2(d) {
  if (d % heads != 0) throw ConfigError("attention layer: width not divisible by head count");
}

template <typename T>
Tensor<T> AttentionLayer<T>::operator()(const Tensor<T>& x, const Tensor<T>& source,
                                        FlopCounter* flops) const {
  const std::size_t a[1] = {x.dim(0)}, b[1] = {source.dim(0)};
  return (*this)(x, source, a, b, flops);
}

template <typename T>
Tensor<T> AttentionLayer<T>::operator()(const Tensor<T>& x, const Tensor<T>& source,
                                        std::span<const std::size_t> x_segments,
                                        std::span<const std::size_t> source_segments,
                                        FlopCounter* flops) const {
  auto q = q_proj(x, flops);
  auto k = k_proj(source, flops);
  auto v = v_proj(source, flops);
  auto msg = segmented_attention(q, k, v, heads, x_segments, source_segments, kernel, flops);
  msg = norm1(merge(msg, flops));
  msg = mlp2(ops::relu(mlp1(ops::concat_cols<T>({x, msg}), flops)), flops);
  return ops::add(x, norm2(msg));
}

template <typename T>
void AttentionLayer<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  q_proj.collect(prefix + ".q", reg);
  k_proj.collect(prefix + ".k", reg);
  v_proj.collect(prefix + ".v", reg);
  merge.collect(prefix + ".merge", reg);
  mlp1.collect(prefix + ".mlp1", reg);
  mlp2.collect(prefix + ".mlp2", reg);
  norm1.collect(prefix + ".norm1", reg);
  norm2.collect(prefix + ".norm2", reg);
}

template struct Registry<float>;
template struct Registry<double>;
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class AttentionLayer<float>;
template class AttentionLayer<double>;

}  // namespace tfm
