#include "tfm/topics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tfm/errors.hpp"
#include "tfm/ops.hpp"

namespace tfm {

template <typename T>
TopicModule<T>::TopicModule(std::size_t num_topics, std::size_t d, std::size_t depth,
                            std::size_t heads, AttentionKernel kernel, Rng& rng) {
  if (num_topics < 1) throw ConfigError("topics: at least one topic required");
  std::vector<T> v(num_topics * d);
  for (auto& x : v) x = static_cast<T>(rng.normal());
  bank = Tensor<T>::from({num_topics, d}, std::move(v), true);
  for (std::size_t i = 0; i < depth; ++i) layers.emplace_back(d, heads, kernel, rng);
}

template <typename T>
Tensor<T> TopicModule<T>::infer_local_topics(const Tensor<T>& features, FlopCounter* flops) const {
  if (features.rank() != 2 || features.dim(0) == 0)
    throw DimensionError("infer_local_topics: need at least one feature row");
  Tensor<T> topics = bank;
  for (const auto& layer : layers) topics = layer(topics, features, flops);
  return topics;
}

template <typename T>
void TopicModule<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  reg.add_param(prefix + ".bank", bank);
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(prefix + ".layer" + std::to_string(i), reg);
}

template <typename T>
Tensor<T> topic_distribution(const Tensor<T>& local_topics, const Tensor<T>& features) {
  if (local_topics.rank() != 2 || features.rank() != 2 || local_topics.dim(1) != features.dim(1))
    throw DimensionError("topic_distribution: widths differ");
  const T s = T(1) / std::sqrt(static_cast<T>(features.dim(1)));
  return ops::softmax_rows(ops::scale(ops::matmul_nt(features, local_topics), s));
}

std::vector<double> image_topic_distribution(std::span<const double> theta, std::size_t n,
                                             std::size_t k) {
  if (n == 0) throw DimensionError("image_topic_distribution: no features");
  if (theta.size() != n * k) throw DimensionError("image_topic_distribution: size mismatch");
  std::vector<double> out(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) out[c] += theta[i * k + c];
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

template <typename T>
std::vector<double> image_topic_distribution(const Tensor<T>& theta) {
  const auto v = to_double(theta);
  return image_topic_distribution(v, theta.dim(0), theta.dim(1));
}

CovisibleReport covisible_topics(std::span<const double> image_a, std::span<const double> image_b,
                                 std::size_t k_co) {
  const std::size_t k = image_a.size();
  if (image_b.size() != k) throw DimensionError("covisible_topics: distributions differ in length");
  if (k_co < 1 || k_co > k) throw ContractError("covisible_topics: K_co must lie in [1, K]");
  CovisibleReport r;
  r.probability.resize(k);
  for (std::size_t c = 0; c < k; ++c) r.probability[c] = image_a[c] * image_b[c];
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r.probability[a] > r.probability[b]; });
  r.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k_co));
  return r;
}

std::vector<double> pair_topic_distribution(std::span<const double> theta_i,
                                            std::span<const double> theta_j) {
  if (theta_i.size() != theta_j.size()) throw DimensionError("pair_topic_distribution: length mismatch");
  const std::size_t k = theta_i.size();
  std::vector<double> p(k + 1);
  double same = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    p[c] = theta_i[c] * theta_j[c];
    same += p[c];
  }
  p[k] = std::clamp(1.0 - same, 0.0, 1.0);
  return p;
}

std::vector<std::uint32_t> TopicAssignment::column(std::size_t s) const {
  std::vector<std::uint32_t> out(features);
  for (std::size_t i = 0; i < features; ++i) out[i] = at(i, s);
  return out;
}

TopicAssignment sample_assignments(std::span<const double> theta, std::size_t n, std::size_t k,
                                   std::size_t samples, std::uint64_t seed) {
  if (samples < 1) throw ContractError("sample_assignments: S must be at least 1");
  if (theta.size() != n * k) throw DimensionError("sample_assignments: size mismatch");
  TopicAssignment a{n, samples, std::vector<std::uint32_t>(n * samples), seed};
  const Rng root(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = theta.data() + i * k;
    std::size_t last = 0;
    for (std::size_t c = 0; c < k; ++c)
      if (row[c] > 0.0) last = c;
    Rng rng = root.split(i);
    for (std::size_t s = 0; s < samples; ++s) {
      const double u = rng.uniform();
      double cum = 0.0;
      std::size_t pick = last;  // guards against rounding in the running sum
      for (std::size_t c = 0; c < k; ++c) {
        cum += row[c];
        if (u < cum) {
          pick = c;
          break;
        }
      }
      a.labels[i * samples + s] = static_cast<std::uint32_t>(pick);
    }
  }
  return a;
}

std::vector<std::uint32_t> argmax_assignment(std::span<const double> theta, std::size_t n,
                                             std::size_t k) {
  if (theta.size() != n * k) throw DimensionError("argmax_assignment: size mismatch");
  std::vector<std::uint32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = theta.data() + i * k;
    out[i] = static_cast<std::uint32_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

template <typename T>
std::vector<double> to_double(const Tensor<T>& t) {
  return {t.values().begin(), t.values().end()};
}

template class TopicModule<float>;
template class TopicModule<double>;
template Tensor<float> topic_distribution(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> topic_distribution(const Tensor<double>&, const Tensor<double>&);
template std::vector<double> image_topic_distribution(const Tensor<float>&);
template std::vector<double> image_topic_distribution(const Tensor<double>&);
template std::vector<double> to_double(const Tensor<float>&);
template std::vector<double> to_double(const Tensor<double>&);

}  // namespace tfm
