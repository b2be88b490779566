#include "tfm/coarse_match.hpp"

#include <algorithm>
#include <map>

#include "tfm/errors.hpp"
#include "tfm/ops.hpp"

namespace tfm {

std::vector<std::size_t> TopicGroups::sizes_a() const {
  std::vector<std::size_t> s;
  for (const auto& r : rows_a) s.push_back(r.size());
  return s;
}

std::vector<std::size_t> TopicGroups::sizes_b() const {
  std::vector<std::size_t> s;
  for (const auto& r : rows_b) s.push_back(r.size());
  return s;
}

std::vector<std::size_t> TopicGroups::flat_a() const {
  std::vector<std::size_t> f;
  for (const auto& r : rows_a) f.insert(f.end(), r.begin(), r.end());
  return f;
}

std::vector<std::size_t> TopicGroups::flat_b() const {
  std::vector<std::size_t> f;
  for (const auto& r : rows_b) f.insert(f.end(), r.begin(), r.end());
  return f;
}

TopicGroups group_by_topic(std::span<const std::uint32_t> labels_a,
                           std::span<const std::uint32_t> labels_b,
                           std::span<const std::uint32_t> allowed) {
  std::vector<std::uint32_t> ids(allowed.begin(), allowed.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::map<std::uint32_t, std::size_t> slot;
  for (std::size_t g = 0; g < ids.size(); ++g) slot[ids[g]] = g;
  std::vector<std::vector<std::size_t>> a(ids.size()), b(ids.size());
  for (std::size_t i = 0; i < labels_a.size(); ++i)
    if (auto it = slot.find(labels_a[i]); it != slot.end()) a[it->second].push_back(i);
  for (std::size_t j = 0; j < labels_b.size(); ++j)
    if (auto it = slot.find(labels_b[j]); it != slot.end()) b[it->second].push_back(j);
  TopicGroups groups;
  for (std::size_t g = 0; g < ids.size(); ++g) {
    if (a[g].empty() || b[g].empty()) continue;
    groups.topics.push_back(ids[g]);
    groups.rows_a.push_back(std::move(a[g]));
    groups.rows_b.push_back(std::move(b[g]));
  }
  return groups;
}

template <typename T>
Augmenter<T>::Augmenter(std::size_t d, std::size_t heads, AttentionKernel kernel, Rng& rng)
    : self_attn(d, heads, kernel, rng), cross_attn(d, heads, kernel, rng) {}

template <typename T>
AugmentedFeatures<T> Augmenter<T>::operator()(const Tensor<T>& features_a,
                                              const Tensor<T>& features_b,
                                              const TopicGroups& groups, FlopCounter* flops) const {
  if (groups.size() == 0) throw InsufficientDataError("augment_features: no topic shared by both images");
  const auto fa = groups.flat_a(), fb = groups.flat_b();
  const auto sa = groups.sizes_a(), sb = groups.sizes_b();
  auto a = ops::gather_rows(features_a, std::span<const std::size_t>(fa));
  auto b = ops::gather_rows(features_b, std::span<const std::size_t>(fb));
  a = self_attn(a, a, sa, sa, flops);
  b = self_attn(b, b, sb, sb, flops);
  a = cross_attn(a, b, sa, sb, flops);
  b = cross_attn(b, a, sb, sa, flops);
  return {a, b};
}

template <typename T>
void Augmenter<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  self_attn.collect(prefix + ".self", reg);
  cross_attn.collect(prefix + ".cross", reg);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> scatter_augmented(const Tensor<T>& features_a,
                                                  const Tensor<T>& features_b,
                                                  const TopicGroups& groups,
                                                  const AugmentedFeatures<T>& aug) {
  const auto fa = groups.flat_a(), fb = groups.flat_b();
  return {ops::index_put_rows(features_a, std::span<const std::size_t>(fa), aug.a),
          ops::index_put_rows(features_b, std::span<const std::size_t>(fb), aug.b)};
}

template <typename T>
Tensor<T> dual_softmax(const Tensor<T>& a, const Tensor<T>& b, T temperature) {
  if (!(temperature > T(0))) throw ContractError("dual_softmax: temperature must be positive");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) == 0 || b.dim(0) == 0)
    throw DimensionError("dual_softmax: non-empty matrices expected");
  const auto s = ops::scale(ops::matmul_nt(a, b), T(1) / temperature);
  return ops::mul(ops::softmax_rows(s), ops::softmax_cols(s));
}

template <typename T>
Tensor<T> elbo(const Tensor<T>& log_prob, const std::vector<char>& valid) {
  if (log_prob.rank() != 2 || valid.size() != log_prob.numel())
    throw DimensionError("elbo: validity mask does not fit the log-probabilities");
  const std::size_t m = log_prob.dim(0), s = log_prob.dim(1);
  std::vector<T> w(m * s, T(0));
  for (std::size_t r = 0; r < m; ++r) {
    std::size_t count = 0;
    for (std::size_t c = 0; c < s; ++c) count += valid[r * s + c] ? 1 : 0;
    if (count == 0) continue;
    for (std::size_t c = 0; c < s; ++c)
      if (valid[r * s + c]) w[r * s + c] = T(1) / static_cast<T>(count);
  }
  return ops::weighted_sum(log_prob, std::span<const T>(w));
}

std::vector<CoarseMatch> select_coarse_matches(const std::vector<GroupProbabilities>& groups,
                                               double tau, bool mutual) {
  if (!(tau > 0.0 && tau < 1.0)) throw ContractError("select_coarse_matches: tau must lie in (0, 1)");
  std::vector<CoarseMatch> out;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> seen;
  for (const auto& g : groups) {
    const std::size_t m = g.rows_a.size(), n = g.rows_b.size();
    if (g.prob.size() != m * n) throw DimensionError("select_coarse_matches: matrix size mismatch");
    if (m == 0 || n == 0) continue;
    std::vector<std::size_t> row_best(m, 0), col_best(n, 0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const double p = g.prob[r * n + c];
        if (p > g.prob[r * n + row_best[r]]) row_best[r] = c;
        if (p > g.prob[col_best[c] * n + c]) col_best[c] = r;
      }
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const double p = g.prob[r * n + c];
        if (p < tau) continue;
        if (mutual && (row_best[r] != c || col_best[c] != r)) continue;
        CoarseMatch cm{g.rows_a[r], g.rows_b[c], p, g.topic, 0.0};
        auto [it, inserted] = seen.try_emplace({cm.i, cm.j}, out.size());
        if (inserted) {
          out.push_back(cm);
        } else if (p > out[it->second].confidence) {
          out[it->second] = cm;
        }
      }
  }
  return out;
}

#define TFM_INSTANTIATE_COARSE(T)                                                                 \
  template class Augmenter<T>;                                                                   \
  template std::pair<Tensor<T>, Tensor<T>> scatter_augmented(                                    \
      const Tensor<T>&, const Tensor<T>&, const TopicGroups&, const AugmentedFeatures<T>&);      \
  template Tensor<T> dual_softmax(const Tensor<T>&, const Tensor<T>&, T);                        \
  template Tensor<T> elbo(const Tensor<T>&, const std::vector<char>&);

TFM_INSTANTIATE_COARSE(float)
TFM_INSTANTIATE_COARSE(double)

}  // namespace tfm
