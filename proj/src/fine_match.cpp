#include "tfm/fine_match.hpp"

#include <cmath>

#include "tfm/errors.hpp"
#include "tfm/ops.hpp"

namespace tfm {

std::pair<std::size_t, std::size_t> fine_center(std::size_t cell, std::size_t coarse_w) {
  return {4 * (cell / coarse_w) + 2, 4 * (cell % coarse_w) + 2};
}

std::optional<std::vector<std::size_t>> patch_rows(std::size_t y, std::size_t x, std::size_t fh,
                                                   std::size_t fw, std::size_t np) {
  if (np % 2 == 0) throw ContractError("patch size must be odd");
  const std::size_t r = np / 2;
  if (y < r || x < r || y + r >= fh || x + r >= fw) return std::nullopt;
  std::vector<std::size_t> rows;
  rows.reserve(np * np);
  for (std::size_t dy = 0; dy < np; ++dy)
    for (std::size_t dx = 0; dx < np; ++dx) rows.push_back((y - r + dy) * fw + (x - r + dx));
  return rows;
}

template <typename T>
PatchBatch<T> crop_patches(const Tensor<T>& fine_a, const Tensor<T>& fine_b, std::size_t fh,
                           std::size_t fw, std::size_t coarse_w,
                           const std::vector<std::pair<std::size_t, std::size_t>>& cells,
                           std::size_t np) {
  if (fine_a.dim(0) != fh * fw || fine_b.dim(0) != fh * fw)
    throw DimensionError("crop_patches: fine maps do not match the stated extents");
  PatchBatch<T> batch;
  std::vector<std::size_t> rows_a, rows_b;
  for (std::size_t m = 0; m < cells.size(); ++m) {
    const auto [ya, xa] = fine_center(cells[m].first, coarse_w);
    const auto [yb, xb] = fine_center(cells[m].second, coarse_w);
    auto pa = patch_rows(ya, xa, fh, fw, np);
    auto pb = patch_rows(yb, xb, fh, fw, np);
    if (!pa || !pb) {
      ++batch.dropped;
      continue;
    }
    batch.kept.push_back(m);
    rows_a.insert(rows_a.end(), pa->begin(), pa->end());
    rows_b.insert(rows_b.end(), pb->begin(), pb->end());
  }
  if (!batch.kept.empty()) {
    batch.a = ops::gather_rows(fine_a, std::span<const std::size_t>(rows_a));
    batch.b = ops::gather_rows(fine_b, std::span<const std::size_t>(rows_b));
  }
  return batch;
}

template <typename T>
FineMatcher<T>::FineMatcher(std::size_t d, std::size_t heads, AttentionKernel kernel,
                            std::size_t np, Rng& rng)
    : cross(d, heads, kernel, rng), np_(np) {
  if (np % 2 == 0 || np < 3) throw ConfigError("fine matcher: patch size must be odd and at least 3");
}

template <typename T>
Refinement<T> heatmap_moments(const Tensor<T>& logits, std::size_t np, bool hard_argmax) {
  const std::size_t ww = np * np;
  if (logits.rank() != 2 || logits.dim(1) != ww) throw DimensionError("heatmap: expected [M x np^2] logits");
  const std::size_t m = logits.dim(0);
  const long r = static_cast<long>(np / 2);
  std::vector<T> gx(ww), gy(ww), g2(ww);
  for (std::size_t p = 0; p < ww; ++p) {
    gx[p] = static_cast<T>(static_cast<long>(p % np) - r);
    gy[p] = static_cast<T>(static_cast<long>(p / np) - r);
    g2[p] = gx[p] * gx[p] + gy[p] * gy[p];
  }
  const auto heat = ops::softmax_rows(logits);
  const auto ex = ops::matmul(heat, Tensor<T>::from({ww, 1}, gx));
  const auto ey = ops::matmul(heat, Tensor<T>::from({ww, 1}, gy));
  const auto e2 = ops::matmul(heat, Tensor<T>::from({ww, 1}, g2));
  auto var = ops::sub(e2, ops::add(ops::square(ex), ops::square(ey)));
  var = ops::reshape(var, {m});
  if (!hard_argmax) return {ops::concat_cols<T>({ex, ey}), var};
  std::vector<T> off(2 * m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* h = heat.data() + i * ww;
    std::size_t best = 0;
    for (std::size_t p = 1; p < ww; ++p)
      if (h[p] > h[best]) best = p;
    off[2 * i] = gx[best];
    off[2 * i + 1] = gy[best];
  }
  return {Tensor<T>::from({m, 2}, std::move(off)), var};
}

template <typename T>
Refinement<T> FineMatcher<T>::refine(const Tensor<T>& patches_a, const Tensor<T>& patches_b,
                                     bool hard_argmax, FlopCounter* flops) const {
  const std::size_t ww = np_ * np_;
  if (patches_a.rank() != 2 || patches_a.shape() != patches_b.shape() || patches_a.dim(0) % ww != 0 ||
      patches_a.dim(0) == 0)
    throw DimensionError("refine: patch stacks must be [M * np^2 x d] and equal");
  const std::size_t m = patches_a.dim(0) / ww, d = patches_a.dim(1);
  const std::vector<std::size_t> seg(m, ww);
  auto a = cross(patches_a, patches_b, seg, seg, flops);
  auto b = cross(patches_b, a, seg, seg, flops);

  std::vector<std::size_t> centers(m * ww);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < ww; ++p) centers[i * ww + p] = i * ww + ww / 2;
  const auto center = ops::gather_rows(a, std::span<const std::size_t>(centers));
  auto sim = ops::sum_rows(ops::mul(center, b));
  sim = ops::scale(ops::reshape(sim, {m, ww}), T(1) / std::sqrt(static_cast<T>(d)));
  return heatmap_moments(sim, np_, hard_argmax);
}

template <typename T>
void FineMatcher<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  cross.collect(prefix + ".cross", reg);
}

#define TFM_INSTANTIATE_FINE(T)                                                                  \
  template PatchBatch<T> crop_patches(const Tensor<T>&, const Tensor<T>&, std::size_t,          \
                                      std::size_t, std::size_t,                                 \
                                      const std::vector<std::pair<std::size_t, std::size_t>>&,  \
                                      std::size_t);                                             \
  template class FineMatcher<T>;                                                                \
  template Refinement<T> heatmap_moments(const Tensor<T>&, std::size_t, bool);

TFM_INSTANTIATE_FINE(float)
TFM_INSTANTIATE_FINE(double)

}  // namespace tfm
