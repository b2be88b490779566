#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "tfm/coarse_match.hpp"
#include "tfm/layers.hpp"

namespace tfm {

/// Fine-grid (row, col) under the center of coarse cell `cell`; the coarse
/// grid is `coarse_w` cells wide and the fine grid is 4x finer.
std::pair<std::size_t, std::size_t> fine_center(std::size_t cell, std::size_t coarse_w);

/// Raster row indices of the np x np window centered at (y, x) of a fine grid
/// of extents fh x fw, or nothing when the window would leave the grid.
std::optional<std::vector<std::size_t>> patch_rows(std::size_t y, std::size_t x, std::size_t fh,
                                                   std::size_t fw, std::size_t np);

/// Stacked patches, [M * np^2 x d_f], for the coarse matches that survived
/// the border rule. `kept` indexes into the input match list.
template <typename T>
struct PatchBatch {
  Tensor<T> a, b;
  std::vector<std::size_t> kept;
  std::size_t dropped = 0;
};

template <typename T>
PatchBatch<T> crop_patches(const Tensor<T>& fine_a, const Tensor<T>& fine_b, std::size_t fh,
                           std::size_t fw, std::size_t coarse_w,
                           const std::vector<std::pair<std::size_t, std::size_t>>& cells,
                           std::size_t np);

/// offset [M x 2] in fine-grid units as (dx, dy) relative to the B patch
/// center; variance [M] is the trace of the heatmap covariance.
template <typename T>
struct Refinement {
  Tensor<T> offset, variance;
};

template <typename T>
class FineMatcher {
 public:
  FineMatcher() = default;
  FineMatcher(std::size_t d, std::size_t heads, AttentionKernel kernel, std::size_t np, Rng& rng);

  /// One shared cross-attention layer (A<-B, then B<-A), then a softmax
  /// heatmap of the A center feature against every B position.
  Refinement<T> refine(const Tensor<T>& patches_a, const Tensor<T>& patches_b,
                       bool hard_argmax = false, FlopCounter* flops = nullptr) const;
  void collect(const std::string& prefix, Registry<T>& reg) const;
  std::size_t patch_size() const { return np_; }

  AttentionLayer<T> cross;

 private:
  std::size_t np_ = 5;
};

/// Heatmap statistics used by refine(), exposed for direct use: expectation
/// and total variance of window positions under softmax(sim) per row.
template <typename T>
Refinement<T> heatmap_moments(const Tensor<T>& logits, std::size_t np, bool hard_argmax = false);

}  // namespace tfm
