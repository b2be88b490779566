#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "tfm/image_io.hpp"

namespace tfm {

/// Fixed 16-entry palette; topic t uses entry t mod 16.
const std::array<std::array<std::uint8_t, 3>, 16>& topic_palette();

/// Grayscale image with every coarse cell tinted by its topic color. Only
/// topics flagged in `shown` are tinted (all when `shown` is empty).
RgbImage topic_overlay(const Image& image, const std::vector<std::uint32_t>& labels, std::size_t grid_w,
                       std::size_t grid_h, const std::vector<bool>& shown = {}, double alpha = 0.45,
                       std::size_t cell_size = 8);

/// Fraction of cell pairs whose two cells carry the same topic label.
double topic_agreement(const std::vector<std::uint32_t>& labels_a, const std::vector<std::uint32_t>& labels_b,
                       const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

}  // namespace tfm
