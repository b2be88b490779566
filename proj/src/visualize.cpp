#include "tfm/visualize.hpp"

#include <algorithm>
#include <cmath>

#include "tfm/errors.hpp"

namespace tfm {

const std::array<std::array<std::uint8_t, 3>, 16>& topic_palette() {
  static const std::array<std::array<std::uint8_t, 3>, 16> colors{{
      {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48}, {145, 30, 180},
      {70, 240, 240}, {240, 50, 230},  {210, 245, 60}, {250, 190, 212}, {0, 128, 128}, {220, 190, 255},
      {170, 110, 40}, {255, 250, 200}, {128, 0, 0},    {170, 255, 195},
  }};
  return colors;
}

RgbImage topic_overlay(const Image& image, const std::vector<std::uint32_t>& labels, std::size_t grid_w,
                       std::size_t grid_h, const std::vector<bool>& shown, double alpha, std::size_t cell_size) {
  if (labels.size() != grid_w * grid_h) throw DimensionError("topic_overlay: label count does not match the grid");
  RgbImage out(image.width, image.height);
  const auto& pal = topic_palette();
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double g = std::clamp(static_cast<double>(image.at(x, y)), 0.0, 1.0) * 255.0;
      const std::size_t cx = x / cell_size, cy = y / cell_size;
      std::uint8_t* px = &out.data[(y * image.width + x) * 3];
      bool tint = cx < grid_w && cy < grid_h;
      std::uint32_t t = 0;
      if (tint) {
        t = labels[cy * grid_w + cx];
        tint = shown.empty() || (t < shown.size() && shown[t]);
      }
      for (int c = 0; c < 3; ++c) {
        const double v = tint ? (1.0 - alpha) * g + alpha * pal[t % pal.size()][c] : g;
        px[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

double topic_agreement(const std::vector<std::uint32_t>& labels_a, const std::vector<std::uint32_t>& labels_b,
                       const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t same = 0;
  for (const auto& [i, j] : pairs) {
    if (i >= labels_a.size() || j >= labels_b.size()) throw DimensionError("topic_agreement: cell index out of range");
    same += labels_a[i] == labels_b[j] ? 1 : 0;
  }
  return static_cast<double>(same) / static_cast<double>(pairs.size());
}

}  // namespace tfm
