#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tfm/geometry.hpp"
#include "tfm/image_io.hpp"
#include "tfm/rng.hpp"

namespace tfm {

struct SynthConfig {
  std::size_t size = 128;
  double perspective = 0.15;  // corner displacement bound as a fraction of size
  double jitter = 0.1;        // brightness/contrast jitter amplitude

  /// FNV-1a over the canonical text form; identifies datasets in manifests.
  std::uint64_t hash() const;
};

struct ImagePair {
  Image a, b;
  Homography h;                           // maps A pixels to B pixels
  std::array<Eigen::Vector2d, 4> corners;  // images of A's corners in B
  double contrast = 1.0, brightness = 0.0;
  std::uint64_t seed = 0;
};

/// Multi-octave value noise overlaid with random filled polygons.
Image render_texture(std::size_t size, Rng& rng);

/// dst(x) = src(h^{-1}(x)) with bilinear sampling and zero outside src.
Image warp_image(const Image& src, const Homography& h, std::size_t width, std::size_t height);

ImagePair gen_pair(std::uint64_t seed, const SynthConfig& cfg);

/// Center of coarse cell `cell` in pixel coordinates (pixel centers are
/// integers, so cell c spans [8c - 0.5, 8c + 7.5)).
Eigen::Vector2d cell_center(std::size_t cell, std::size_t grid_w, std::size_t cell_size = 8);

/// For every A cell whose warped center falls inside the B grid, the B cell
/// with the nearest center (ties to the lower index), keeping for each B
/// cell only the closest A cell.
std::vector<std::pair<std::size_t, std::size_t>> gt_coarse_matches(const Homography& h,
                                                                   std::size_t grid_w,
                                                                   std::size_t grid_h,
                                                                   std::size_t cell_size = 8);

/// Dataset manifests: one "seed<TAB>config-hash" line per pair.
void write_manifest(const std::string& path, const std::vector<std::uint64_t>& seeds,
                    const SynthConfig& cfg);
/// Throws FormatError on malformed lines or a hash that differs from cfg.
std::vector<std::uint64_t> read_manifest(const std::string& path, const SynthConfig& cfg);

}  // namespace tfm
