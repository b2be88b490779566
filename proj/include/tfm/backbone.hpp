#pragma once

#include <array>
#include <vector>

#include "tfm/image_io.hpp"
#include "tfm/layers.hpp"

namespace tfm {

struct BackboneConfig {
  std::array<std::size_t, 4> widths{32, 48, 64, 96};
};

/// Coarse (1/8) and fine (1/2) feature maps for a batch, [N, C, H, W].
/// `height`/`width` are the extents of the padded input.
template <typename T>
struct FeaturePyramid {
  Tensor<T> coarse, fine;
  std::size_t height = 0, width = 0;
};

/// Conv + BN + GELU encoder with four stride-2 levels and a skip-connected
/// upsampling path back to 1/2 resolution.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& cfg, Rng& rng);

  /// images: [N, 1, H, W] with H, W multiples of 8.
  FeaturePyramid<T> forward(const Tensor<T>& images, bool training);
  void collect(const std::string& prefix, Registry<T>& reg);

  std::size_t coarse_dim() const { return widths_[2]; }
  std::size_t fine_dim() const { return widths_[0]; }

 private:
  struct ConvBn {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;
    Tensor<T> operator()(const Tensor<T>& x, bool training);
  };
  ConvBn block(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, Rng& rng);

  std::array<std::size_t, 4> widths_{};
  std::vector<ConvBn> down1_, down2_, down3_, down4_;
  Conv2d<T> lateral3_, lateral2_, lateral1_;
  ConvBn merge3a_, merge2a_, merge1a_;
  Conv2d<T> merge3b_, merge2b_, merge1b_;
};

/// Extends an image on the right and bottom by reflection so both extents
/// are multiples of `multiple`.
Image reflect_pad(const Image& image, std::size_t multiple);

/// Stacks images (which must share extents) into an [N, 1, H, W] tensor.
template <typename T>
Tensor<T> images_to_tensor(const std::vector<const Image*>& images);

/// 2-D sinusoidal encoding, [h*w x d] in raster order. Channel 4c + {0,1,2,3}
/// holds sin(x f_c), cos(x f_c), sin(y f_c), cos(y f_c) with 0-based
/// positions and f_c = 10000^(-2c/(d/2)).
template <typename T>
Tensor<T> positional_encoding(std::size_t h, std::size_t w, std::size_t d);

}  // namespace tfm
