#include "tfm/backbone.hpp"

#include <cmath>

#include "tfm/errors.hpp"
#include "tfm/ops.hpp"

namespace tfm {

template <typename T>
Tensor<T> Backbone<T>::ConvBn::operator()(const Tensor<T>& x, bool training) {
  return ops::gelu(bn(conv(x), training));
}

template <typename T>
typename Backbone<T>::ConvBn Backbone<T>::block(std::size_t in, std::size_t out, std::size_t k,
                                                std::size_t stride, Rng& rng) {
  return ConvBn{Conv2d<T>(in, out, k, stride, false, rng), BatchNorm2d<T>(out)};
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& cfg, Rng& rng) : widths_(cfg.widths) {
  const auto [c1, c2, c3, c4] = widths_;
  if (!(c1 < c3)) throw ConfigError("backbone: fine width must be below coarse width");
  down1_ = {block(1, c1, 7, 2, rng), block(c1, c1, 3, 1, rng), block(c1, c1, 3, 1, rng)};
  down2_ = {block(c1, c2, 3, 2, rng), block(c2, c2, 3, 1, rng)};
  down3_ = {block(c2, c3, 3, 2, rng), block(c3, c3, 3, 1, rng)};
  down4_ = {block(c3, c4, 3, 2, rng), block(c4, c4, 3, 1, rng)};
  lateral3_ = Conv2d<T>(c3, c4, 1, 1, false, rng);
  merge3a_ = block(c4, c4, 3, 1, rng);
  merge3b_ = Conv2d<T>(c4, c3, 3, 1, false, rng);
  lateral2_ = Conv2d<T>(c2, c3, 1, 1, false, rng);
  merge2a_ = block(c3, c3, 3, 1, rng);
  merge2b_ = Conv2d<T>(c3, c2, 3, 1, false, rng);
  lateral1_ = Conv2d<T>(c1, c2, 1, 1, false, rng);
  merge1a_ = block(c2, c2, 3, 1, rng);
  merge1b_ = Conv2d<T>(c2, c1, 3, 1, false, rng);
}

template <typename T>
FeaturePyramid<T> Backbone<T>::forward(const Tensor<T>& images, bool training) {
  if (images.rank() != 4 || images.dim(1) != 1) throw DimensionError("backbone: expected [N,1,H,W] input");
  const std::size_t h = images.dim(2), w = images.dim(3);
  if (h % 8 || w % 8 || h < 32 || w < 32)
    throw DimensionError("backbone: input extents must be multiples of 8 and at least 32");

  auto run = [training](std::vector<ConvBn>& blocks, Tensor<T> x) {
    for (auto& b : blocks) x = b(x, training);
    return x;
  };
  auto up_to = [](const Tensor<T>& x, const Tensor<T>& like) {
    return ops::crop2d(ops::upsample2x(x), like.dim(2), like.dim(3));
  };

  const auto f1 = run(down1_, images);
  const auto f2 = run(down2_, f1);
  const auto f3 = run(down3_, f2);
  const auto f4 = run(down4_, f3);

  auto x3 = ops::add(lateral3_(f3), up_to(f4, f3));
  x3 = merge3b_(merge3a_(x3, training));
  auto x2 = ops::add(lateral2_(f2), up_to(x3, f2));
  x2 = merge2b_(merge2a_(x2, training));
  auto x1 = ops::add(lateral1_(f1), up_to(x2, f1));
  x1 = merge1b_(merge1a_(x1, training));
  return {x3, x1, h, w};
}

template <typename T>
void Backbone<T>::collect(const std::string& prefix, Registry<T>& reg) {
  auto add_blocks = [&](const std::string& name, std::vector<ConvBn>& blocks) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto p = prefix + "." + name + "." + std::to_string(i);
      blocks[i].conv.collect(p + ".conv", reg);
      blocks[i].bn.collect(p + ".bn", reg);
    }
  };
  add_blocks("down1", down1_);
  add_blocks("down2", down2_);
  add_blocks("down3", down3_);
  add_blocks("down4", down4_);
  lateral3_.collect(prefix + ".lateral3", reg);
  merge3a_.conv.collect(prefix + ".merge3a.conv", reg);
  merge3a_.bn.collect(prefix + ".merge3a.bn", reg);
  merge3b_.collect(prefix + ".merge3b", reg);
  lateral2_.collect(prefix + ".lateral2", reg);
  merge2a_.conv.collect(prefix + ".merge2a.conv", reg);
  merge2a_.bn.collect(prefix + ".merge2a.bn", reg);
  merge2b_.collect(prefix + ".merge2b", reg);
  lateral1_.collect(prefix + ".lateral1", reg);
  merge1a_.conv.collect(prefix + ".merge1a.conv", reg);
  merge1a_.bn.collect(prefix + ".merge1a.bn", reg);
  merge1b_.collect(prefix + ".merge1b", reg);
}

Image reflect_pad(const Image& image, std::size_t multiple) {
  const std::size_t w = (image.width + multiple - 1) / multiple * multiple;
  const std::size_t h = (image.height + multiple - 1) / multiple * multiple;
  if (w == image.width && h == image.height) return image;
  if (w - image.width >= image.width || h - image.height >= image.height)
    throw DimensionError("reflect_pad: image too small to reflect");
  auto reflect = [](std::size_t i, std::size_t n) { return i < n ? i : 2 * n - 2 - i; };
  Image out(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      out.at(x, y) = image.at(reflect(x, image.width), reflect(y, image.height));
  return out;
}

template <typename T>
Tensor<T> images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw DimensionError("images_to_tensor: no images");
  const std::size_t w = images[0]->width, h = images[0]->height;
  std::vector<T> v;
  v.reserve(images.size() * w * h);
  for (const auto* img : images) {
    if (img->width != w || img->height != h) throw DimensionError("images_to_tensor: extents differ");
    v.insert(v.end(), img->pixels.begin(), img->pixels.end());
  }
  return Tensor<T>::from({images.size(), 1, h, w}, std::move(v));
}

template <typename T>
Tensor<T> positional_encoding(std::size_t h, std::size_t w, std::size_t d) {
  if (d == 0 || d % 4 != 0) throw DimensionError("positional_encoding: width must be a multiple of 4");
  std::vector<T> pe(h * w * d);
  const std::size_t bands = d / 4;
  for (std::size_t c = 0; c < bands; ++c) {
    const double f = std::exp(-std::log(10000.0) * static_cast<double>(2 * c) / static_cast<double>(d / 2));
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        T* row = pe.data() + (y * w + x) * d + 4 * c;
        row[0] = static_cast<T>(std::sin(static_cast<double>(x) * f));
        row[1] = static_cast<T>(std::cos(static_cast<double>(x) * f));
        row[2] = static_cast<T>(std::sin(static_cast<double>(y) * f));
        row[3] = static_cast<T>(std::cos(static_cast<double>(y) * f));
      }
  }
  return Tensor<T>::from({h * w, d}, std::move(pe));
}

template class Backbone<float>;
template class Backbone<double>;
template Tensor<float> images_to_tensor(const std::vector<const Image*>&);
template Tensor<double> images_to_tensor(const std::vector<const Image*>&);
template Tensor<float> positional_encoding(std::size_t, std::size_t, std::size_t);
template Tensor<double> positional_encoding(std::size_t, std::size_t, std::size_t);

}  // namespace tfm
