#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tfm {

/// Grayscale image, row-major, intensities in [0, 1].
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), pixels(w * h, fill) {}
  float& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  float at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  bool operator==(const Image&) const = default;
};

/// 8-bit interleaved RGB.
struct RgbImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h) : width(w), height(h), data(w * h * 3, 0) {}
};

/// Reads binary PGM (P5, maxval <= 255) or PNG, chosen by the file's magic
/// bytes. Color PNGs are converted with round((R + G + B) / 3).
Image load_image(const std::string& path);
/// Writes PNG when the path ends in ".png", binary PGM otherwise.
void save_image(const std::string& path, const Image& image);
void save_png(const std::string& path, const RgbImage& image);

std::uint8_t quantize(float v);

}  // namespace tfm
