#include "tfm/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>

#include "tfm/errors.hpp"

namespace tfm {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Next whitespace-separated header integer, skipping '#' comments.
std::size_t pgm_field(const std::vector<unsigned char>& buf, std::size_t& pos, const std::string& path) {
  while (pos < buf.size()) {
    if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(buf[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t v = 0, digits = 0;
  while (pos < buf.size() && std::isdigit(buf[pos])) {
    v = v * 10 + (buf[pos++] - '0');
    if (++digits > 9) throw FormatError("PGM header field too large in '" + path + "'");
  }
  if (digits == 0) throw FormatError("malformed PGM header in '" + path + "'");
  return v;
}

Image decode_pgm(const std::vector<unsigned char>& buf, const std::string& path) {
  std::size_t pos = 2;
  const std::size_t w = pgm_field(buf, pos, path);
  const std::size_t h = pgm_field(buf, pos, path);
  const std::size_t maxval = pgm_field(buf, pos, path);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255)
    throw FormatError("unsupported PGM geometry or maxval in '" + path + "'");
  if (pos >= buf.size() || !std::isspace(buf[pos])) throw FormatError("malformed PGM header in '" + path + "'");
  ++pos;
  if (buf.size() - pos < w * h) throw FormatError("truncated PGM data in '" + path + "'");
  Image img(w, h);
  for (std::size_t i = 0; i < w * h; ++i)
    img.pixels[i] = static_cast<float>(buf[pos + i]) / static_cast<float>(maxval);
  return img;
}

Image decode_png(const std::vector<unsigned char>& buf, const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, buf.data(), buf.size()))
    throw FormatError("cannot decode PNG '" + path + "': " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&png);
    throw FormatError("cannot decode PNG '" + path + "': " + png.message);
  }
  Image img(png.width, png.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const unsigned sum = rgb[3 * i] + rgb[3 * i + 1] + rgb[3 * i + 2];
    img.pixels[i] = static_cast<float>((sum + 1) / 3) / 255.0f;
  }
  return img;
}

void write_png(const std::string& path, const unsigned char* data, std::size_t w, std::size_t h,
               bool rgb) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(w);
  png.height = static_cast<png_uint_32>(h);
  png.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, data, 0, nullptr))
    throw FormatError("cannot write PNG '" + path + "': " + png.message);
}

}  // namespace

std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

Image load_image(const std::string& path) {
  const auto buf = read_file(path);
  if (buf.size() >= 2 && buf[0] == 'P' && buf[1] == '5') return decode_pgm(buf, path);
  static const unsigned char png_magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (buf.size() >= 8 && std::equal(png_magic, png_magic + 8, buf.begin())) return decode_png(buf, path);
  throw FormatError("'" + path + "' is neither binary PGM nor PNG");
}

void save_image(const std::string& path, const Image& image) {
  std::vector<unsigned char> bytes(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), bytes.begin(), quantize);
  if (ends_with(path, ".png")) {
    write_png(path, bytes.data(), image.width, image.height, false);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("cannot write '" + path + "'");
}

void save_png(const std::string& path, const RgbImage& image) {
  write_png(path, image.data.data(), image.width, image.height, true);
}

}  // namespace tfm
