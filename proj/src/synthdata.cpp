#include "tfm/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "tfm/errors.hpp"

namespace tfm {

std::uint64_t SynthConfig::hash() const {
  std::ostringstream os;
  os.precision(17);
  os << "size=" << size << ";perspective=" << perspective << ";jitter=" << jitter;
  const auto s = os.str();
  return fnv1a(s.data(), s.size());
}

namespace {

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

void add_value_noise(std::vector<double>& img, std::size_t size, std::size_t period, double amp,
                     Rng& rng) {
  const std::size_t cells = size / period + 2;
  std::vector<double> lattice(cells * cells);
  for (auto& v : lattice) v = rng.uniform();
  for (std::size_t y = 0; y < size; ++y) {
    const double fy = static_cast<double>(y) / static_cast<double>(period);
    const auto y0 = static_cast<std::size_t>(fy);
    const double ty = smooth(fy - static_cast<double>(y0));
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x) / static_cast<double>(period);
      const auto x0 = static_cast<std::size_t>(fx);
      const double tx = smooth(fx - static_cast<double>(x0));
      const double a = lattice[y0 * cells + x0], b = lattice[y0 * cells + x0 + 1];
      const double c = lattice[(y0 + 1) * cells + x0], d = lattice[(y0 + 1) * cells + x0 + 1];
      img[y * size + x] += amp * ((a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty);
    }
  }
}

bool inside_polygon(const std::vector<Eigen::Vector2d>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& p = poly[i];
    const auto& q = poly[j];
    if ((p.y() > y) != (q.y() > y) && x < (q.x() - p.x()) * (y - p.y()) / (q.y() - p.y()) + p.x())
      in = !in;
  }
  return in;
}

}  // namespace

Image render_texture(std::size_t size, Rng& rng) {
  std::vector<double> img(size * size, 0.0);
  const std::size_t periods[4] = {32, 16, 8, 4};
  double amp = 0.5;
  for (std::size_t p : periods) {
    add_value_noise(img, size, p, amp, rng);
    amp *= 0.5;
  }
  const std::size_t shapes = 10 + rng.below(10);
  for (std::size_t s = 0; s < shapes; ++s) {
    const double cx = rng.uniform() * static_cast<double>(size);
    const double cy = rng.uniform() * static_cast<double>(size);
    const double radius = (0.05 + 0.15 * rng.uniform()) * static_cast<double>(size);
    const std::size_t verts = 3 + rng.below(5);
    std::vector<double> angles(verts);
    for (auto& a : angles) a = rng.uniform() * 2.0 * std::numbers::pi;
    std::sort(angles.begin(), angles.end());
    std::vector<Eigen::Vector2d> poly;
    for (double a : angles) {
      const double r = radius * (0.5 + 0.5 * rng.uniform());
      poly.emplace_back(cx + r * std::cos(a), cy + r * std::sin(a));
    }
    const double level = rng.uniform() * 1.4;
    const double stripes = rng.uniform() < 0.3 ? 0.5 + rng.uniform() : 0.0;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        if (!inside_polygon(poly, static_cast<double>(x), static_cast<double>(y))) continue;
        double v = level;
        if (stripes > 0.0) v += 0.3 * std::sin(stripes * (static_cast<double>(x) + static_cast<double>(y)));
        img[y * size + x] = 0.6 * v + 0.4 * img[y * size + x];
      }
  }
  const auto [lo, hi] = std::minmax_element(img.begin(), img.end());
  const double span = std::max(*hi - *lo, 1e-9);
  Image out(size, size);
  for (std::size_t i = 0; i < img.size(); ++i)
    out.pixels[i] = static_cast<float>(0.05 + 0.9 * (img[i] - *lo) / span);
  return out;
}

Image warp_image(const Image& src, const Homography& h, std::size_t width, std::size_t height) {
  const Homography inv = h.inverse();
  Image dst(width, height);
  const long sw = static_cast<long>(src.width), sh = static_cast<long>(src.height);
  auto pixel = [&](long x, long y) -> double {
    return (x < 0 || y < 0 || x >= sw || y >= sh) ? 0.0 : src.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
  };
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const Eigen::Vector3d q = inv.m * Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y), 1.0);
      if (std::abs(q.z()) <= 1e-12) continue;
      const double sx = q.x() / q.z(), sy = q.y() / q.z();
      if (!(sx > -1.0 && sy > -1.0 && sx < static_cast<double>(sw) && sy < static_cast<double>(sh))) continue;
      const long x0 = static_cast<long>(std::floor(sx)), y0 = static_cast<long>(std::floor(sy));
      const double tx = sx - static_cast<double>(x0), ty = sy - static_cast<double>(y0);
      if (tx == 0.0 && ty == 0.0) {
        dst.at(x, y) = static_cast<float>(pixel(x0, y0));
        continue;
      }
      const double v = (pixel(x0, y0) * (1 - tx) + pixel(x0 + 1, y0) * tx) * (1 - ty) +
                       (pixel(x0, y0 + 1) * (1 - tx) + pixel(x0 + 1, y0 + 1) * tx) * ty;
      dst.at(x, y) = static_cast<float>(v);
    }
  return dst;
}

Eigen::Vector2d cell_center(std::size_t cell, std::size_t grid_w, std::size_t cell_size) {
  const double c = static_cast<double>(cell_size);
  return {static_cast<double>(cell % grid_w) * c + (c - 1.0) / 2.0,
          static_cast<double>(cell / grid_w) * c + (c - 1.0) / 2.0};
}

std::vector<std::pair<std::size_t, std::size_t>> gt_coarse_matches(const Homography& h,
                                                                   std::size_t grid_w,
                                                                   std::size_t grid_h,
                                                                   std::size_t cell_size) {
  const double c = static_cast<double>(cell_size);
  // Nearest cell index along one axis, ties (exact cell borders) to the lower.
  auto axis_cell = [c](double p) { return static_cast<long>(std::ceil((p + 0.5) / c)) - 1; };
  std::vector<long> best_a(grid_w * grid_h, -1);
  std::vector<double> best_d(grid_w * grid_h, 0.0);
  for (std::size_t i = 0; i < grid_w * grid_h; ++i) {
    const Eigen::Vector3d q = h.m * Eigen::Vector3d(cell_center(i, grid_w, cell_size).x(),
                                                    cell_center(i, grid_w, cell_size).y(), 1.0);
    if (std::abs(q.z()) <= 1e-12) continue;
    const Eigen::Vector2d p = q.head<2>() / q.z();
    if (!(p.x() >= -0.5 && p.y() >= -0.5)) continue;
    const long cx = axis_cell(p.x()), cy = axis_cell(p.y());
    if (cx < 0 || cy < 0 || cx >= static_cast<long>(grid_w) || cy >= static_cast<long>(grid_h)) continue;
    const std::size_t j = static_cast<std::size_t>(cy) * grid_w + static_cast<std::size_t>(cx);
    const double d = (p - cell_center(j, grid_w, cell_size)).norm();
    if (best_a[j] < 0 || d < best_d[j]) {
      best_a[j] = static_cast<long>(i);
      best_d[j] = d;
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t j = 0; j < best_a.size(); ++j)
    if (best_a[j] >= 0) out.emplace_back(static_cast<std::size_t>(best_a[j]), j);
  std::sort(out.begin(), out.end());
  return out;
}

ImagePair gen_pair(std::uint64_t seed, const SynthConfig& cfg) {
  if (cfg.size < 64 || cfg.size % 8 != 0) throw ConfigError("synth: size must be a multiple of 8 and at least 64");
  if (cfg.perspective < 0.0 || cfg.perspective >= 0.5 || cfg.jitter < 0.0 || cfg.jitter >= 1.0)
    throw ConfigError("synth: perspective must lie in [0, 0.5) and jitter in [0, 1)");
  const Rng root(seed);
  Rng tex_rng = root.split(1);
  ImagePair pair;
  pair.seed = seed;
  pair.a = render_texture(cfg.size, tex_rng);

  const double s = static_cast<double>(cfg.size) - 1.0;
  const Eigen::Vector2d src[4] = {{0, 0}, {s, 0}, {0, s}, {s, s}};
  const std::size_t grid = cfg.size / 8;
  for (std::uint64_t attempt = 0;; ++attempt) {
    if (attempt == 1000) throw NumericError("synth: no acceptable homography after 1000 attempts");
    Rng geo = root.split(2 + attempt);
    std::array<Eigen::Vector2d, 4> dst;
    bool moved = false;
    for (int k = 0; k < 4; ++k) {
      const Eigen::Vector2d d((2.0 * geo.uniform() - 1.0) * cfg.perspective * static_cast<double>(cfg.size),
                              (2.0 * geo.uniform() - 1.0) * cfg.perspective * static_cast<double>(cfg.size));
      moved = moved || d.x() != 0.0 || d.y() != 0.0;
      dst[k] = src[k] + d;
    }
    Homography h;
    if (moved) {
      PointMatch pm[4];
      for (int k = 0; k < 4; ++k) pm[k] = {src[k], dst[k]};
      try {
        h = estimate_homography_dlt(pm);
      } catch (const DegenerateConfigurationError&) {
        continue;
      }
    }
    if (h.condition_number() >= 1e6) continue;
    std::size_t inside = 0;
    for (std::size_t i = 0; i < grid * grid; ++i) {
      const Eigen::Vector3d q = h.m * Eigen::Vector3d(cell_center(i, grid).x(), cell_center(i, grid).y(), 1.0);
      if (q.z() <= 1e-12) continue;
      const double x = q.x() / q.z(), y = q.y() / q.z();
      if (x >= -0.5 && y >= -0.5 && x < static_cast<double>(cfg.size) - 0.5 && y < static_cast<double>(cfg.size) - 0.5)
        ++inside;
    }
    if (static_cast<double>(inside) < 0.3 * static_cast<double>(grid * grid)) continue;
    pair.h = h;
    for (int k = 0; k < 4; ++k) pair.corners[k] = moved ? dst[k] : src[k];
    Rng photo = geo.split(99);
    pair.contrast = 1.0 + (2.0 * photo.uniform() - 1.0) * cfg.jitter;
    pair.brightness = (2.0 * photo.uniform() - 1.0) * 0.5 * cfg.jitter;
    break;
  }

  if (pair.h.m == Eigen::Matrix3d::Identity()) {
    pair.b = pair.a;
  } else {
    pair.b = warp_image(pair.a, pair.h, cfg.size, cfg.size);
  }
  // Photometric change on the covered area only; zero fill stays zero.
  Image coverage = warp_image(Image(cfg.size, cfg.size, 1.0f), pair.h, cfg.size, cfg.size);
  const float c = static_cast<float>(pair.contrast), b = static_cast<float>(pair.brightness);
  for (std::size_t i = 0; i < pair.b.pixels.size(); ++i) {
    if (coverage.pixels[i] <= 0.0f) continue;
    pair.b.pixels[i] = std::clamp(pair.b.pixels[i] * c + b * coverage.pixels[i], 0.0f, 1.0f);
  }
  return pair;
}

void write_manifest(const std::string& path, const std::vector<std::uint64_t>& seeds,
                    const SynthConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest '" + path + "'");
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(cfg.hash()));
  for (auto s : seeds) out << s << '\t' << hash << '\n';
}

std::vector<std::uint64_t> read_manifest(const std::string& path, const SynthConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest '" + path + "'");
  char expected[17];
  std::snprintf(expected, sizeof expected, "%016llx", static_cast<unsigned long long>(cfg.hash()));
  std::vector<std::uint64_t> seeds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected seed<TAB>config-hash");
    std::uint64_t seed = 0;
    try {
      std::size_t used = 0;
      seed = std::stoull(line.substr(0, tab), &used);
      if (used != tab) throw std::invalid_argument("seed");
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": bad seed");
    }
    if (line.substr(tab + 1) != expected)
      throw FormatError("manifest line " + std::to_string(lineno) + ": config hash " + line.substr(tab + 1) +
                        " does not match the current synthetic-data config (" + expected + ")");
    seeds.push_back(seed);
  }
  return seeds;
}

}  // namespace tfm
