#include "tfm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tfm/errors.hpp"
#include "tfm/rng.hpp"

namespace tfm {

Homography::Homography(const Eigen::Matrix3d& raw) {
  if (!raw.allFinite()) throw NumericError("homography: non-finite entries");
  if (std::abs(raw(2, 2)) < 1e-12 * std::max(1.0, raw.cwiseAbs().maxCoeff()))
    throw DegenerateConfigurationError("homography: bottom-right entry vanishes");
  m = raw / raw(2, 2);
}

Homography Homography::inverse() const {
  const double det = m.determinant();
  if (std::abs(det) < 1e-300) throw DegenerateConfigurationError("homography: singular matrix");
  return Homography(m.inverse());
}

Homography Homography::operator*(const Homography& other) const { return Homography(m * other.m); }

double Homography::condition_number() const {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m);
  const auto s = svd.singularValues();
  return s(2) > 0.0 ? s(0) / s(2) : std::numeric_limits<double>::infinity();
}

Homography Homography::translation(double tx, double ty) {
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  t(0, 2) = tx;
  t(1, 2) = ty;
  return Homography(t);
}

Eigen::Vector2d warp_point(const Homography& h, const Eigen::Vector2d& p) {
  const Eigen::Vector3d q = h.m * Eigen::Vector3d(p.x(), p.y(), 1.0);
  if (std::abs(q.z()) <= 1e-12) throw NumericError("warp_point: point maps to infinity");
  return q.head<2>() / q.z();
}

namespace {

// Similarity moving the centroid to the origin with mean distance sqrt(2).
Eigen::Matrix3d normalizer(std::span<const Eigen::Vector2d> pts) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double dist = 0.0;
  for (const auto& p : pts) dist += (p - c).norm();
  dist /= static_cast<double>(pts.size());
  if (dist <= 0.0) throw DegenerateConfigurationError("DLT: all points coincide");
  const double s = std::sqrt(2.0) / dist;
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  t(0, 0) = t(1, 1) = s;
  t(0, 2) = -s * c.x();
  t(1, 2) = -s * c.y();
  return t;
}

bool has_collinear_triple(std::span<const Eigen::Vector2d> pts) {
  double scale = 0.0;
  for (const auto& p : pts)
    for (const auto& q : pts) scale = std::max(scale, (p - q).squaredNorm());
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j)
      for (std::size_t k = j + 1; k < pts.size(); ++k) {
        const Eigen::Vector2d u = pts[j] - pts[i], v = pts[k] - pts[i];
        if (std::abs(u.x() * v.y() - u.y() * v.x()) <= 1e-9 * scale) return true;
      }
  return false;
}

}  // namespace

Homography estimate_homography_dlt(std::span<const PointMatch> matches) {
  const std::size_t n = matches.size();
  if (n < 4) throw InsufficientDataError("DLT: at least four matches required");
  std::vector<Eigen::Vector2d> pa(n), pb(n);
  for (std::size_t i = 0; i < n; ++i) {
    pa[i] = matches[i].a;
    pb[i] = matches[i].b;
  }
  if (n == 4 && (has_collinear_triple(pa) || has_collinear_triple(pb)))
    throw DegenerateConfigurationError("DLT: three of the four points are collinear");
  const Eigen::Matrix3d ta = normalizer(pa), tb = normalizer(pb);

  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p = ta * Eigen::Vector3d(pa[i].x(), pa[i].y(), 1.0);
    const Eigen::Vector3d q = tb * Eigen::Vector3d(pb[i].x(), pb[i].y(), 1.0);
    const double x = p.x(), y = p.y(), u = q.x(), v = q.y();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (s.size() < 8 || s(7) <= 1e-10 * s(0))
    throw DegenerateConfigurationError("DLT: correspondence system is rank deficient");
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return Homography(tb.inverse() * hn * ta);
}

RansacResult ransac_homography(std::span<const PointMatch> matches, double threshold,
                               double confidence, std::uint64_t seed, std::size_t max_iters) {
  const std::size_t n = matches.size();
  if (n < 4) throw InsufficientDataError("RANSAC: at least four matches required");
  if (!(confidence > 0.0 && confidence < 1.0)) throw ContractError("RANSAC: confidence must lie in (0, 1)");

  auto score = [&](const Homography& h, std::vector<char>& mask) {
    std::size_t count = 0;
    mask.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector3d q = h.m * Eigen::Vector3d(matches[i].a.x(), matches[i].a.y(), 1.0);
      if (std::abs(q.z()) <= 1e-12) continue;
      if ((q.head<2>() / q.z() - matches[i].b).norm() <= threshold) {
        mask[i] = 1;
        ++count;
      }
    }
    return count;
  };

  Rng rng(seed);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  RansacResult best;
  bool found = false;
  std::vector<char> mask;
  std::size_t bound = max_iters;
  std::size_t it = 0;
  for (; it < std::min(bound, max_iters); ++it) {
    for (std::size_t k = 0; k < 4; ++k) std::swap(idx[k], idx[k + rng.below(n - k)]);
    const PointMatch sample[4] = {matches[idx[0]], matches[idx[1]], matches[idx[2]], matches[idx[3]]};
    Homography h;
    try {
      h = estimate_homography_dlt(sample);
    } catch (const DegenerateConfigurationError&) {
      continue;
    } catch (const NumericError&) {
      continue;
    }
    const std::size_t count = score(h, mask);
    if (!found || count > best.inlier_count) {
      found = true;
      best.h = h;
      best.inliers = mask;
      best.inlier_count = count;
      const double w = static_cast<double>(count) / static_cast<double>(n);
      const double miss = 1.0 - std::pow(w, 4.0);
      if (miss <= 0.0) {
        bound = 0;
      } else if (miss < 1.0) {
        const double need = std::ceil(std::log(1.0 - confidence) / std::log(miss));
        bound = need < static_cast<double>(max_iters) ? static_cast<std::size_t>(need) : max_iters;
      }
    }
  }
  best.iterations = it;
  if (!found) throw DegenerateConfigurationError("RANSAC: every sample was degenerate");

  std::vector<PointMatch> in;
  for (std::size_t i = 0; i < n; ++i)
    if (best.inliers[i]) in.push_back(matches[i]);
  if (in.size() >= 4) {
    try {
      const Homography refit = estimate_homography_dlt(in);
      best.h = refit;
      best.inlier_count = score(refit, best.inliers);
    } catch (const DegenerateConfigurationError&) {
    } catch (const NumericError&) {
    }
  }
  return best;
}

double corner_error(const Homography& estimate, const Homography& truth, std::size_t width,
                    std::size_t height) {
  const double w = static_cast<double>(width) - 1.0, h = static_cast<double>(height) - 1.0;
  const Eigen::Vector2d corners[4] = {{0, 0}, {w, 0}, {0, h}, {w, h}};
  double sum = 0.0;
  for (const auto& c : corners) sum += (warp_point(estimate, c) - warp_point(truth, c)).norm();
  return sum / 4.0;
}

}  // namespace tfm
