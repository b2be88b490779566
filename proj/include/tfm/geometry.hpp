#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

namespace tfm {

/// Projective transform of pixel coordinates (x, y), stored with H(2,2) = 1.
struct Homography {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();

  Homography() = default;
  /// Normalizes so the bottom-right entry is 1; throws when it vanishes.
  explicit Homography(const Eigen::Matrix3d& raw);

  Homography inverse() const;
  /// (this * other)(p) = this(other(p)).
  Homography operator*(const Homography& other) const;
  double condition_number() const;
  static Homography translation(double tx, double ty);
};

Eigen::Vector2d warp_point(const Homography& h, const Eigen::Vector2d& p);

struct PointMatch {
  Eigen::Vector2d a, b;
};

/// Normalized DLT over all matches. Throws InsufficientDataError below four
/// matches and DegenerateConfigurationError for rank-deficient systems (for a
/// minimal set: any three collinear points).
Homography estimate_homography_dlt(std::span<const PointMatch> matches);

struct RansacResult {
  Homography h;
  std::vector<char> inliers;
  std::size_t inlier_count = 0;
  std::size_t iterations = 0;
};

/// Four-point RANSAC with the adaptive iteration bound
/// log(1 - confidence) / log(1 - w^4), capped at max_iters, then a DLT refit
/// on the inliers of the best hypothesis. Inliers have reprojection error
/// ||h(a) - b|| <= threshold.
RansacResult ransac_homography(std::span<const PointMatch> matches, double threshold,
                               double confidence, std::uint64_t seed, std::size_t max_iters = 10000);

/// Mean distance between the images of the four image corners under the two
/// transforms; corners are (0,0), (w-1,0), (0,h-1), (w-1,h-1).
double corner_error(const Homography& estimate, const Homography& truth, std::size_t width,
                    std::size_t height);

}  // namespace tfm
