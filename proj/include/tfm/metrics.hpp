#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tfm/geometry.hpp"

namespace tfm {

/// Area under the recall-vs-error curve on [0, threshold] divided by the
/// threshold, by the trapezoid rule over the sorted errors.
double auc(std::span<const double> errors, double threshold);

/// Fraction of matches whose B point lies within t pixels of the truth-warped
/// A point, for each t. Empty match sets score 0.
std::vector<double> mma(std::span<const PointMatch> matches, const Homography& truth,
                        std::span<const double> thresholds);

struct PairEvaluation {
  std::uint64_t seed = 0;
  std::size_t matches = 0;
  std::size_t inliers = 0;
  double corner_error = 0.0;  // infinity when no homography could be fitted
  std::size_t coarse_correct = 0;  // matches whose B cell is within one cell of the truth
  double coarse_precision = 0.0;
  double topic_agreement = 0.0;  // ground-truth cell pairs sharing the argmax topic
  std::vector<double> mma;
};

struct EvalReport {
  std::vector<PairEvaluation> pairs;
  std::vector<double> auc_thresholds{3.0, 5.0, 10.0};
  std::vector<double> mma_thresholds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<double> auc_values;
  std::vector<double> mma_curve;
  double mean_matches = 0.0;
  double mean_inlier_ratio = 0.0;
  double mean_coarse_precision = 0.0;  // pooled over all matches
  double mean_topic_agreement = 0.0;

  /// Fills the aggregate fields from `pairs`.
  void finalize();
  std::string to_text() const;
  std::string to_csv() const;
};

}  // namespace tfm
