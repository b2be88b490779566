#include "tfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "tfm/errors.hpp"

namespace tfm {

double auc(std::span<const double> errors, double threshold) {
  if (!(threshold > 0.0)) throw ContractError("auc: threshold must be positive");
  if (errors.empty()) return 0.0;
  std::vector<double> e(errors.begin(), errors.end());
  std::sort(e.begin(), e.end());
  const std::size_t n = e.size();
  // Piecewise-linear curve through (0, 0) and (e_k, k / n) for errors below
  // the threshold, continued flat up to the threshold.
  double area = 0.0, prev_e = 0.0, prev_r = 0.0;
  for (std::size_t k = 0; k < n && e[k] < threshold; ++k) {
    const double r = static_cast<double>(k + 1) / static_cast<double>(n);
    area += (e[k] - prev_e) * (prev_r + r) / 2.0;
    prev_e = e[k];
    prev_r = r;
  }
  area += (threshold - prev_e) * prev_r;
  return area / threshold;
}

std::vector<double> mma(std::span<const PointMatch> matches, const Homography& truth,
                        std::span<const double> thresholds) {
  std::vector<double> out(thresholds.size(), 0.0);
  if (matches.empty()) return out;
  std::vector<double> err;
  err.reserve(matches.size());
  for (const auto& m : matches) err.push_back((warp_point(truth, m.a) - m.b).norm());
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    std::size_t ok = 0;
    for (double e : err) ok += e <= thresholds[t] ? 1 : 0;
    out[t] = static_cast<double>(ok) / static_cast<double>(matches.size());
  }
  return out;
}

void EvalReport::finalize() {
  std::vector<double> errors;
  for (const auto& p : pairs) errors.push_back(p.corner_error);
  auc_values.clear();
  for (double t : auc_thresholds) auc_values.push_back(auc(errors, t));
  mma_curve.assign(mma_thresholds.size(), 0.0);
  mean_matches = mean_inlier_ratio = mean_coarse_precision = mean_topic_agreement = 0.0;
  if (pairs.empty()) return;
  for (const auto& p : pairs) {
    for (std::size_t t = 0; t < mma_curve.size() && t < p.mma.size(); ++t) mma_curve[t] += p.mma[t];
    mean_matches += static_cast<double>(p.matches);
    mean_inlier_ratio += p.matches ? static_cast<double>(p.inliers) / static_cast<double>(p.matches) : 0.0;
    mean_topic_agreement += p.topic_agreement;
  }
  std::size_t total = 0, correct = 0;
  for (const auto& p : pairs) {
    total += p.matches;
    correct += p.coarse_correct;
  }
  mean_coarse_precision = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  const double n = static_cast<double>(pairs.size());
  for (auto& v : mma_curve) v /= n;
  mean_matches /= n;
  mean_inlier_ratio /= n;
  mean_topic_agreement /= n;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "pairs " << pairs.size() << '\n';
  for (std::size_t i = 0; i < auc_thresholds.size() && i < auc_values.size(); ++i)
    os << "auc@" << auc_thresholds[i] << "px " << auc_values[i] << '\n';
  os << "mma";
  for (double v : mma_curve) os << ' ' << v;
  os << '\n';
  os << "mean_matches " << mean_matches << '\n';
  os << "mean_inlier_ratio " << mean_inlier_ratio << '\n';
  os << "mean_coarse_precision " << mean_coarse_precision << '\n';
  os << "mean_topic_agreement " << mean_topic_agreement << '\n';
  return os.str();
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "seed,matches,inliers,corner_error,coarse_precision,topic_agreement";
  for (double t : mma_thresholds) os << ",mma@" << t;
  os << '\n';
  for (const auto& p : pairs) {
    os << p.seed << ',' << p.matches << ',' << p.inliers << ',' << p.corner_error << ','
       << p.coarse_precision << ',' << p.topic_agreement;
    for (double v : p.mma) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

}  // namespace tfm
