#pragma once

#include <map>
#include <optional>
#include <vector>

#include "tfm/backbone.hpp"
#include "tfm/coarse_match.hpp"
#include "tfm/config.hpp"
#include "tfm/fine_match.hpp"
#include "tfm/synthdata.hpp"
#include "tfm/topics.hpp"

namespace tfm {

/// Coarse and fine features of one image pair as row matrices, plus the
/// per-feature topic distributions.
template <typename T>
struct PairFeatures {
  Tensor<T> coarse_a, coarse_b;  // [gw*gh x d_c]
  Tensor<T> fine_a, fine_b;      // [fw*fh x d_f]
  Tensor<T> theta_a, theta_b;    // [gw*gh x K]
  std::size_t grid_w = 0, grid_h = 0, fine_w = 0, fine_h = 0;
};

struct Match {
  double xa = 0, ya = 0, xb = 0, yb = 0;  // pixels; pixel centers are integers
  double confidence = 0;
  std::uint32_t topic = 0;
  double coherence = 0;
  double variance = 0;  // heatmap total variance, fine-grid units
  std::size_t cell_a = 0, cell_b = 0;
};

struct MatchResult {
  std::vector<Match> matches;  // descending confidence, ties by (xa, ya)
  std::size_t coarse_candidates = 0;
  std::size_t dropped = 0;  // coarse matches too close to the border to refine
  CovisibleReport covisible;
  std::vector<std::uint32_t> labels_a, labels_b;  // argmax topic per coarse cell
  std::vector<double> theta_image_a, theta_image_b;
  std::size_t grid_w = 0, grid_h = 0;
};

template <typename T>
struct TrainingLoss {
  Tensor<T> total, pos, neg, fine;
  std::size_t gt_matches = 0, fine_matches = 0;
};

struct LossOptions {
  /// Replaces the heatmap variances that weight the fine loss, concatenated
  /// over pairs (used to evaluate the loss at a fixed weighting).
  const std::vector<double>* frozen_variance = nullptr;
  /// Receives the variances that were used.
  std::vector<double>* used_variance = nullptr;
};

/// The full matcher: backbone, topic inference, topic-restricted coarse
/// augmentation and matching, fine refinement.
template <typename T>
class Matcher {
 public:
  explicit Matcher(const RunConfig& cfg);

  const RunConfig& config() const { return cfg_; }
  /// Inference-only knobs (tau, covisible, kernels, flags) may be changed;
  /// shape-determining fields may not.
  RunConfig& mutable_config() { return cfg_; }
  Registry<T> registry();

  std::vector<PairFeatures<T>> features(const std::vector<std::pair<const Image*, const Image*>>& pairs,
                                        bool training, FlopCounter* flops = nullptr);

  MatchResult match(const Image& a, const Image& b, FlopCounter* flops = nullptr);

  TrainingLoss<T> training_loss(const std::vector<const ImagePair*>& pairs, std::uint64_t sample_seed,
                                const LossOptions& options = {});

  Backbone<T> backbone;
  TopicModule<T> topics;
  Augmenter<T> augmenter;
  FineMatcher<T> fine;

 private:
  const Tensor<T>& position_table(std::size_t h, std::size_t w);

  RunConfig cfg_;
  std::map<std::pair<std::size_t, std::size_t>, Tensor<T>> pe_cache_;
};

/// Ground-truth offset of the fine match for coarse pair (i, j) in fine-grid
/// units relative to B's patch center.
Eigen::Vector2d fine_target(const Homography& h, std::size_t cell_a, std::size_t cell_b,
                            std::size_t grid_w);

/// Fine-grid coordinate -> pixel coordinate.
inline double fine_to_pixel(double f) { return 2.0 * f + 0.5; }

}  // namespace tfm
