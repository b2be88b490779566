#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tfm/attention.hpp"
#include "tfm/synthdata.hpp"

namespace tfm {

/// Every hyperparameter of a run. Text form is one "key = value" per line.
struct RunConfig {
  // Model.
  std::size_t topics = 8;
  std::size_t covisible = 3;
  double tau = 0.2;
  std::size_t samples = 4;
  std::size_t negatives = 5;
  std::size_t patch = 5;
  std::size_t width1 = 32, width2 = 48, width3 = 64, width4 = 96;
  std::size_t topic_depth = 2;
  std::size_t heads = 4;
  AttentionKernel topic_kernel = AttentionKernel::linear;
  AttentionKernel coarse_kernel = AttentionKernel::linear;
  AttentionKernel fine_kernel = AttentionKernel::dot;
  double temperature = 0.1;
  bool positional_encoding = true;
  bool mutual_nearest = true;
  bool hard_argmax = false;

  // Training.
  std::uint64_t seed = 0;
  std::size_t steps = 3000;
  std::size_t batch = 1;
  double learning_rate = 0.01;
  double grad_clip = 0.0;  // global norm; 0 disables
  std::size_t fine_matches = 64;  // ground-truth matches refined per pair
  std::size_t log_every = 50;
  std::size_t checkpoint_every = 500;

  // Synthetic data.
  std::size_t image_size = 128;
  double perspective = 0.15;
  double jitter = 0.1;

  // Evaluation.
  std::size_t topk = 1000;
  double ransac_threshold = 3.0;
  double ransac_confidence = 0.99999;
  std::size_t ransac_iterations = 10000;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();
  std::string to_text() const;
  /// Throws ConfigError when an invariant (K >= K_co >= 1, tau in (0,1),
  /// odd patch, ...) is broken.
  void validate() const;
  /// Hash over the fields that determine parameter shapes.
  std::uint64_t architecture_hash() const;
  SynthConfig synth() const;
};

/// Defaults overridden by the file. Unknown keys and malformed lines raise
/// ConfigError naming the offending key or line.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text, const std::string& origin = "config");

}  // namespace tfm
