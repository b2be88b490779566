#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tfm/config.hpp"
#include "tfm/metrics.hpp"
#include "tfm/model.hpp"

namespace tfm {

/// Command-line overrides applied on top of a configuration.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> topk;
  std::optional<double> tau;
  std::optional<std::size_t> covisible;
  std::optional<AttentionKernel> kernel;  // all attention stages
};

void apply_overrides(RunConfig& cfg, const Overrides& o);

/// Seed of training pair b at step s; disjoint in practice from
/// evaluation_seed().
std::uint64_t training_seed(std::uint64_t run_seed, std::uint64_t step, std::uint64_t b);
std::uint64_t evaluation_seed(std::uint64_t base, std::uint64_t index);

struct TrainSummary {
  std::vector<double> total_loss;  // per executed step
  std::string final_checkpoint;
  std::uint64_t start_step = 0;
};

/// Trains from scratch, or from `resume` when non-empty. Writes
/// out_dir/loss.csv, out_dir/step_NNNNNN.ckpt every checkpoint_every steps and
/// out_dir/final.ckpt.
TrainSummary cmd_train(const RunConfig& cfg, const std::string& out_dir, const std::string& resume,
                       std::ostream& log);

/// Model from a checkpoint. The configuration comes from `cfg` when given,
/// otherwise from the checkpoint itself; overrides apply last.
Matcher<float> load_model(const std::string& checkpoint, const std::optional<RunConfig>& cfg,
                          const Overrides& overrides, std::ostream& warn);

/// TSV "x1 y1 x2 y2 confidence topic" rows followed by a '#' summary line.
std::string format_matches(const MatchResult& result);

void cmd_match(Matcher<float>& model, const std::string& image_a, const std::string& image_b,
               std::ostream& out);

/// Evaluates every pair in the manifest; writes report.txt and report.csv to
/// out_dir when it is non-empty.
EvalReport cmd_eval(Matcher<float>& model, const std::string& manifest, const std::string& out_dir);

/// Single pair evaluation used by cmd_eval.
PairEvaluation evaluate_pair(Matcher<float>& model, const ImagePair& pair);

/// One overlay per image (topic_a.png, topic_b.png, ...). For two images only
/// the covisible topics are tinted.
std::vector<std::string> cmd_visualize_topics(Matcher<float>& model, const std::vector<std::string>& images,
                                              const std::string& out_dir);

struct BenchRow {
  std::size_t size = 0, features = 0, topics = 0, covisible = 0;
  AttentionKernel kernel = AttentionKernel::linear;
  std::uint64_t restricted_flops = 0, full_flops = 0;
  double restricted_ms = 0.0, full_ms = 0.0;
  double ratio() const { return static_cast<double>(restricted_flops) / static_cast<double>(full_flops); }
};

/// Coarse-stage augmentation cost with uniform topic assignments (feature i
/// gets topic i mod K, the first K_co topics covisible) against a single
/// unrestricted pass over all features.
BenchRow bench_coarse(const RunConfig& cfg, std::size_t image_size, std::size_t topics, std::size_t covisible,
                      AttentionKernel kernel, bool timed = true);
std::vector<BenchRow> cmd_bench(const RunConfig& cfg, const std::vector<std::size_t>& sizes,
                                const std::vector<std::pair<std::size_t, std::size_t>>& topic_sweep);
std::string format_bench(const std::vector<BenchRow>& rows);

/// Writes `count` evaluation pairs' seeds to a manifest.
void cmd_make_manifest(const RunConfig& cfg, std::uint64_t base, std::size_t count, const std::string& path);

/// Renders one synthetic pair: a.png, b.png, h.txt in out_dir.
void cmd_synth(const RunConfig& cfg, std::uint64_t seed, const std::string& out_dir);

}  // namespace tfm
