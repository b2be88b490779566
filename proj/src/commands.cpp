#include "tfm/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "tfm/checkpoint.hpp"
#include "tfm/errors.hpp"
#include "tfm/optim.hpp"
#include "tfm/visualize.hpp"

namespace fs = std::filesystem;

namespace tfm {

namespace {

std::string step_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06llu.ckpt", static_cast<unsigned long long>(step));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << text;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create directory '" + dir + "': " + ec.message());
}

// Rows of an existing loss log that precede `step`, so a resumed run
// continues the same file.
std::string loss_log_prefix(const fs::path& path, std::uint64_t step) {
  std::ifstream in(path);
  std::string line, kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (!line.empty() && std::stoull(line.substr(0, line.find(','))) < step) kept += line + '\n';
  }
  return kept;
}

}  // namespace

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.topk) cfg.topk = *o.topk;
  if (o.tau) cfg.tau = *o.tau;
  if (o.covisible) cfg.covisible = *o.covisible;
  if (o.kernel) cfg.topic_kernel = cfg.coarse_kernel = cfg.fine_kernel = *o.kernel;
  cfg.validate();
}

std::uint64_t training_seed(std::uint64_t run_seed, std::uint64_t step, std::uint64_t b) {
  return Rng::mix(Rng::mix(run_seed ^ 0x3c6ef372fe94f82bULL) + Rng::mix(step * 65537ULL + b));
}

std::uint64_t evaluation_seed(std::uint64_t base, std::uint64_t index) {
  return Rng::mix(Rng::mix(base ^ 0xa54ff53a5f1d36f1ULL) + Rng::mix(index) + 0x9b05688c2b3e6c1fULL);
}

TrainSummary cmd_train(const RunConfig& cfg, const std::string& out_dir, const std::string& resume,
                       std::ostream& log) {
  cfg.validate();
  ensure_dir(out_dir);
  Matcher<float> model(cfg);
  auto reg = model.registry();
  Adam<float> adam(reg);
  TrainSummary summary;
  if (!resume.empty()) summary.start_step = restore(model, load_checkpoint(resume), &adam, log);

  const fs::path csv_path = fs::path(out_dir) / "loss.csv";
  const std::string previous = summary.start_step ? loss_log_prefix(csv_path, summary.start_step) : "";
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw FormatError("cannot write '" + csv_path.string() + "'");
  csv << "step,total,pos,neg,fine,lr,grad_norm,gt_matches,fine_matches\n" << previous;
  csv << std::setprecision(9);

  const auto synth = cfg.synth();
  for (std::uint64_t step = summary.start_step; step < cfg.steps; ++step) {
    std::vector<ImagePair> pairs;
    for (std::size_t b = 0; b < cfg.batch; ++b) pairs.push_back(gen_pair(training_seed(cfg.seed, step, b), synth));
    std::vector<const ImagePair*> ptrs;
    for (const auto& p : pairs) ptrs.push_back(&p);

    reg.zero_grad();
    const auto loss = model.training_loss(ptrs, training_seed(cfg.seed, step, 0xffff));
    const double total = loss.total.item();
    if (!std::isfinite(total)) throw NumericError("training loss became non-finite at step " + std::to_string(step));
    loss.total.backward();
    const double norm = clip_grad_norm(reg, cfg.grad_clip);
    if (!std::isfinite(norm)) throw NumericError("gradient became non-finite at step " + std::to_string(step));
    const double lr = cosine_lr(cfg.learning_rate, step, cfg.steps);
    adam.step(lr);

    summary.total_loss.push_back(total);
    csv << step << ',' << total << ',' << loss.pos.item() << ',' << loss.neg.item() << ',' << loss.fine.item()
        << ',' << lr << ',' << norm << ',' << loss.gt_matches << ',' << loss.fine_matches << '\n';
    if (cfg.log_every && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
      log << "step " << step << " loss " << total << " (pos " << loss.pos.item() << ", neg " << loss.neg.item()
          << ", fine " << loss.fine.item() << ") lr " << lr << '\n';
    if (cfg.checkpoint_every && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps)
      save_checkpoint((fs::path(out_dir) / step_name(step + 1)).string(), snapshot(model, &adam, step + 1));
  }
  summary.final_checkpoint = (fs::path(out_dir) / "final.ckpt").string();
  save_checkpoint(summary.final_checkpoint,
                  snapshot(model, &adam, std::max<std::uint64_t>(summary.start_step, cfg.steps)));
  return summary;
}

Matcher<float> load_model(const std::string& checkpoint, const std::optional<RunConfig>& cfg,
                          const Overrides& overrides, std::ostream& warn) {
  const auto ckpt = load_checkpoint(checkpoint);
  RunConfig c = cfg ? *cfg : parse_config(ckpt.config_text, checkpoint);
  apply_overrides(c, overrides);
  Matcher<float> model(c);
  restore(model, ckpt, nullptr, warn);
  return model;
}

std::string format_matches(const MatchResult& result) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  for (const auto& m : result.matches)
    os << m.xa << '\t' << m.ya << '\t' << m.xb << '\t' << m.yb << '\t' << std::setprecision(6) << m.confidence
       << std::setprecision(4) << '\t' << m.topic << '\n';
  os << "# matches " << result.matches.size() << " coarse_candidates " << result.coarse_candidates
     << " border_dropped " << result.dropped << " covisible_topics";
  for (auto t : result.covisible.selected) os << ' ' << t;
  os << '\n';
  return os.str();
}

void cmd_match(Matcher<float>& model, const std::string& image_a, const std::string& image_b, std::ostream& out) {
  const Image a = load_image(image_a);
  const Image b = load_image(image_b);
  out << format_matches(model.match(a, b));
}

PairEvaluation evaluate_pair(Matcher<float>& model, const ImagePair& pair) {
  const auto& cfg = model.config();
  auto res = model.match(pair.a, pair.b);
  if (res.matches.size() > cfg.topk) res.matches.resize(cfg.topk);

  PairEvaluation ev;
  ev.seed = pair.seed;
  ev.matches = res.matches.size();
  std::vector<PointMatch> pm;
  for (const auto& m : res.matches) {
    pm.push_back({{m.xa, m.ya}, {m.xb, m.yb}});
    const Eigen::Vector2d p = warp_point(pair.h, cell_center(m.cell_a, res.grid_w));
    const double col = std::floor((p.x() + 0.5) / 8.0), row = std::floor((p.y() + 0.5) / 8.0);
    const double cb = static_cast<double>(m.cell_b % res.grid_w), rb = static_cast<double>(m.cell_b / res.grid_w);
    if (std::abs(col - cb) <= 1.0 && std::abs(row - rb) <= 1.0) ++ev.coarse_correct;
  }
  ev.coarse_precision = ev.matches ? static_cast<double>(ev.coarse_correct) / static_cast<double>(ev.matches) : 0.0;
  ev.topic_agreement = topic_agreement(res.labels_a, res.labels_b, gt_coarse_matches(pair.h, res.grid_w, res.grid_h));

  EvalReport defaults;
  ev.mma = mma(pm, pair.h, defaults.mma_thresholds);
  ev.corner_error = std::numeric_limits<double>::infinity();
  if (pm.size() >= 4) {
    try {
      const auto r = ransac_homography(pm, cfg.ransac_threshold, cfg.ransac_confidence, cfg.seed ^ pair.seed,
                                       cfg.ransac_iterations);
      ev.inliers = r.inlier_count;
      ev.corner_error = corner_error(r.h, pair.h, pair.a.width, pair.a.height);
    } catch (const DegenerateConfigurationError&) {
    } catch (const InsufficientDataError&) {
    } catch (const NumericError&) {
    }
  }
  return ev;
}

EvalReport cmd_eval(Matcher<float>& model, const std::string& manifest, const std::string& out_dir) {
  const auto synth = model.config().synth();
  const auto seeds = read_manifest(manifest, synth);
  EvalReport report;
  for (auto seed : seeds) report.pairs.push_back(evaluate_pair(model, gen_pair(seed, synth)));
  report.finalize();
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text(fs::path(out_dir) / "report.txt", report.to_text());
    write_text(fs::path(out_dir) / "report.csv", report.to_csv());
  }
  return report;
}

std::vector<std::string> cmd_visualize_topics(Matcher<float>& model, const std::vector<std::string>& images,
                                              const std::string& out_dir) {
  if (images.empty() || images.size() > 2) throw ContractError("visualize: expected one or two images");
  ensure_dir(out_dir);
  std::vector<Image> imgs;
  for (const auto& path : images) imgs.push_back(load_image(path));
  // A single image is matched against itself; every topic is then shown.
  const Image& other = imgs.size() == 2 ? imgs[1] : imgs[0];
  const auto res = model.match(imgs[0], other);
  std::vector<bool> shown;
  if (imgs.size() == 2) {
    shown.assign(model.config().topics, false);
    for (auto t : res.covisible.selected) shown[t] = true;
  }
  std::vector<std::string> written;
  const char* names[] = {"topic_a.png", "topic_b.png"};
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const auto& labels = i == 0 ? res.labels_a : res.labels_b;
    const auto path = (fs::path(out_dir) / names[i]).string();
    save_png(path, topic_overlay(imgs[i], labels, res.grid_w, res.grid_h, shown));
    written.push_back(path);
  }
  return written;
}

BenchRow bench_coarse(const RunConfig& cfg, std::size_t image_size, std::size_t topics, std::size_t covisible,
                      AttentionKernel kernel, bool timed) {
  if (covisible == 0 || covisible > topics) throw ConfigError("bench: need 1 <= K_co <= K");
  BenchRow row;
  row.size = image_size;
  row.features = (image_size / 8) * (image_size / 8);
  row.topics = topics;
  row.covisible = covisible;
  row.kernel = kernel;

  Rng rng(cfg.seed ^ 0xbe5c4ULL);
  Augmenter<float> aug(cfg.width3, cfg.heads, kernel, rng);
  std::vector<float> va(row.features * cfg.width3), vb(va.size());
  for (auto& v : va) v = static_cast<float>(rng.normal());
  for (auto& v : vb) v = static_cast<float>(rng.normal());
  const auto fa = Tensor<float>::from({row.features, cfg.width3}, va);
  const auto fb = Tensor<float>::from({row.features, cfg.width3}, vb);

  std::vector<std::uint32_t> labels(row.features), zeros(row.features, 0);
  for (std::size_t i = 0; i < row.features; ++i) labels[i] = static_cast<std::uint32_t>(i % topics);
  std::vector<std::uint32_t> allowed(covisible), all{0};
  for (std::size_t t = 0; t < covisible; ++t) allowed[t] = static_cast<std::uint32_t>(t);
  const auto restricted = group_by_topic(labels, labels, allowed);
  const auto full = group_by_topic(zeros, zeros, all);

  NoGradGuard no_grad;
  auto run = [&](const TopicGroups& g, std::uint64_t& flops, double& ms) {
    FlopCounter counter;
    const auto t0 = std::chrono::steady_clock::now();
    aug(fa, fb, g, &counter);
    ms = timed ? std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() : 0.0;
    flops = counter.total();
  };
  run(restricted, row.restricted_flops, row.restricted_ms);
  run(full, row.full_flops, row.full_ms);
  return row;
}

std::vector<BenchRow> cmd_bench(const RunConfig& cfg, const std::vector<std::size_t>& sizes,
                                const std::vector<std::pair<std::size_t, std::size_t>>& topic_sweep) {
  std::vector<BenchRow> rows;
  for (auto size : sizes)
    for (const auto& [k, kco] : topic_sweep) rows.push_back(bench_coarse(cfg, size, k, kco, cfg.coarse_kernel));
  return rows;
}

std::string format_bench(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "size,features,K,K_co,kernel,restricted_macs,full_macs,ratio,expected_ratio,restricted_ms,full_ms\n";
  for (const auto& r : rows) {
    os << r.size << ',' << r.features << ',' << r.topics << ',' << r.covisible << ',' << kernel_name(r.kernel)
       << ',' << r.restricted_flops << ',' << r.full_flops << ',' << std::setprecision(6) << r.ratio() << ','
       << static_cast<double>(r.covisible) / static_cast<double>(r.topics) << ',' << std::fixed
       << std::setprecision(3) << r.restricted_ms << ',' << r.full_ms << std::defaultfloat << '\n';
  }
  return os.str();
}

void cmd_make_manifest(const RunConfig& cfg, std::uint64_t base, std::size_t count, const std::string& path) {
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t i = 0; i < count; ++i) seeds[i] = evaluation_seed(base, i);
  write_manifest(path, seeds, cfg.synth());
}

void cmd_synth(const RunConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  ensure_dir(out_dir);
  const auto pair = gen_pair(seed, cfg.synth());
  save_image((fs::path(out_dir) / "a.png").string(), pair.a);
  save_image((fs::path(out_dir) / "b.png").string(), pair.b);
  std::ostringstream os;
  os << std::setprecision(17);
  for (int r = 0; r < 3; ++r) os << pair.h.m(r, 0) << ' ' << pair.h.m(r, 1) << ' ' << pair.h.m(r, 2) << '\n';
  write_text(fs::path(out_dir) / "h.txt", os.str());
}

}  // namespace tfm
