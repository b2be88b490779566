#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "tfm/commands.hpp"
#include "tfm/errors.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> topk;
  std::optional<double> tau;
  std::optional<std::size_t> kco;
  std::optional<std::string> kernel;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "configuration file (key = value lines)");
    app->add_option("--seed", seed, "run seed");
    app->add_option("--out", out, "output directory or file");
    app->add_option("--topk", topk, "cap on matches per pair during evaluation");
    app->add_option("--tau", tau, "coarse confidence threshold");
    app->add_option("--kco", kco, "number of covisible topics");
    app->add_option("--kernel", kernel, "attention kernel for every stage")->check(CLI::IsMember({"dot", "linear"}));
  }

  tfm::Overrides overrides() const {
    tfm::Overrides o;
    o.seed = seed;
    o.topk = topk;
    o.tau = tau;
    o.covisible = kco;
    if (kernel) o.kernel = tfm::parse_kernel(*kernel);
    return o;
  }

  std::optional<tfm::RunConfig> file_config() const {
    if (config.empty()) return std::nullopt;
    return tfm::load_config(config);
  }

  tfm::RunConfig config_with_overrides() const {
    auto cfg = file_config().value_or(tfm::RunConfig{});
    tfm::apply_overrides(cfg, overrides());
    return cfg;
  }
};

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topic-assisted feature matching on synthetic image pairs"};
  app.require_subcommand(1);

  CommonFlags train_f, match_f, eval_f, vis_f, bench_f, synth_f, manifest_f;
  std::string resume, checkpoint, image_a, image_b, manifest, sizes = "64,128,256,512",
                                                                 sweep = "8:1,8:2,8:3,16:2,16:4,32:4";
  std::vector<std::string> images;
  std::size_t count = 100;
  std::uint64_t base = 1;

  auto* train = app.add_subcommand("train", "train on streamed synthetic pairs");
  train_f.attach(train);
  train->add_option("--resume", resume, "checkpoint to continue from");

  auto* match = app.add_subcommand("match", "match two images and print TSV");
  match_f.attach(match);
  match->add_option("checkpoint", checkpoint)->required();
  match->add_option("image_a", image_a)->required();
  match->add_option("image_b", image_b)->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over a dataset manifest");
  eval_f.attach(eval);
  eval->add_option("checkpoint", checkpoint)->required();
  eval->add_option("manifest", manifest)->required();

  auto* vis = app.add_subcommand("visualize", "export topic overlays for one or two images");
  vis_f.attach(vis);
  vis->add_option("checkpoint", checkpoint)->required();
  vis->add_option("images", images)->required()->expected(1, 2);

  auto* bench = app.add_subcommand("bench", "coarse-stage cost of topic-restricted vs full attention");
  bench_f.attach(bench);
  bench->add_option("--sizes", sizes, "comma-separated image sizes");
  bench->add_option("--sweep", sweep, "comma-separated K:K_co pairs");

  auto* synth = app.add_subcommand("synth", "render one synthetic pair");
  synth_f.attach(synth);

  auto* make_manifest = app.add_subcommand("manifest", "write a dataset manifest of held-out pairs");
  manifest_f.attach(make_manifest);
  make_manifest->add_option("--count", count, "number of pairs");
  make_manifest->add_option("--base", base, "seed base of the held-out set");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) {
      const auto cfg = train_f.config_with_overrides();
      const auto summary = tfm::cmd_train(cfg, train_f.out.empty() ? "run" : train_f.out, resume, std::cout);
      std::cout << "checkpoint " << summary.final_checkpoint << '\n';
    } else if (*match) {
      auto model = tfm::load_model(checkpoint, match_f.file_config(), match_f.overrides(), std::cerr);
      if (match_f.out.empty()) {
        tfm::cmd_match(model, image_a, image_b, std::cout);
      } else {
        std::ofstream out(match_f.out, std::ios::binary);
        if (!out) throw tfm::FormatError("cannot write '" + match_f.out + "'");
        tfm::cmd_match(model, image_a, image_b, out);
      }
    } else if (*eval) {
      auto model = tfm::load_model(checkpoint, eval_f.file_config(), eval_f.overrides(), std::cerr);
      std::cout << tfm::cmd_eval(model, manifest, eval_f.out).to_text();
    } else if (*vis) {
      auto model = tfm::load_model(checkpoint, vis_f.file_config(), vis_f.overrides(), std::cerr);
      for (const auto& path : tfm::cmd_visualize_topics(model, images, vis_f.out.empty() ? "." : vis_f.out))
        std::cout << path << '\n';
    } else if (*bench) {
      const auto cfg = bench_f.config_with_overrides();
      std::vector<std::pair<std::size_t, std::size_t>> topic_sweep;
      std::stringstream ss(sweep);
      std::string item;
      while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw tfm::ConfigError("bench: sweep entries look like K:K_co, got '" + item + "'");
        topic_sweep.emplace_back(std::stoul(item.substr(0, colon)), std::stoul(item.substr(colon + 1)));
      }
      const auto table = tfm::format_bench(tfm::cmd_bench(cfg, parse_list(sizes), topic_sweep));
      std::cout << table;
      if (!bench_f.out.empty()) {
        std::ofstream out(bench_f.out, std::ios::binary);
        out << table;
      }
    } else if (*synth) {
      const auto cfg = synth_f.config_with_overrides();
      tfm::cmd_synth(cfg, cfg.seed, synth_f.out.empty() ? "." : synth_f.out);
    } else if (*make_manifest) {
      const auto cfg = manifest_f.config_with_overrides();
      tfm::cmd_make_manifest(cfg, base, count, manifest_f.out.empty() ? "manifest.tsv" : manifest_f.out);
    }
  } catch (const tfm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: malformed number (" << e.what() << ")\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
