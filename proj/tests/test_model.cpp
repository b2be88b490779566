#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "tfm/errors.hpp"
#include "tfm/model.hpp"

using namespace tfm;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.topics = 4;
  cfg.covisible = 2;
  cfg.samples = 2;
  cfg.negatives = 3;
  cfg.width1 = 4;
  cfg.width2 = 6;
  cfg.width3 = 8;
  cfg.width4 = 10;
  cfg.heads = 2;
  cfg.topic_depth = 1;
  cfg.fine_matches = 6;
  cfg.image_size = 64;
  return cfg;
}

}  // namespace

TEST_CASE("matching output is well formed") {
  RunConfig cfg;
  Matcher<float> model(cfg);
  const auto pair = gen_pair(3, cfg.synth());
  const auto res = model.match(pair.a, pair.b);
  CHECK(res.grid_w == 16);
  CHECK(res.labels_a.size() == 256);
  CHECK(res.covisible.selected.size() == 3);
  for (std::size_t k = 1; k < res.matches.size(); ++k) {
    const auto& p = res.matches[k - 1];
    const auto& q = res.matches[k];
    CHECK((p.confidence > q.confidence || (p.confidence == q.confidence && (p.xa < q.xa || (p.xa == q.xa && p.ya <= q.ya)))));
  }
  for (const auto& m : res.matches) {
    CHECK(m.confidence >= cfg.tau);
    CHECK((m.xb >= -0.5 && m.xb <= 127.5 && m.yb >= -0.5 && m.yb <= 127.5));
    CHECK(m.variance >= 0.0);
  }
  // Same inputs, same answer.
  const auto again = model.match(pair.a, pair.b);
  REQUIRE(again.matches.size() == res.matches.size());
  for (std::size_t k = 0; k < res.matches.size(); ++k) CHECK(again.matches[k].xb == res.matches[k].xb);
}

TEST_CASE("a near-one threshold leaves few or no matches") {
  RunConfig cfg;
  cfg.tau = 0.999;
  Matcher<float> model(cfg);
  const auto pair = gen_pair(4, cfg.synth());
  CHECK(model.match(pair.a, pair.b).matches.size() <= 5);
}

TEST_CASE("images that are not multiples of eight are padded") {
  RunConfig cfg = tiny_config();
  Matcher<float> model(cfg);
  Image a(70, 45, 0.3f);
  for (std::size_t i = 0; i < a.pixels.size(); ++i) a.pixels[i] = static_cast<float>((i * 37) % 101) / 100.0f;
  const auto res = model.match(a, a);
  CHECK(res.grid_w == 9);
  CHECK(res.grid_h == 6);
  CHECK_THROWS_AS(model.match(a, Image(64, 64)), DimensionError);
}

TEST_CASE("training loss gradient matches finite differences") {
  RunConfig cfg = tiny_config();
  Matcher<double> model(cfg);
  const auto pair = gen_pair(5, cfg.synth());
  const std::vector<const ImagePair*> pairs{&pair};
  std::vector<double> variance;
  LossOptions first;
  first.used_variance = &variance;
  const auto base = model.training_loss(pairs, 11, first);
  CHECK(base.gt_matches > 0);
  CHECK(base.fine_matches > 0);
  CHECK(std::isfinite(base.total.item()));
  LossOptions frozen;
  frozen.frozen_variance = &variance;
  auto loss = [&] { return model.training_loss(pairs, 11, frozen).total; };
  auto reg = model.registry();
  for (std::size_t i = 0; i < reg.params.size(); i += 7) {
    CAPTURE(reg.params[i].name);
    CHECK(testutil::param_grad_error(loss, reg.params[i].tensor, 2) < 1e-4);
  }
}
