#include "tfm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tfm/errors.hpp"
#include "tfm/losses.hpp"
#include "tfm/ops.hpp"

namespace tfm {

namespace {

template <typename T>
Tensor<T> row_range(const Tensor<T>& x, std::size_t start, std::size_t count) {
  std::vector<std::size_t> rows(count);
  std::iota(rows.begin(), rows.end(), start);
  return ops::gather_rows(x, std::span<const std::size_t>(rows));
}

template <typename T>
Tensor<T> normalized(const Tensor<T>& x) {
  return ops::scale(x, T(1) / std::sqrt(static_cast<T>(x.dim(1))));
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return Rng::mix(Rng::mix(seed ^ Rng::mix(a + 0x51ed270b27a7c1ddULL)) ^ Rng::mix(b + 0x2545f4914f6cdd1dULL));
}

}  // namespace

Eigen::Vector2d fine_target(const Homography& h, std::size_t cell_a, std::size_t cell_b,
                            std::size_t grid_w) {
  const auto [ya, xa] = fine_center(cell_a, grid_w);
  const auto [yb, xb] = fine_center(cell_b, grid_w);
  const Eigen::Vector2d pa(fine_to_pixel(static_cast<double>(xa)), fine_to_pixel(static_cast<double>(ya)));
  const Eigen::Vector2d pb = warp_point(h, pa);
  return {(pb.x() - 0.5) / 2.0 - static_cast<double>(xb), (pb.y() - 0.5) / 2.0 - static_cast<double>(yb)};
}

template <typename T>
Matcher<T>::Matcher(const RunConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const Rng root(Rng::mix(cfg.seed ^ 0x7f4a7c159e3779b9ULL));
  Rng r_backbone = root.split(1), r_topics = root.split(2), r_coarse = root.split(3), r_fine = root.split(4);
  backbone = Backbone<T>(BackboneConfig{{cfg.width1, cfg.width2, cfg.width3, cfg.width4}}, r_backbone);
  topics = TopicModule<T>(cfg.topics, cfg.width3, cfg.topic_depth, cfg.heads, cfg.topic_kernel, r_topics);
  augmenter = Augmenter<T>(cfg.width3, cfg.heads, cfg.coarse_kernel, r_coarse);
  fine = FineMatcher<T>(cfg.width1, cfg.heads, cfg.fine_kernel, cfg.patch, r_fine);
}

template <typename T>
Registry<T> Matcher<T>::registry() {
  Registry<T> reg;
  backbone.collect("backbone", reg);
  topics.collect("topics", reg);
  augmenter.collect("coarse", reg);
  fine.collect("fine", reg);
  return reg;
}

template <typename T>
const Tensor<T>& Matcher<T>::position_table(std::size_t h, std::size_t w) {
  auto it = pe_cache_.find({h, w});
  if (it == pe_cache_.end()) it = pe_cache_.emplace(std::make_pair(h, w), positional_encoding<T>(h, w, cfg_.width3)).first;
  return it->second;
}

template <typename T>
std::vector<PairFeatures<T>> Matcher<T>::features(
    const std::vector<std::pair<const Image*, const Image*>>& pairs, bool training, FlopCounter* flops) {
  for (auto& layer : topics.layers) layer.kernel = cfg_.topic_kernel;
  augmenter.self_attn.kernel = augmenter.cross_attn.kernel = cfg_.coarse_kernel;
  fine.cross.kernel = cfg_.fine_kernel;

  std::vector<Image> padded;
  padded.reserve(2 * pairs.size());
  for (const auto& [a, b] : pairs) {
    padded.push_back(reflect_pad(*a, 8));
    padded.push_back(reflect_pad(*b, 8));
  }
  struct Maps {
    Tensor<T> coarse, fine;
    std::size_t gh, gw, fh, fw;
  };
  std::vector<Maps> maps(padded.size());
  auto run = [&](const std::vector<std::size_t>& ids) {
    std::vector<const Image*> imgs;
    for (auto i : ids) imgs.push_back(&padded[i]);
    const auto pyr = backbone.forward(images_to_tensor<T>(imgs), training);
    for (std::size_t k = 0; k < ids.size(); ++k)
      maps[ids[k]] = {ops::to_rows(pyr.coarse, k), ops::to_rows(pyr.fine, k), pyr.coarse.dim(2),
                      pyr.coarse.dim(3), pyr.fine.dim(2), pyr.fine.dim(3)};
  };
  const bool uniform = std::all_of(padded.begin(), padded.end(), [&](const Image& im) {
    return im.width == padded[0].width && im.height == padded[0].height;
  });
  if (uniform) {
    std::vector<std::size_t> all(padded.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    run(all);
  } else {
    for (std::size_t i = 0; i < padded.size(); ++i) run({i});
  }

  std::vector<PairFeatures<T>> out;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& ma = maps[2 * p];
    const auto& mb = maps[2 * p + 1];
    if (ma.gh != mb.gh || ma.gw != mb.gw) throw DimensionError("matcher: both images of a pair must share extents");
    PairFeatures<T> f;
    f.grid_w = ma.gw;
    f.grid_h = ma.gh;
    f.fine_w = ma.fw;
    f.fine_h = ma.fh;
    f.coarse_a = ma.coarse;
    f.coarse_b = mb.coarse;
    if (cfg_.positional_encoding) {
      const auto& pe = position_table(ma.gh, ma.gw);
      f.coarse_a = ops::add(f.coarse_a, pe);
      f.coarse_b = ops::add(f.coarse_b, pe);
    }
    f.fine_a = ma.fine;
    f.fine_b = mb.fine;
    f.theta_a = topic_distribution(topics.infer_local_topics(f.coarse_a, flops), f.coarse_a);
    f.theta_b = topic_distribution(topics.infer_local_topics(f.coarse_b, flops), f.coarse_b);
    out.push_back(std::move(f));
  }
  return out;
}

template <typename T>
MatchResult Matcher<T>::match(const Image& a, const Image& b, FlopCounter* flops) {
  NoGradGuard no_grad;
  const auto pf = features({{&a, &b}}, false, flops).front();
  const std::size_t n = pf.grid_w * pf.grid_h, k = cfg_.topics;
  const auto theta_a = to_double(pf.theta_a), theta_b = to_double(pf.theta_b);

  MatchResult res;
  res.grid_w = pf.grid_w;
  res.grid_h = pf.grid_h;
  res.labels_a = argmax_assignment(theta_a, n, k);
  res.labels_b = argmax_assignment(theta_b, n, k);
  res.theta_image_a = image_topic_distribution(theta_a, n, k);
  res.theta_image_b = image_topic_distribution(theta_b, n, k);
  res.covisible = covisible_topics(res.theta_image_a, res.theta_image_b, cfg_.covisible);
  std::vector<std::uint32_t> allowed(res.covisible.selected.begin(), res.covisible.selected.end());
  const auto groups = group_by_topic(res.labels_a, res.labels_b, allowed);
  if (groups.size() == 0) return res;

  const auto aug = augmenter(pf.coarse_a, pf.coarse_b, groups, flops);
  std::vector<GroupProbabilities> probs;
  std::size_t oa = 0, ob = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::size_t na = groups.rows_a[g].size(), nb = groups.rows_b[g].size();
    const auto ds = dual_softmax(normalized(row_range(aug.a, oa, na)), normalized(row_range(aug.b, ob, nb)),
                                 static_cast<T>(cfg_.temperature));
    probs.push_back({groups.topics[g], groups.rows_a[g], groups.rows_b[g], to_double(ds)});
    oa += na;
    ob += nb;
  }
  auto coarse = select_coarse_matches(probs, cfg_.tau, cfg_.mutual_nearest);
  res.coarse_candidates = coarse.size();
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (auto& cm : coarse) {
    double coh = 0.0;
    for (std::size_t t = 0; t < k; ++t) coh += theta_a[cm.i * k + t] * theta_b[cm.j * k + t];
    cm.coherence = coh;
    cells.emplace_back(cm.i, cm.j);
  }
  const auto batch = crop_patches(pf.fine_a, pf.fine_b, pf.fine_h, pf.fine_w, pf.grid_w, cells, cfg_.patch);
  res.dropped = batch.dropped;
  if (!batch.kept.empty()) {
    const auto ref = fine.refine(batch.a, batch.b, cfg_.hard_argmax, flops);
    for (std::size_t r = 0; r < batch.kept.size(); ++r) {
      const auto& cm = coarse[batch.kept[r]];
      const auto [ya, xa] = fine_center(cm.i, pf.grid_w);
      const auto [yb, xb] = fine_center(cm.j, pf.grid_w);
      Match m;
      m.xa = fine_to_pixel(static_cast<double>(xa));
      m.ya = fine_to_pixel(static_cast<double>(ya));
      m.xb = fine_to_pixel(static_cast<double>(xb) + static_cast<double>(ref.offset.values()[2 * r]));
      m.yb = fine_to_pixel(static_cast<double>(yb) + static_cast<double>(ref.offset.values()[2 * r + 1]));
      m.confidence = cm.confidence;
      m.topic = cm.topic;
      m.coherence = cm.coherence;
      m.variance = std::max(0.0, static_cast<double>(ref.variance.values()[r]));
      m.cell_a = cm.i;
      m.cell_b = cm.j;
      res.matches.push_back(m);
    }
  }
  std::sort(res.matches.begin(), res.matches.end(), [](const Match& l, const Match& r) {
    if (l.confidence != r.confidence) return l.confidence > r.confidence;
    if (l.xa != r.xa) return l.xa < r.xa;
    return l.ya < r.ya;
  });
  return res;
}

template <typename T>
TrainingLoss<T> Matcher<T>::training_loss(const std::vector<const ImagePair*>& pairs,
                                          std::uint64_t sample_seed, const LossOptions& options) {
  std::vector<std::pair<const Image*, const Image*>> imgs;
  for (const auto* p : pairs) imgs.emplace_back(&p->a, &p->b);
  const auto feats = features(imgs, true);
  const std::size_t k = cfg_.topics, s_count = cfg_.samples;
  const long radius = static_cast<long>(cfg_.patch / 2);
  std::vector<std::uint32_t> all_topics(k);
  std::iota(all_topics.begin(), all_topics.end(), 0u);

  TrainingLoss<T> out;
  out.pos = out.neg = out.fine = Tensor<T>::scalar(T(0));
  std::size_t variance_cursor = 0;
  bool any = false;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& pf = feats[p];
    const auto gt = gt_coarse_matches(pairs[p]->h, pf.grid_w, pf.grid_h);
    if (gt.empty()) continue;
    any = true;
    out.gt_matches += gt.size();
    const std::size_t n = pf.grid_w * pf.grid_h, m_count = gt.size();
    const auto theta_a = to_double(pf.theta_a), theta_b = to_double(pf.theta_b);
    const auto asg_a = sample_assignments(theta_a, n, k, s_count, stream_seed(sample_seed, p, 1));
    const auto asg_b = sample_assignments(theta_b, n, k, s_count, stream_seed(sample_seed, p, 2));

    // Conditional log-probabilities of the ground-truth matches per draw.
    std::vector<Tensor<T>> pieces;
    std::vector<std::size_t> slots;
    for (std::size_t s = 0; s < s_count; ++s) {
      const auto la = asg_a.column(s), lb = asg_b.column(s);
      const auto groups = group_by_topic(la, lb, all_topics);
      std::vector<std::size_t> group_of(k, groups.size()), pos_a(n), pos_b(n);
      for (std::size_t g = 0; g < groups.size(); ++g) {
        group_of[groups.topics[g]] = g;
        for (std::size_t r = 0; r < groups.rows_a[g].size(); ++r) pos_a[groups.rows_a[g][r]] = r;
        for (std::size_t r = 0; r < groups.rows_b[g].size(); ++r) pos_b[groups.rows_b[g][r]] = r;
      }
      std::vector<std::vector<std::size_t>> entries(groups.size()), entry_slots(groups.size());
      for (std::size_t m = 0; m < m_count; ++m) {
        const auto [i, j] = gt[m];
        if (la[i] != lb[j]) continue;
        const std::size_t g = group_of[la[i]];
        entries[g].push_back(pos_a[i] * groups.rows_b[g].size() + pos_b[j]);
        entry_slots[g].push_back(m * s_count + s);
      }
      if (std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.empty(); })) continue;
      const auto aug = augmenter(pf.coarse_a, pf.coarse_b, groups);
      std::size_t oa = 0, ob = 0;
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const std::size_t na = groups.rows_a[g].size(), nb = groups.rows_b[g].size();
        if (!entries[g].empty()) {
          const auto ds = dual_softmax(normalized(row_range(aug.a, oa, na)),
                                       normalized(row_range(aug.b, ob, nb)), static_cast<T>(cfg_.temperature));
          const auto picked = ops::gather_flat(ds, std::span<const std::size_t>(entries[g]));
          pieces.push_back(ops::reshape(ops::log_clamped(picked, static_cast<T>(kLogGuard)), {entries[g].size(), 1}));
          slots.insert(slots.end(), entry_slots[g].begin(), entry_slots[g].end());
        }
        oa += na;
        ob += nb;
      }
    }
    Tensor<T> elbo_term = Tensor<T>::scalar(T(0));
    if (!pieces.empty()) {
      const auto flat = ops::reshape(ops::concat_rows(pieces), {slots.size()});
      const auto logp = ops::reshape(ops::scatter_add_flat(flat, std::span<const std::size_t>(slots), m_count * s_count),
                                     {m_count, s_count});
      std::vector<char> valid(m_count * s_count, 0);
      for (auto sl : slots) valid[sl] = 1;
      elbo_term = elbo(logp, valid);
    }
    out.pos = ops::add(out.pos, coarse_pos_loss(elbo_term, topic_coherence(pf.theta_a, pf.theta_b, gt)));

    Rng neg_rng(stream_seed(sample_seed, p, 3));
    std::vector<std::vector<std::size_t>> negs;
    for (const auto& [i, j] : gt) negs.push_back(sample_negatives(j, pf.grid_w, pf.grid_h, cfg_.negatives, neg_rng));
    out.neg = ops::add(out.neg, coarse_neg_loss(pf.theta_a, pf.theta_b, gt, negs));

    // Fine supervision on a random subset of refinable ground-truth matches.
    std::vector<std::size_t> order(m_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng fine_rng(stream_seed(sample_seed, p, 4));
    std::shuffle(order.begin(), order.end(), fine_rng);
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    std::vector<T> targets;
    for (std::size_t m : order) {
      if (cells.size() >= cfg_.fine_matches) break;
      const auto [i, j] = gt[m];
      const auto [ya, xa] = fine_center(i, pf.grid_w);
      const auto [yb, xb] = fine_center(j, pf.grid_w);
      if (!patch_rows(ya, xa, pf.fine_h, pf.fine_w, cfg_.patch) || !patch_rows(yb, xb, pf.fine_h, pf.fine_w, cfg_.patch))
        continue;
      const auto t = fine_target(pairs[p]->h, i, j, pf.grid_w);
      if (std::abs(t.x()) > static_cast<double>(radius) || std::abs(t.y()) > static_cast<double>(radius)) continue;
      cells.emplace_back(i, j);
      targets.push_back(static_cast<T>(t.x()));
      targets.push_back(static_cast<T>(t.y()));
    }
    if (!cells.empty()) {
      const auto batch = crop_patches(pf.fine_a, pf.fine_b, pf.fine_h, pf.fine_w, pf.grid_w, cells, cfg_.patch);
      const auto ref = fine.refine(batch.a, batch.b, false);
      Tensor<T> variance = ref.variance;
      if (options.frozen_variance) {
        if (options.frozen_variance->size() < variance_cursor + cells.size())
          throw ContractError("training_loss: frozen variance list too short");
        std::vector<T> v(cells.size());
        for (std::size_t r = 0; r < cells.size(); ++r) v[r] = static_cast<T>((*options.frozen_variance)[variance_cursor + r]);
        variance = Tensor<T>::from({cells.size()}, std::move(v));
      }
      if (options.used_variance)
        for (T v : variance.values()) options.used_variance->push_back(static_cast<double>(v));
      variance_cursor += cells.size();
      out.fine_matches += cells.size();
      out.fine = ops::add(out.fine, fine_loss(ref.offset, Tensor<T>::from({cells.size(), 2}, targets), variance));
    }
  }
  if (!any) throw InsufficientDataError("training_loss: no pair has ground-truth matches");
  out.total = ops::add(ops::add(out.pos, out.neg), out.fine);
  return out;
}

template class Matcher<float>;
template class Matcher<double>;

}  // namespace tfm
