#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>
#include <vector>

#include "tfm/coarse_match.hpp"
#include "tfm/geometry.hpp"
#include "tfm/rng.hpp"

namespace oracle {

// Entry (r, c) survives when it reaches tau and, if mutual, is the first
// maximum of its row and of its column.
inline std::vector<tfm::CoarseMatch> select_matches(const std::vector<tfm::GroupProbabilities>& groups,
                                                    double tau, bool mutual) {
  std::map<std::pair<std::size_t, std::size_t>, tfm::CoarseMatch> best;
  std::vector<std::pair<std::size_t, std::size_t>> order;
  for (const auto& g : groups) {
    const std::size_t m = g.rows_a.size(), n = g.rows_b.size();
    auto p = [&](std::size_t r, std::size_t c) { return g.prob[r * n + c]; };
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        if (p(r, c) < tau) continue;
        bool ok = true;
        if (mutual) {
          for (std::size_t c2 = 0; c2 < n && ok; ++c2)
            ok = c2 < c ? p(r, c2) < p(r, c) : p(r, c2) <= p(r, c);
          for (std::size_t r2 = 0; r2 < m && ok; ++r2)
            ok = r2 < r ? p(r2, c) < p(r, c) : p(r2, c) <= p(r, c);
        }
        if (!ok) continue;
        const auto key = std::make_pair(g.rows_a[r], g.rows_b[c]);
        auto it = best.find(key);
        if (it == best.end()) {
          best[key] = {key.first, key.second, p(r, c), g.topic, 0.0};
          order.push_back(key);
        } else if (p(r, c) > it->second.confidence) {
          it->second = {key.first, key.second, p(r, c), g.topic, 0.0};
        }
      }
  }
  std::vector<tfm::CoarseMatch> out;
  for (const auto& key : order) out.push_back(best[key]);
  return out;
}

// Random single-group probability matrix, up to 8 x 8, with frequent ties.
inline tfm::GroupProbabilities random_group(tfm::Rng& rng, std::uint32_t topic) {
  tfm::GroupProbabilities g;
  g.topic = topic;
  const std::size_t m = 1 + rng.below(8), n = 1 + rng.below(8);
  const bool coarse_values = rng.uniform() < 0.5;
  for (std::size_t r = 0; r < m; ++r) g.rows_a.push_back(rng.below(12));
  for (std::size_t c = 0; c < n; ++c) g.rows_b.push_back(rng.below(12));
  std::sort(g.rows_a.begin(), g.rows_a.end());
  g.rows_a.erase(std::unique(g.rows_a.begin(), g.rows_a.end()), g.rows_a.end());
  std::sort(g.rows_b.begin(), g.rows_b.end());
  g.rows_b.erase(std::unique(g.rows_b.begin(), g.rows_b.end()), g.rows_b.end());
  g.prob.resize(g.rows_a.size() * g.rows_b.size());
  for (auto& p : g.prob) p = coarse_values ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform();
  return g;
}

inline bool same_matches(const std::vector<tfm::CoarseMatch>& a, const std::vector<tfm::CoarseMatch>& b) {
  auto key = [](const tfm::CoarseMatch& m) { return std::make_tuple(m.i, m.j, m.confidence, m.topic); };
  std::vector<std::tuple<std::size_t, std::size_t, double, std::uint32_t>> ka, kb;
  for (const auto& m : a) ka.push_back(key(m));
  for (const auto& m : b) kb.push_back(key(m));
  std::sort(ka.begin(), ka.end());
  std::sort(kb.begin(), kb.end());
  return ka == kb;
}

// Calls visit(z) for every assignment of n features to k topics.
template <typename F>
void enumerate_assignments(std::size_t n, std::size_t k, F visit) {
  std::vector<std::uint32_t> z(n, 0);
  while (true) {
    visit(z);
    std::size_t i = 0;
    while (i < n && ++z[i] == k) z[i++] = 0;
    if (i == n) return;
  }
}

// Random homography with corners of a size x size square displaced by up to
// `jitter` * size.
inline tfm::Homography random_homography(tfm::Rng& rng, double size, double jitter) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> rhs;
  const double src[4][2] = {{0, 0}, {size, 0}, {size, size}, {0, size}};
  for (int k = 0; k < 4; ++k) {
    const double x = src[k][0], y = src[k][1];
    const double u = x + (2 * rng.uniform() - 1) * jitter * size, v = y + (2 * rng.uniform() - 1) * jitter * size;
    a.row(2 * k) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * k + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    rhs(2 * k) = u;
    rhs(2 * k + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> h = a.fullPivLu().solve(rhs);
  Eigen::Matrix3d m;
  m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return tfm::Homography(m);
}

}  // namespace oracle
