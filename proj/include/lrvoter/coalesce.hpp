#pragma once

#include "analytic.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "steplaw.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace lrvoter {

/// Lattice site (space, time) of the graph.
struct Site {
  std::int64_t x = 0;
  std::int64_t t = 0;
  friend bool operator==(const Site&, const Site&) = default;
};

/// Union-find with path compression (halving) and union by size.
class UnionFind {
 public:
  explicit UnionFind(std::size_t n = 0) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0u); }

  std::uint32_t find(std::uint32_t a) {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }

  std::uint32_t unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return a;
  }

  std::size_t size() const { return parent_.size(); }

 private:
  std::vector<std::uint32_t> parent_;
  std::vector<std::uint32_t> size_;
};

/// Partition of the queried sites into components of the graph, as far as
/// ancestral lines merged within the backward horizon.
struct ComponentLabeling {
  std::vector<Site> sites;
  std::vector<std::uint32_t> label;  // compact ids, numbered by first site
  std::size_t components = 0;
  std::size_t residual_clusters = 0;  // distinct lines still apart at the cutoff
  std::size_t retired_walkers = 0;    // lines that left |x| <= 2^60 (counted as residual)
  std::int64_t cutoff_used = 0;       // steps allowed below the deepest site
  std::int64_t steps_taken = 0;       // backward steps actually simulated
};

namespace detail {

struct FrontierEntry {
  std::int64_t pos;
  std::uint32_t root;
};

inline void merge_sorted_collisions(std::vector<FrontierEntry>& f, UnionFind& uf) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (out > 0 && f[out - 1].pos == f[i].pos) {
      f[out - 1].root = uf.unite(f[out - 1].root, f[i].root);
    } else {
      f[out++] = f[i];
    }
  }
  f.resize(out);
}

// After one step most walkers keep their order. Entries that break it are
// pulled out, sorted on their own and merged back in.
inline void sort_frontier(std::vector<FrontierEntry>& f, std::vector<FrontierEntry>& side) {
  auto by_pos = [](const FrontierEntry& a, const FrontierEntry& b) { return a.pos < b.pos; };
  side.clear();
  std::size_t kept = 0;
  const std::size_t n = f.size();
  for (std::size_t i = 0; i < n; ++i) {
    const bool fits = (kept == 0 || f[kept - 1].pos <= f[i].pos) && (i + 1 == n || f[i].pos <= f[i + 1].pos);
    if (fits)
      f[kept++] = f[i];
    else
      side.push_back(f[i]);
  }
  if (side.empty()) return;
  std::sort(side.begin(), side.end(), by_pos);
  f.resize(kept);
  f.insert(f.end(), side.begin(), side.end());
  std::inplace_merge(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(kept), f.end(), by_pos);
}

} // namespace detail

/// Follows the ancestral lines of `sites` backwards in time. Level by level,
/// every occupied position draws one jump J and moves to pos - J; walkers that
/// meet are merged. Sites enter when the sweep reaches their time. The sweep
/// stops `t_max` steps below the deepest site, or once a single line is left
/// and no site is still waiting to enter.
///
/// Jumps are drawn in increasing position order, so a labeling is a pure
/// function of (sites, law, t_max, rng state).
template <class URBG>
ComponentLabeling run_backward(std::vector<Site> sites, const StepLaw& law, std::int64_t t_max, URBG& rng) {
  if (t_max < 0) throw std::invalid_argument("run_backward: t_max must be >= 0");
  if (sites.size() >= std::numeric_limits<std::uint32_t>::max())
    throw std::invalid_argument("run_backward: too many sites");
  ComponentLabeling out;
  out.cutoff_used = t_max;
  out.sites = std::move(sites);
  const std::size_t m = out.sites.size();
  out.label.assign(m, 0);
  if (m == 0) return out;

  std::vector<std::uint32_t> order(m);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const auto& sa = out.sites[a];
    const auto& sb = out.sites[b];
    return sa.t != sb.t ? sa.t > sb.t : sa.x < sb.x;
  });
  for (std::size_t i = 1; i < m; ++i)
    if (out.sites[order[i]] == out.sites[order[i - 1]]) throw std::invalid_argument("run_backward: sites must be distinct");

  constexpr std::int64_t retire_at = std::int64_t{1} << 60;
  UnionFind uf(m);
  std::vector<detail::FrontierEntry> frontier;
  std::vector<detail::FrontierEntry> incoming;
  std::vector<detail::FrontierEntry> side;
  std::int64_t level = out.sites[order[0]].t;
  const std::int64_t deepest = out.sites[order[m - 1]].t;
  const std::int64_t stop = deepest - t_max;
  std::size_t next = 0;

  auto admit = [&] {
    incoming.clear();
    while (next < m && out.sites[order[next]].t == level) {
      incoming.push_back({out.sites[order[next]].x, order[next]});
      ++next;
    }
    if (incoming.empty()) return;
    const std::size_t old = frontier.size();
    frontier.insert(frontier.end(), incoming.begin(), incoming.end());
    std::inplace_merge(frontier.begin(), frontier.begin() + static_cast<std::ptrdiff_t>(old), frontier.end(),
                       [](const auto& a, const auto& b) { return a.pos < b.pos; });
    detail::merge_sorted_collisions(frontier, uf);
  };

  admit();
  while (level > stop && !(next == m && frontier.size() <= 1)) {
    std::size_t kept = 0;
    for (auto& e : frontier) {
      const std::int64_t p = e.pos - law.sample(rng);
      if (p > retire_at || p < -retire_at) {
        ++out.retired_walkers;
        continue;
      }
      frontier[kept++] = {p, e.root};
    }
    frontier.resize(kept);
    detail::sort_frontier(frontier, side);
    detail::merge_sorted_collisions(frontier, uf);
    --level;
    ++out.steps_taken;
    admit();
  }
  out.residual_clusters = frontier.size() + out.retired_walkers;

  std::vector<std::uint32_t> compact(m, std::numeric_limits<std::uint32_t>::max());
  std::uint32_t count = 0;
  for (std::uint32_t i = 0; i < m; ++i) {
    const auto r = uf.find(i);
    if (compact[r] == std::numeric_limits<std::uint32_t>::max()) compact[r] = count++;
    out.label[i] = compact[r];
  }
  out.components = count;
  return out;
}

/// Per-component number of queried sites at time `slice_time`, indexed by
/// component id; components without a site on the slice are skipped.
inline std::vector<std::size_t> component_slice_sizes(const ComponentLabeling& labeling, std::int64_t slice_time) {
  std::vector<std::size_t> count(labeling.components, 0);
  bool found = false;
  for (std::size_t i = 0; i < labeling.sites.size(); ++i) {
    if (labeling.sites[i].t != slice_time) continue;
    found = true;
    ++count[labeling.label[i]];
  }
  if (!found) throw std::invalid_argument("component_slice_sizes: no queried site at that time");
  std::vector<std::size_t> sizes;
  for (auto c : count)
    if (c > 0) sizes.push_back(c);
  return sizes;
}

/// Backward horizon c n^alpha log n for a window of width n (at least 1).
inline std::int64_t default_t_max(const StepLaw& law, std::int64_t n, double c = 10.0) {
  const double nd = std::max<double>(static_cast<double>(n), 2.0);
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(c * std::pow(nd, law.alpha()) * std::log(nd))));
}

struct CoalesceMc {
  std::int64_t k = 0;
  std::int64_t reps = 0;
  double estimate = 0.0;
  double stderr = 0.0;
  double live_fraction = 0.0;     // neither merged nor escaped at t_max
  double escaped_fraction = 0.0;  // left |D| <= escape_radius
  double escape_radius = 0.0;     // 0 when escape is disabled
  double cutoff_allowance = 0.0;  // upper bound on the merges missed by stopping early
  bool degenerate = false;        // k = 0
};

/// Leading term of P((k,0) ~ (0,0)) for large k:
/// Gamma(1-alpha) sin(pi alpha/2) / (2 pi c_alpha Lbar(k) |Q|^2) k^{alpha-1}.
/// At k = 10^5 it sits within 0.02% of the quadrature value, slightly above it.
inline double merge_prob_asymptotic(const StepLaw& law, double k, double q_norm2) {
  const double alpha = law.alpha();
  const double amp = std::tgamma(1.0 - alpha) * std::sin(0.5 * std::numbers::pi * alpha) /
                     (2.0 * std::numbers::pi * c_alpha(alpha) * law.stable_scale(k) * q_norm2);
  return amp * std::pow(k, alpha - 1.0);
}

/// Radius beyond which the difference walk is stopped as escaped: the
/// smallest power of two R with P(hit 0 from R) <= target.
inline double escape_radius_for(const StepLaw& law, double target = 1e-4) {
  if (!(law.alpha() < 1.0)) return 0.0;
  const double g0 = q_norm_squared(law);
  for (std::int64_t r = 1024; r < (std::int64_t{1} << 50); r *= 2)
    if (merge_prob_asymptotic(law, static_cast<double>(r), g0) <= target) return static_cast<double>(r);
  return 0.0;
}

/// Monte Carlo P((k,0) ~ (0,0)) from the difference walk D_0 = k,
/// D_{s+1} = D_s + J - J'. Each block of 1024 replicates uses its own stream,
/// so the result is independent of `threads`. A path is counted as missed
/// when it escapes beyond `escape_radius` (pass a negative value to choose it
/// automatically, 0 to disable) or is still live at t_max; the returned
/// cutoff_allowance bounds the probability lost that way.
inline CoalesceMc coalesce_prob_mc(const StepLaw& law, std::int64_t k, std::int64_t t_max, std::int64_t reps,
                                   std::uint64_t seed, unsigned threads = 1, double escape_radius = -1.0) {
  CoalesceMc r;
  r.k = k;
  r.reps = reps;
  if (k == 0) {
    r.estimate = 1.0;
    r.degenerate = true;
    return r;
  }
  if (t_max < 1) throw std::invalid_argument("coalesce_prob_mc: t_max must be >= 1");
  if (reps < 100) throw std::invalid_argument("coalesce_prob_mc: reps must be >= 100");
  if (escape_radius < 0.0) escape_radius = escape_radius_for(law);
  r.escape_radius = escape_radius;
  const double limit = escape_radius > 0.0 ? escape_radius : std::ldexp(1.0, 61);

  constexpr std::int64_t block = 1024;
  const auto blocks = static_cast<std::size_t>((reps + block - 1) / block);
  struct Tally {
    std::int64_t hit = 0, live = 0, escaped = 0;
  };
  std::vector<Tally> tallies(blocks);
  parallel_for(blocks, threads, [&](std::size_t b) {
    auto g = replicate_stream(seed, b);
    const std::int64_t lo = static_cast<std::int64_t>(b) * block;
    const std::int64_t hi = std::min(reps, lo + block);
    Tally t;
    for (std::int64_t i = lo; i < hi; ++i) {
      std::int64_t d = k;
      bool done = false;
      for (std::int64_t s = 0; s < t_max; ++s) {
        d += law.sample(g) - law.sample(g);
        if (d == 0) {
          ++t.hit;
          done = true;
          break;
        }
        if (std::fabs(static_cast<double>(d)) > limit) {
          ++t.escaped;
          done = true;
          break;
        }
      }
      if (!done) ++t.live;
    }
    tallies[b] = t;
  });
  Tally sum;
  for (const auto& t : tallies) {
    sum.hit += t.hit;
    sum.live += t.live;
    sum.escaped += t.escaped;
  }
  const double n = static_cast<double>(reps);
  r.estimate = static_cast<double>(sum.hit) / n;
  r.stderr = std::sqrt(std::max(r.estimate * (1.0 - r.estimate), 0.25 / n) / n);
  r.live_fraction = static_cast<double>(sum.live) / n;
  r.escaped_fraction = static_cast<double>(sum.escaped) / n;
  double escape_hit = 0.0;
  if (escape_radius > 0.0 && law.alpha() < 1.0)
    escape_hit = merge_prob_asymptotic(law, escape_radius, q_norm_squared(law));
  r.cutoff_allowance = r.live_fraction + r.escaped_fraction * escape_hit;
  return r;
}

} // namespace lrvoter
