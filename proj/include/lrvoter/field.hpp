#pragma once

#include "analytic.hpp"
#include "coalesce.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "steplaw.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

namespace lrvoter {

/// Equilibrium +-1 field on sites 0..n at a few time levels. Immutable once
/// sampled; site (i, slice s) is queried site s * (n + 1) + i of the labeling.
class SpaceTimeField {
 public:
  std::int64_t width() const { return n_; }
  double p() const { return p_; }
  const StepLaw& law() const { return law_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t replicate() const { return replicate_; }
  const std::vector<std::int64_t>& slice_times() const { return slice_times_; }
  std::size_t slices() const { return slice_times_.size(); }
  const ComponentLabeling& labeling() const { return *labeling_; }
  const std::vector<std::int8_t>& component_colors() const { return colors_; }

  int value(std::int64_t i, std::size_t slice) const {
    check(i, slice);
    const auto bit = static_cast<std::size_t>(i);
    return (bits_[slice][bit / 64] >> (bit % 64)) & 1u ? 1 : -1;
  }

  /// Component id of site (i, slice).
  std::uint32_t component(std::int64_t i, std::size_t slice) const {
    check(i, slice);
    return labeling_->label[site_index(i, unique_slice_[slice])];
  }

  /// Sum of values over sites 0..m on the slice.
  std::int64_t prefix_sum(std::int64_t m, std::size_t slice) const {
    check(m, slice);
    return prefix_[slice][static_cast<std::size_t>(m) + 1];
  }

 private:
  friend SpaceTimeField sample_equilibrium_field(const StepLaw&, double, std::int64_t, std::vector<std::int64_t>,
                                                 std::int64_t, Rng&);
  friend SpaceTimeField sample_field_replicate(const StepLaw&, double, std::int64_t, const std::vector<std::int64_t>&,
                                               std::int64_t, std::uint64_t, std::uint64_t);

  explicit SpaceTimeField(const StepLaw& law) : law_(law) {}

  void check(std::int64_t i, std::size_t slice) const {
    if (slice >= slice_times_.size()) throw std::out_of_range("SpaceTimeField: slice index out of range");
    if (i < 0 || i > n_) throw std::out_of_range("SpaceTimeField: site outside 0..n");
  }
  std::size_t site_index(std::int64_t i, std::size_t unique) const {
    return unique * static_cast<std::size_t>(n_ + 1) + static_cast<std::size_t>(i);
  }

  std::int64_t n_ = 0;
  double p_ = 0.5;
  StepLaw law_;
  std::uint64_t seed_ = 0;
  std::uint64_t replicate_ = 0;
  std::vector<std::int64_t> slice_times_;
  std::vector<std::size_t> unique_slice_;  // slice -> distinct time level
  std::shared_ptr<const ComponentLabeling> labeling_;
  std::vector<std::int8_t> colors_;
  std::vector<std::vector<std::uint64_t>> bits_;
  std::vector<std::vector<std::int64_t>> prefix_;
};

/// Samples the field: one backward run over every (i, t_j), then one
/// independent colour per component, +1 with probability p, drawn in
/// component id order. Lines still apart at the cutoff get independent colours.
/// Repeated slice times share their sites.
inline SpaceTimeField sample_equilibrium_field(const StepLaw& law, double p, std::int64_t n,
                                               std::vector<std::int64_t> slice_times, std::int64_t t_max, Rng& rng) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("sample_equilibrium_field: p must lie in (0,1)");
  if (n < 0) throw std::invalid_argument("sample_equilibrium_field: n must be >= 0");
  if (slice_times.empty()) throw std::invalid_argument("sample_equilibrium_field: need at least one slice");
  for (auto t : slice_times)
    if (t < 0) throw std::invalid_argument("sample_equilibrium_field: slice times must be >= 0");

  SpaceTimeField f(law);
  f.n_ = n;
  f.p_ = p;
  f.slice_times_ = slice_times;

  std::vector<std::int64_t> levels = slice_times;
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  for (auto t : slice_times)
    f.unique_slice_.push_back(
        static_cast<std::size_t>(std::lower_bound(levels.begin(), levels.end(), t) - levels.begin()));

  const auto width = static_cast<std::size_t>(n + 1);
  std::vector<Site> sites;
  sites.reserve(levels.size() * width);
  for (auto t : levels)
    for (std::int64_t i = 0; i <= n; ++i) sites.push_back({i, t});
  auto labeling = std::make_shared<ComponentLabeling>(run_backward(std::move(sites), law, t_max, rng));

  f.colors_.resize(labeling->components);
  for (auto& c : f.colors_) c = unit_interval_open_closed(rng()) <= p ? 1 : -1;

  f.bits_.resize(slice_times.size());
  f.prefix_.resize(slice_times.size());
  for (std::size_t s = 0; s < slice_times.size(); ++s) {
    auto& bits = f.bits_[s];
    auto& prefix = f.prefix_[s];
    bits.assign((width + 63) / 64, 0);
    prefix.assign(width + 1, 0);
    for (std::size_t i = 0; i < width; ++i) {
      const auto v = f.colors_[labeling->label[f.site_index(static_cast<std::int64_t>(i), f.unique_slice_[s])]];
      if (v > 0) bits[i / 64] |= std::uint64_t{1} << (i % 64);
      prefix[i + 1] = prefix[i] + v;
    }
  }
  f.labeling_ = std::move(labeling);
  return f;
}

/// Replicate `index` of an experiment seeded with `seed`.
inline SpaceTimeField sample_field_replicate(const StepLaw& law, double p, std::int64_t n,
                                             const std::vector<std::int64_t>& slice_times, std::int64_t t_max,
                                             std::uint64_t seed, std::uint64_t index) {
  auto g = replicate_stream(seed, index);
  auto f = sample_equilibrium_field(law, p, n, slice_times, t_max, g);
  f.seed_ = seed;
  f.replicate_ = index;
  return f;
}

/// Samples replicates 0..reps-1 on up to `threads` workers and hands each to
/// body(index, field). The body must only write to slots owned by its index.
template <class Body>
void for_each_field(const StepLaw& law, double p, std::int64_t n, const std::vector<std::int64_t>& slice_times,
                    std::int64_t t_max, std::int64_t reps, std::uint64_t seed, unsigned threads, Body&& body) {
  parallel_for(static_cast<std::size_t>(std::max<std::int64_t>(reps, 0)), threads, [&](std::size_t r) {
    body(r, sample_field_replicate(law, p, n, slice_times, t_max, seed, r));
  });
}

/// floor(x n) for x in [0, 1].
inline std::int64_t grid_index(double x, std::int64_t n) {
  if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("partial_sum: x must lie in [0,1]");
  return std::min<std::int64_t>(n, static_cast<std::int64_t>(std::floor(x * static_cast<double>(n))));
}

/// S(floor(x n), t_slice): the sum of values over sites 0..floor(x n).
inline std::int64_t partial_sum(const SpaceTimeField& f, double x, std::size_t slice) {
  return f.prefix_sum(grid_index(x, f.width()), slice);
}

/// (S(floor(x n)) - (2p - 1) floor(x n)) / sigma_n.
inline double rescaled(const SpaceTimeField& f, double sigma, double x, std::size_t slice) {
  if (!(sigma > 0.0)) throw std::domain_error("rescaled: sigma_n must be positive");
  const auto m = grid_index(x, f.width());
  return (static_cast<double>(f.prefix_sum(m, slice)) - (2.0 * f.p() - 1.0) * static_cast<double>(m)) / sigma;
}

/// Number of sites of each component among sites 0..m of the slice, indexed
/// by component id (zero for components that miss the range).
inline std::vector<std::int64_t> component_counts(const SpaceTimeField& f, std::int64_t m, std::size_t slice) {
  std::vector<std::int64_t> counts(f.labeling().components, 0);
  for (std::int64_t i = 0; i <= m; ++i) ++counts[f.component(i, slice)];
  return counts;
}

} // namespace lrvoter
