#include <lrvoter/analytic.hpp>
#include <lrvoter/coalesce.hpp>
#include <lrvoter/rng.hpp>

#include <gtest/gtest.h>

#include <numeric>
#include <set>
#include <vector>

using namespace lrvoter;

namespace {

std::vector<Site> rows(std::int64_t n, std::vector<std::int64_t> times) {
  std::vector<Site> s;
  for (auto t : times)
    for (std::int64_t i = 0; i <= n; ++i) s.push_back({i, t});
  return s;
}

} // namespace

TEST(UnionFind, Basics) {
  UnionFind uf(6);
  uf.unite(0, 1);
  uf.unite(2, 3);
  uf.unite(1, 3);
  EXPECT_EQ(uf.find(0), uf.find(2));
  EXPECT_NE(uf.find(0), uf.find(4));
  EXPECT_NE(uf.find(4), uf.find(5));
  EXPECT_EQ(uf.size(), 6u);
}

TEST(Coalesce, ZeroHorizonGivesSingletons) {
  const StepLaw law(0.5);
  auto g = replicate_stream(1, 0);
  const auto lab = run_backward(rows(50, {0}), law, 0, g);
  EXPECT_EQ(lab.components, 51u);
  EXPECT_EQ(lab.steps_taken, 0);
  for (std::uint32_t i = 0; i < 51; ++i) EXPECT_EQ(lab.label[i], i);
}

TEST(Coalesce, RejectsDuplicateSites) {
  const StepLaw law(0.5);
  auto g = replicate_stream(1, 0);
  std::vector<Site> s{{0, 0}, {3, 1}, {0, 0}};
  EXPECT_THROW(run_backward(s, law, 10, g), std::invalid_argument);
  EXPECT_THROW(run_backward(rows(2, {0}), law, -1, g), std::invalid_argument);
}

TEST(Coalesce, Deterministic) {
  const StepLaw law(0.5);
  auto g1 = replicate_stream(9, 3);
  auto g2 = replicate_stream(9, 3);
  const auto a = run_backward(rows(200, {0, 5}), law, 2000, g1);
  const auto b = run_backward(rows(200, {0, 5}), law, 2000, g2);
  EXPECT_EQ(a.label, b.label);
  EXPECT_EQ(a.components, b.components);
}

TEST(Coalesce, SliceSizesCoverTheSlice) {
  const StepLaw law(0.6);
  auto g = replicate_stream(2, 0);
  const auto lab = run_backward(rows(300, {0, 7, 20}), law, 5000, g);
  for (std::int64_t t : {0, 7, 20}) {
    const auto sizes = component_slice_sizes(lab, t);
    EXPECT_EQ(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}), 301u);
  }
  EXPECT_THROW(component_slice_sizes(lab, 3), std::invalid_argument);
  // Labels are numbered by first site.
  std::uint32_t seen = 0;
  for (auto l : lab.label) {
    ASSERT_LE(l, seen);
    if (l == seen) ++seen;
  }
  EXPECT_EQ(seen, lab.components);
}

TEST(Coalesce, LongerHorizonOnlyMerges) {
  const StepLaw law(0.5);
  std::size_t prev_components = 1000000, prev_residual = 1000000;
  for (std::int64_t t_max : {0, 10, 100, 1000, 10000}) {
    auto g = replicate_stream(4, 0);
    const auto lab = run_backward(rows(400, {0}), law, t_max, g);
    EXPECT_LE(lab.components, prev_components);
    EXPECT_LE(lab.residual_clusters, prev_residual);
    prev_components = lab.components;
    prev_residual = lab.residual_clusters;
  }
}

TEST(Coalesce, OneStepMergeProbability) {
  const StepLaw law(0.5);
  for (std::int64_t k : {1, 3}) {
    double exact = 0.0;
    for (std::int64_t m = -2000000; m <= 2000000; ++m) exact += law.pmf(m) * law.pmf(m + k);
    const auto mc = coalesce_prob_mc(law, k, 1, 400000, 11, 1, 0.0);
    EXPECT_NEAR(mc.estimate, exact, 4.0 * mc.stderr) << k;
    EXPECT_DOUBLE_EQ(mc.escape_radius, 0.0);
  }
}

TEST(Coalesce, MonteCarloAgainstFourier) {
  const StepLaw law(0.5);
  const double q = q_norm_squared(law);
  const auto mc = coalesce_prob_mc(law, 3, 1000000, 20000, 21, 1);
  const double rho = coalesce_prob_fourier(law, 3, q);
  EXPECT_NEAR(mc.estimate, rho, 4.0 * mc.stderr + mc.cutoff_allowance);
  EXPECT_LT(mc.cutoff_allowance, 0.005);
}

TEST(Coalesce, FourierShape) {
  const StepLaw law(0.5);
  const double q = q_norm_squared(law);
  double prev = 1.0;
  for (std::int64_t k : {2, 5, 10, 20, 100, 1000}) {
    const double r = coalesce_prob_fourier(law, k, q);
    EXPECT_LT(r, prev);
    EXPECT_LT(r, 0.5);
    prev = r;
  }
  EXPECT_NEAR(merge_prob_asymptotic(law, 1e5, q) / coalesce_prob_fourier(law, 100000, q), 1.0, 1e-3);
}

TEST(Coalesce, MonteCarloThreadIndependent) {
  const StepLaw law(0.7);
  const auto a = coalesce_prob_mc(law, 2, 500, 5000, 3, 1);
  const auto b = coalesce_prob_mc(law, 2, 500, 5000, 3, 3);
  EXPECT_EQ(a.estimate, b.estimate);
  EXPECT_EQ(a.live_fraction, b.live_fraction);
}

TEST(Coalesce, RecurrentLawSmoke) {
  const StepLaw law(1.5);
  const auto mc = coalesce_prob_mc(law, 2, 2000, 2000, 5, 1);
  EXPECT_EQ(mc.escape_radius, 0.0);
  EXPECT_GT(mc.estimate, 0.5);
  EXPECT_DOUBLE_EQ(coalesce_prob_mc(law, 0, 10, 100, 5).estimate, 1.0);
  EXPECT_THROW(coalesce_prob_mc(law, 1, 0, 1000, 5), std::invalid_argument);
}
