#include <lrvoter/analytic.hpp>
#include <lrvoter/rng.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

using namespace lrvoter;

namespace {

// Reference values of the V integral from an independent high-precision quadrature.
struct VCase {
  double alpha, r, value, tol;
};

} // namespace

TEST(Analytic, VAtZeroClosedForm) {
  for (double a : {0.2, 0.5, 0.8}) {
    const double exact = std::tgamma(-1.0 - a) * std::sin(0.5 * std::numbers::pi * a);
    EXPECT_NEAR(v_ratio(a, 0.0), exact, 1e-10 * exact) << a;
  }
  EXPECT_NEAR(v_ratio(0.5, 0.0), 1.67108551642, 1e-10);
}

TEST(Analytic, VReferenceValues) {
  const std::vector<VCase> cases{
      {0.3, 0.01, 1.492999468720, 1e-10},   {0.3, 1.0, 0.5076166419656, 1e-10},
      {0.3, 10.0, 6.558313279e-3, 1e-11},   {0.3, 1000.0, 1.413262e-7, 1e-11},
      {0.9, 10.0, 3.50747482339, 1e-10},    {0.9, 1000.0, 2.1027365151, 1e-9},
      {0.5, 1.0, 0.679252024267752, 1e-11},
  };
  for (const auto& c : cases) EXPECT_NEAR(v_ratio(c.alpha, c.r), c.value, c.tol) << c.alpha << " " << c.r;
}

TEST(Analytic, VScalesThroughRatio) {
  // V(t, x) depends on (t, x) only through t / x^alpha.
  const double a = 0.5;
  EXPECT_NEAR(v_integral(a, 2.0, 4.0), v_ratio(a, 1.0), 1e-12);
  EXPECT_NEAR(v_integral(a, 0.3, 9.0), v_integral(a, 0.1, 1.0), 1e-12);
}

TEST(Analytic, VDecreasesInTime) {
  for (double a : {0.3, 0.7}) {
    double prev = v_ratio(a, 0.0);
    for (double r = 0.01; r < 1e4; r *= 3.0) {
      const double v = v_ratio(a, r);
      ASSERT_LT(v, prev) << r;
      ASSERT_GT(v, 0.0);
      prev = v;
    }
  }
}

TEST(Analytic, VTableMatchesDirect) {
  const VTable v(0.4);
  EXPECT_NEAR(v(1.0, 2.0), v_integral(0.4, 1.0, 2.0), 1e-12);
  EXPECT_DOUBLE_EQ(v.scaled(1.0, 0.0), 0.0);
  EXPECT_NEAR(v.scaled(0.5, -2.0), v(0.5, 2.0) * std::pow(2.0, 1.4), 1e-12);
  EXPECT_THROW((void)v(1.0, 0.0), std::domain_error);
  EXPECT_THROW(VTable(1.0), std::domain_error);
}

TEST(Analytic, QNormValues) {
  const std::vector<std::pair<double, double>> cases{
      {0.3, 1.03559037704664}, {0.5, 1.10603236266299}, {0.7, 1.26687909101888}, {0.9, 1.98503869728488}};
  for (auto [a, q] : cases) EXPECT_NEAR(q_norm_squared(StepLaw(a)), q, 1e-10) << a;
}

TEST(Analytic, CoalesceProbFourierValues) {
  const StepLaw law(0.5);
  const double q = q_norm_squared(law);
  const std::vector<std::pair<std::int64_t, double>> cases{{1, 0.0685419712}, {2, 0.0787750644}, {5, 0.0588013330},
                                                           {10, 0.0435567638}, {20, 0.0314863627},
                                                           {1000, 0.0045484158}};
  for (auto [k, rho] : cases) EXPECT_NEAR(coalesce_prob_fourier(law, k, q), rho, 1e-9) << k;
  EXPECT_DOUBLE_EQ(coalesce_prob_fourier(law, 0, q), 1.0);
  EXPECT_NEAR(coalesce_prob_fourier(law, -5, q), coalesce_prob_fourier(law, 5, q), 1e-13);
}

TEST(Analytic, Constants) {
  const StepLaw law(0.5);
  const auto c = AnalyticConstants::compute(law);
  EXPECT_NEAR(c.c_alpha, std::sqrt(std::numbers::pi / 2.0), 1e-14);
  EXPECT_NEAR(c.v0, 1.67108551642, 1e-10);
  EXPECT_NEAR(c_tilde_p(c, 0.5), 0.114813341956, 1e-11);
  EXPECT_NEAR(c_tilde_p(c, 0.2), c_tilde_p(c, 0.8), 1e-15);
  EXPECT_THROW((void)c_tilde_p(c, 1.0), std::domain_error);
  EXPECT_THROW(AnalyticConstants::compute(StepLaw(1.5)), std::domain_error);
}

TEST(Analytic, SigmaN) {
  const StepLaw law(0.5);
  const auto c = AnalyticConstants::compute(law);
  EXPECT_NEAR(sigma_n(c, law, 0.5, 1024), 112.1335, 1e-3);
  EXPECT_NEAR(sigma_n(c, law, 0.5, 4096), 317.1615, 1e-3);
  EXPECT_NEAR(sigma_n(c, law, 0.5, 16384), 897.0682, 1e-3);
  EXPECT_NEAR(sigma_n(c, law, 0.5, 1000) / sigma_n(c, law, 0.25, 1000), 1.0 / std::sqrt(0.75), 1e-12);
  EXPECT_NEAR(sigma_n(c, law, 0.5, 2000) / sigma_n(c, law, 0.5, 1000), std::pow(2.0, 0.75), 1e-12);
  EXPECT_THROW((void)sigma_n(c, law, 0.5, 0), std::domain_error);
}

TEST(Analytic, MicroscopicTime) {
  const StepLaw law(0.5);
  EXPECT_EQ(microscopic_time(law, 1.0, 1024), 32);
  EXPECT_EQ(microscopic_time(law, 0.5, 1024), 16);
  EXPECT_EQ(microscopic_time(law, 0.0, 1024), 0);
}

TEST(Analytic, CovarianceUnitVariance) {
  const std::vector<SpaceTimePoint> pts{{1.0, 0.0}, {1.0, 3.0}};
  const auto g = w_covariance(0.5, pts);
  EXPECT_NEAR(g(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(g(1, 1), 1.0, 1e-12);
  EXPECT_NEAR(g(0, 1), v_ratio(0.5, 3.0) / v_ratio(0.5, 0.0), 1e-10);
}

TEST(Analytic, CovarianceRestrictsToFbm) {
  const double a = 0.6, h2 = 1.0 + a;
  const std::vector<SpaceTimePoint> pts{{0.2, 1.0}, {0.7, 1.0}, {1.5, 1.0}, {-0.4, 1.0}};
  const auto g = w_covariance(a, pts);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < pts.size(); ++j) {
      const double x = pts[i].x, y = pts[j].x;
      const double fbm = 0.5 * (std::pow(std::fabs(x), h2) + std::pow(std::fabs(y), h2) - std::pow(std::fabs(x - y), h2));
      EXPECT_NEAR(g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), fbm, 1e-10);
    }
}

TEST(Analytic, CovarianceSelfSimilarAndStationary) {
  const double a = 0.4, c = 2.3;
  const std::vector<SpaceTimePoint> pts{{0.5, 0.0}, {1.2, 0.7}, {0.3, 2.0}};
  std::vector<SpaceTimePoint> scaled, shifted;
  for (auto p : pts) {
    scaled.push_back({c * p.x, std::pow(c, a) * p.t});
    shifted.push_back({p.x, p.t + 5.0});
  }
  const auto g = w_covariance(a, pts);
  EXPECT_LT((w_covariance(a, scaled) - std::pow(c, 1.0 + a) * g).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((w_covariance(a, shifted) - g).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Analytic, SamplerReproducesCovariance) {
  const double a = 0.5;
  const std::vector<SpaceTimePoint> pts{{0.3, 0.0}, {1.0, 0.0}, {1.0, 0.5}, {0.6, 2.0}};
  const auto g = w_covariance(a, pts);
  const auto sampler = w_sampler(VTable(a), pts);
  auto rng = replicate_stream(77, 0);
  const int reps = 100000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(4, 4);
  for (int r = 0; r < reps; ++r) {
    const auto w = sampler.sample(rng);
    acc += w * w.transpose();
  }
  acc /= reps;
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) {
      const double se = std::sqrt((g(i, i) * g(j, j) + g(i, j) * g(i, j)) / reps);
      EXPECT_NEAR(acc(i, j), g(i, j), 4.0 * se) << i << "," << j;
    }
  auto rng2 = replicate_stream(77, 1);
  EXPECT_EQ(sample_w_exact(a, pts, rng2).size(), 4);
}

TEST(Analytic, FgnVarianceGaussianBump) {
  for (double a : {0.3, 0.5, 0.8}) {
    const double s = 0.1;
    GridFunction phi;
    phi.h = s / 64.0;
    phi.x0 = -12.0 * s;
    for (int i = 0; i <= 24 * 64; ++i) {
      const double x = phi.x0 + i * phi.h;
      phi.values.push_back(std::exp(-x * x / (2.0 * s * s)));
    }
    const double exact = std::pow(s, 1.0 + a) * std::sqrt(std::numbers::pi) * std::pow(2.0, a) * std::tgamma(0.5 * a);
    const auto v = fgn_variance(a, phi);
    // Piecewise-linear interpolation of the bump costs O(h^2) relative accuracy.
    EXPECT_NEAR(v.value, exact, 3e-5 * exact) << a;
    EXPECT_NEAR(v.value, exact, 3.0 * v.error + 1e-9) << a;
    phi.x0 += 3.7;
    EXPECT_NEAR(fgn_variance(a, phi).value, v.value, 1e-12 * exact);
  }
}

TEST(Analytic, FgnVarianceEdgeCases) {
  GridFunction zero{0.0, 0.01, std::vector<double>(50, 0.0)};
  EXPECT_DOUBLE_EQ(fgn_variance(0.5, zero).value, 0.0);
  GridFunction cut{0.0, 0.01, std::vector<double>(50, 1.0)};
  EXPECT_THROW(fgn_variance(0.5, cut), std::invalid_argument);
}
