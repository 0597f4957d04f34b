#include <lrvoter/rng.hpp>
#include <lrvoter/steplaw.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

using namespace lrvoter;

TEST(StepLaw, PmfValues) {
  const StepLaw law(0.5);
  EXPECT_DOUBLE_EQ(law.pmf(0), 0.0);
  EXPECT_NEAR(law.pmf(1), 0.5 * (1.0 - std::pow(2.0, -0.5)), 1e-15);
  EXPECT_NEAR(law.pmf(1), 0.146447, 1e-6);
  EXPECT_DOUBLE_EQ(law.pmf(-1), law.pmf(1));
  for (std::int64_t n : {2, 7, 100, 123456})
    EXPECT_NEAR(law.pmf(n), law.tail(n) - law.tail(n + 1), 1e-15 * law.tail(n));
}

TEST(StepLaw, TailValues) {
  EXPECT_DOUBLE_EQ(StepLaw(0.5).tail(1), 0.5);
  EXPECT_DOUBLE_EQ(StepLaw(0.5).tail(4), 0.25);
  EXPECT_NEAR(StepLaw(0.3).tail(1024), 0.5 * std::pow(1024.0, -0.3), 1e-15);
  EXPECT_NEAR(StepLaw(0.3).tail(1024), 0.0625, 1e-15);
  EXPECT_THROW((void)StepLaw(0.5).tail(0), std::invalid_argument);
}

TEST(StepLaw, TailIsStrictlyDecreasing) {
  for (auto kind : {SlowlyVarying::constant, SlowlyVarying::log_corrected}) {
    const StepLaw law(0.4, kind == SlowlyVarying::constant ? 0.5 : 0.25, kind);
    for (std::int64_t n = 1; n < 5000; ++n) ASSERT_LT(law.tail(n + 1), law.tail(n));
  }
}

TEST(StepLaw, MassBalance) {
  for (auto kind : {SlowlyVarying::constant, SlowlyVarying::log_corrected}) {
    const StepLaw law(0.7, 0.25, kind);
    double s = law.pmf(0);
    for (std::int64_t n = 1; n <= 2000; ++n) {
      s += 2.0 * law.pmf(n);
      if (n % 97 == 0) ASSERT_NEAR(s + 2.0 * law.tail(n + 1), 1.0, 1e-12);
    }
  }
}

TEST(StepLaw, LogCorrectedTail) {
  const StepLaw law(0.5, 0.25, SlowlyVarying::log_corrected);
  EXPECT_NEAR(law.tail(10), 0.25 * (1.0 + 1.0 / std::log(std::exp(1.0) + 10.0)) * std::pow(10.0, -0.5), 1e-15);
  EXPECT_GT(law.pmf(0), 0.0);
}

TEST(StepLaw, RejectsBadParameters) {
  EXPECT_THROW(StepLaw(0.0), std::invalid_argument);
  EXPECT_THROW(StepLaw(0.5, 0.6), std::invalid_argument);
  EXPECT_THROW(StepLaw(0.5, 0.5, SlowlyVarying::log_corrected), std::invalid_argument);
  EXPECT_THROW(slowly_varying_from_string("cubic"), std::invalid_argument);
}

TEST(StepLaw, InverseCdfMagnitude) {
  const StepLaw law(0.5);
  EXPECT_EQ(law.magnitude(1.0), 1);
  EXPECT_EQ(law.magnitude(0.25), 16);
  const StepLaw law3(0.3);
  for (double u : {0.9, 0.5, 0.123, 0.01, 1e-3})
    EXPECT_EQ(law3.magnitude(u), static_cast<std::int64_t>(std::floor(std::pow(u, -1.0 / 0.3)))) << u;
  // u^{-1/alpha} beyond int64 saturates instead of wrapping.
  EXPECT_GE(law3.magnitude(1e-6), std::int64_t{1} << 60);
}

TEST(StepLaw, MagnitudeMatchesTailDefinition) {
  // Largest k with u <= P(|J| >= k), on both sides of every small threshold.
  const StepLaw law(0.5, 0.25, SlowlyVarying::log_corrected);
  for (std::int64_t k = 1; k < 700; ++k) {
    const double thr = 2.0 * law.tail(k);
    EXPECT_GE(law.magnitude(thr * (1.0 - 1e-12)), k);
    EXPECT_LT(law.magnitude(thr * (1.0 + 1e-12)), k);
  }
}

TEST(StepLaw, SignFromTopBit) {
  const StepLaw law(0.5);
  const std::uint64_t low = (std::uint64_t{1} << 53) - 1;  // U = 1
  EXPECT_EQ(law.from_bits(low), 1);
  EXPECT_EQ(law.from_bits(low | (std::uint64_t{1} << 63)), -1);
}

TEST(StepLaw, EmpiricalTailFrequency) {
  const StepLaw law(0.5);
  auto g = replicate_stream(5, 0);
  const int n = 1000000;
  int big = 0, positive_big = 0;
  for (int i = 0; i < n; ++i) {
    const auto j = law.sample(g);
    if (std::llabs(j) >= 100) ++big;
    if (j >= 100) ++positive_big;
  }
  const double f = static_cast<double>(big) / n;
  const double fp = static_cast<double>(positive_big) / n;
  EXPECT_NEAR(f, 0.1, 3.0 * std::sqrt(0.1 * 0.9 / n));
  EXPECT_NEAR(fp, 0.05, 3.0 * std::sqrt(0.05 * 0.95 / n));
}

TEST(StepLaw, SampleKolmogorovSmirnov) {
  for (auto kind : {SlowlyVarying::constant, SlowlyVarying::log_corrected}) {
    const StepLaw law(0.6, kind == SlowlyVarying::constant ? 0.5 : 0.25, kind);
    auto g = replicate_stream(6, static_cast<std::uint64_t>(kind));
    const int n = 100000;
    std::vector<std::int64_t> x(n);
    for (auto& v : x) v = law.sample(g);
    std::sort(x.begin(), x.end());
    // CDF F(m) = P(J <= m) at the jump points.
    auto cdf = [&](std::int64_t m) { return m >= 0 ? 1.0 - law.tail(m + 1) : law.tail(-m); };
    double d = 0.0;
    for (int i = 0; i < n;) {
      int j = i;
      while (j < n && x[j] == x[i]) ++j;
      d = std::max({d, std::fabs(static_cast<double>(j) / n - cdf(x[i])),
                    std::fabs(static_cast<double>(i) / n - (cdf(x[i]) - (x[i] == 0 ? law.pmf(0) : law.pmf(x[i]))))});
      i = j;
    }
    EXPECT_LT(d, 1.63 / std::sqrt(static_cast<double>(n)));
  }
}

TEST(StepLaw, CharFnBasics) {
  const StepLaw law(0.5);
  EXPECT_DOUBLE_EQ(law.char_fn(0.0), 1.0);
  const double at_pi = law.char_fn(std::numbers::pi);
  EXPECT_GT(at_pi, -1.0);
  EXPECT_LT(at_pi, 1.0);
  for (double x : {0.001, 0.3, 1.0, 2.5}) EXPECT_NEAR(law.char_fn(x), law.char_fn(-x), 1e-12);
}

TEST(StepLaw, CharFnAgainstDirectSum) {
  // Summation by parts: P(x) = 1 + 2 sum_{n>=1} tail(n) (cos(nx) - cos((n-1)x)).
  // Cutting at N leaves -tail(N+1) cos(Nx) plus O(tail(N) / (N x)).
  for (auto kind : {SlowlyVarying::constant, SlowlyVarying::log_corrected}) {
    const StepLaw law(0.5, kind == SlowlyVarying::constant ? 0.5 : 0.25, kind);
    for (double x : {0.5, 1.0, 2.0, 3.0}) {
      double s = 0.0;
      const std::int64_t N = 1000000;
      for (std::int64_t n = 1; n <= N; ++n)
        s += law.tail(n) * (std::cos(static_cast<double>(n) * x) - std::cos(static_cast<double>(n - 1) * x));
      s -= law.tail(N + 1) * std::cos(static_cast<double>(N) * x);
      EXPECT_NEAR(law.char_fn(x), 1.0 + 2.0 * s, 1e-8) << "x=" << x;
    }
  }
}

TEST(StepLaw, CharFnMethodsAgree) {
  const StepLaw law(0.5);
  for (double x : {1e-6, 1e-3, 0.1, 1.0, 3.0})
    EXPECT_NEAR(law.one_minus_char_fn(x), law.one_minus_char_fn_abel_plana(x), 1e-12) << x;
}

TEST(StepLaw, NearZeroSlope) {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(std::pow(10.0, -4.0 + 0.2 * i));
  const auto fit = near_zero_constant(StepLaw(0.5), grid);
  EXPECT_NEAR(fit.slope, 0.5, 0.02);
  EXPECT_NEAR(fit.prefactor, c_alpha(0.5), 0.02 * c_alpha(0.5));
  EXPECT_NEAR(near_zero_constant(StepLaw(0.7), grid).slope, 0.7, 0.02);
  EXPECT_THROW(near_zero_constant(StepLaw(0.5), std::vector<double>{0.01}), std::invalid_argument);
}

TEST(StepLaw, NearZeroAsymptotics) {
  const StepLaw law(0.5);
  const double x = 0.01;
  EXPECT_NEAR(law.one_minus_char_fn(x) / (c_alpha(0.5) * law.stable_scale(1.0 / x) * std::pow(x, 0.5)), 1.0, 0.05);
}

TEST(StepLaw, CAlpha) {
  EXPECT_NEAR(c_alpha(0.5), std::sqrt(std::numbers::pi / 2.0), 1e-14);
  EXPECT_NEAR(c_alpha(0.5), 1.2533141, 1e-7);
  EXPECT_NEAR(c_alpha(1e-9), 1.0, 1e-8);
  EXPECT_NEAR(c_alpha(0.9), 1.4882, 1e-3);
  EXPECT_THROW(c_alpha(1.0), std::domain_error);
  EXPECT_THROW(c_alpha(0.0), std::domain_error);
}

TEST(StepLaw, FitLine) {
  const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
  const auto f = fit_line(x, y);
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, 1.0, 1e-14);
  EXPECT_NEAR(f.slope_stderr, 0.0, 1e-12);
}
