#pragma once

#include "quadrature.hpp"
#include "rng.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/zeta.hpp>

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrvoter {

enum class SlowlyVarying { constant, log_corrected };

inline std::string to_string(SlowlyVarying kind) {
  return kind == SlowlyVarying::constant ? "constant" : "log_corrected";
}

inline SlowlyVarying slowly_varying_from_string(const std::string& s) {
  if (s == "constant") return SlowlyVarying::constant;
  if (s == "log_corrected") return SlowlyVarying::log_corrected;
  throw std::invalid_argument("unknown slowly_varying_kind '" + s + "' (expected constant|log_corrected)");
}

/// Cosine of half the stable index angle times Gamma(1 - alpha).
inline double c_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("c_alpha: alpha must lie in (0,1)");
  return std::cos(alpha * std::numbers::pi / 2.0) * boost::math::tgamma(1.0 - alpha);
}

/// Symmetric integer step law with per-side tail P(J >= n) = L(n) n^{-alpha}.
///
/// The canonical member has L = 1/2, so there is no atom at zero and the
/// magnitude is floor(U^{-1/alpha}) for U uniform on (0, 1]. A log-corrected
/// variant L(n) = c0 (1 + 1/log(e + n)) exercises non-constant slowly varying
/// behaviour. Instances are immutable and cheap to copy.
class StepLaw {
 public:
  /// Largest jump magnitude the sampler returns. Draws beyond it are clamped;
  /// frontier code retires walkers long before positions get that large.
  static constexpr std::int64_t max_jump = std::int64_t{1} << 61;

  explicit StepLaw(double alpha, double tail_constant = 0.5, SlowlyVarying kind = SlowlyVarying::constant)
      : alpha_(alpha), c0_(tail_constant), kind_(kind) {
    if (!(alpha > 0.0 && alpha < 2.0)) throw std::invalid_argument("StepLaw: alpha must lie in (0,2)");
    if (!(tail_constant > 0.0 && tail_constant <= 0.5))
      throw std::invalid_argument("StepLaw: per_side_tail_constant must lie in (0, 1/2]");
    if (tail_at(1.0) > 0.5 + 1e-15)
      throw std::invalid_argument("StepLaw: tail(1) exceeds 1/2; lower per_side_tail_constant");
    if (kind_ == SlowlyVarying::constant && alpha_ < 1.0) build_polylog_coefficients();
    build_small_jump_table();
  }

  static StepLaw canonical(double alpha) { return StepLaw(alpha); }

  double alpha() const { return alpha_; }
  double tail_constant() const { return c0_; }
  SlowlyVarying kind() const { return kind_; }

  double slowly_varying(double y) const {
    if (kind_ == SlowlyVarying::constant) return c0_;
    return c0_ * (1.0 + 1.0 / std::log(std::numbers::e + y));
  }

  /// Slowly varying factor of the characteristic function near zero:
  /// 1 - P(x) ~ c_alpha x^alpha stable_scale(1/x). Both tails contribute, so it
  /// is twice the per-side L.
  double stable_scale(double y) const { return 2.0 * slowly_varying(y); }

  /// Continuous extension of the per-side tail, y >= 1.
  double tail_at(double y) const { return slowly_varying(y) * std::pow(y, -alpha_); }

  double tail(std::int64_t n) const {
    if (n <= 0) throw std::invalid_argument("StepLaw::tail: n must be >= 1");
    return tail_at(static_cast<double>(n));
  }

  double pmf(std::int64_t n) const {
    if (n == 0) return 1.0 - 2.0 * tail_at(1.0);
    const double m = static_cast<double>(n < 0 ? -n : n);
    // tail(m) - tail(m+1) without cancellation at large m.
    double log_ratio = -alpha_ * std::log1p(1.0 / m);
    if (kind_ == SlowlyVarying::log_corrected) {
      const double l0 = std::log(std::numbers::e + m);
      const double l1 = std::log(std::numbers::e + m + 1.0);
      log_ratio += std::log1p(1.0 / l1) - std::log1p(1.0 / l0);
    }
    return -tail_at(m) * std::expm1(log_ratio);
  }

  /// Exact inverse-CDF draw from one 64-bit word: the top bit is the sign, the
  /// low 53 bits give U in (0, 1].
  std::int64_t from_bits(std::uint64_t bits) const {
    const double u = unit_interval_open_closed(bits);
    const std::int64_t k = magnitude(u);
    return (bits >> 63) ? -k : k;
  }

  template <class URBG>
  std::int64_t sample(URBG& g) const {
    return from_bits(static_cast<std::uint64_t>(g()));
  }

  /// Largest k >= 0 with U <= P(|J| >= k), where P(|J| >= 0) = 1.
  std::int64_t magnitude(double u) const {
    const auto& tab = *small_;
    if (u > tab.threshold.back()) {
      // Small jumps: start from the answer at the bucket's upper edge and walk up.
      const auto bucket = std::min<std::size_t>(static_cast<std::size_t>(u * kGuideSize), kGuideSize - 1);
      auto k = static_cast<std::size_t>(tab.guide[bucket]);
      while (u <= tab.threshold[k + 1]) ++k;
      return static_cast<std::int64_t>(k);
    }
    return magnitude_large(u);
  }

 private:
  std::int64_t magnitude_large(double u) const {
    if (u > 2.0 * tail_at(1.0)) return 0;
    if (kind_ == SlowlyVarying::constant) {
      const double y = std::pow(u / (2.0 * c0_), -1.0 / alpha_);
      return y >= static_cast<double>(max_jump) ? max_jump : static_cast<std::int64_t>(std::floor(y));
    }
    // Solve 2 tail(y) = u on a log scale; 2 tail is strictly decreasing.
    const double target = std::log(u);
    auto g = [&](double s) { return std::log(2.0 * tail_at(std::exp(s))) - target; };
    double lo = 0.0;
    double hi = std::log(u / (2.0 * c0_)) / -alpha_ + 1.0;
    if (hi > std::log(static_cast<double>(max_jump))) {
      if (g(std::log(static_cast<double>(max_jump))) >= 0.0) return max_jump;
      hi = std::log(static_cast<double>(max_jump));
    }
    while (g(hi) > 0.0) hi += 1.0;
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
      const double mid = 0.5 * (lo + hi);
      (g(mid) >= 0.0 ? lo : hi) = mid;
    }
    auto k = static_cast<std::int64_t>(std::floor(std::exp(lo)));
    k = std::max<std::int64_t>(k, 1);
    while (k + 1 < max_jump && u <= 2.0 * tail_at(static_cast<double>(k + 1))) ++k;
    while (k > 1 && u > 2.0 * tail_at(static_cast<double>(k))) --k;
    return k;
  }

  static constexpr std::size_t kSmallJumps = 512;
  static constexpr std::size_t kGuideSize = 8192;

  struct SmallJumpTable {
    std::vector<double> threshold;     // threshold[k] = P(|J| >= k), k = 0..kSmallJumps + 1
    std::vector<std::uint32_t> guide;  // magnitude at the upper edge of each bucket of U
  };

  void build_small_jump_table() {
    auto tab = std::make_shared<SmallJumpTable>();
    tab->threshold.resize(kSmallJumps + 2);
    tab->threshold[0] = 1.0;
    for (std::size_t k = 1; k < tab->threshold.size(); ++k)
      tab->threshold[k] = 2.0 * tail_at(static_cast<double>(k));
    tab->guide.resize(kGuideSize);
    for (std::size_t b = 0; b < kGuideSize; ++b) {
      const double edge = static_cast<double>(b + 1) / static_cast<double>(kGuideSize);
      std::uint32_t k = 0;
      while (k + 1 < tab->threshold.size() && edge <= tab->threshold[k + 1]) ++k;
      tab->guide[b] = k;
    }
    small_ = std::move(tab);
  }

 public:
  /// 1 - P(x) for the characteristic function P(x) = sum_n pmf(n) cos(nx).
  /// Absolute error is below 1e-12 and relative error stays small as x -> 0.
  double one_minus_char_fn(double x) const {
    x = reduce(x);
    if (x == 0.0) return 0.0;
    if (!coefficients_) return one_minus_char_fn_abel_plana(x);
    return one_minus_char_fn_polylog(x);
  }

  double char_fn(double x) const { return 1.0 - one_minus_char_fn(x); }

  /// Route for any analytic tail: Abel-Plana summation of sum_n T(n) e^{inx}
  /// with the improper integral rotated onto the imaginary direction.
  double one_minus_char_fn_abel_plana(double x) const {
    x = reduce(x);
    if (x == 0.0) return 0.0;
    using C = std::complex<double>;
    constexpr int start = 6;
    const double big_n = start;
    const C i(0.0, 1.0);

    C head = 0.0;
    for (int n = 1; n < start; ++n) head += tail_at(n) * std::exp(i * (n * x));
    const C phase = std::exp(i * (big_n * x));

    // Integral of T(t) e^{ixt} over [N, inf) along t = N(1 + i e^u).
    const double scale = x * big_n;
    auto rotated = [&](double u) {
      const double w = std::exp(u);
      return tail_complex(C(big_n, big_n * w)) * (std::exp(-scale * w) * w);
    };
    const double u_hi = std::log(45.0 / scale);
    auto rot = integrate(rotated, -42.0, u_hi, 1e-13);
    const C tail_integral = i * big_n * phase * rot.value;

    // Abel-Plana correction term.
    auto correction = [&](double y) {
      const C up = tail_complex(C(big_n, y)) * std::exp(-x * y);
      const C down = tail_complex(C(big_n, -y)) * std::exp(x * y);
      return (up - down) / std::expm1(2.0 * std::numbers::pi * y);
    };
    const double y_hi = 44.0 / (2.0 * std::numbers::pi - x);
    auto corr = integrate(correction, 0.0, y_hi, 1e-13);

    const C sum = head + 0.5 * tail_at(big_n) * phase + tail_integral + i * phase * corr.value;
    return 4.0 * std::sin(0.5 * x) * std::imag(std::exp(-0.5 * i * x) * sum);
  }

 private:
  static double reduce(double x) {
    x = std::fabs(x);
    if (x > std::numbers::pi) {
      x = std::fmod(x, 2.0 * std::numbers::pi);
      if (x > std::numbers::pi) x = 2.0 * std::numbers::pi - x;
    }
    return x;
  }

  std::complex<double> tail_complex(std::complex<double> z) const {
    std::complex<double> t = c0_ * std::pow(z, -alpha_);
    if (kind_ == SlowlyVarying::log_corrected) t *= 1.0 + 1.0 / std::log(std::numbers::e + z);
    return t;
  }

  // Li_alpha(e^{ix}) = Gamma(1-alpha)(-ix)^{alpha-1} + sum_k zeta(alpha-k)(ix)^k/k!, |x| < 2 pi.
  void build_polylog_coefficients() {
    constexpr int terms = 72;
    auto coeffs = std::make_shared<std::vector<double>>(terms);
    double factorial = 1.0;
    for (int k = 0; k < terms; ++k) {
      if (k > 0) factorial *= k;
      (*coeffs)[k] = boost::math::zeta(alpha_ - k) / factorial;
    }
    coefficients_ = std::move(coeffs);
    gamma_one_minus_alpha_ = boost::math::tgamma(1.0 - alpha_);
  }

  double one_minus_char_fn_polylog(double x) const {
    using C = std::complex<double>;
    const auto& c = *coefficients_;
    // sum_k c_k (ix)^k split into real (even k) and imaginary (odd k) parts.
    double re = 0.0, im = 0.0, power = 1.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      const double term = c[k] * power;
      switch (k % 4) {
        case 0: re += term; break;
        case 1: im += term; break;
        case 2: re -= term; break;
        case 3: im -= term; break;
      }
      power *= x;
    }
    const double arg = -0.5 * std::numbers::pi * (alpha_ - 1.0);
    const double mag = gamma_one_minus_alpha_ * std::pow(x, alpha_ - 1.0);
    const C li(re + mag * std::cos(arg), im + mag * std::sin(arg));
    const double s = std::sin(0.5 * x);
    const C one_minus_conj(2.0 * s * s, std::sin(x));
    return -2.0 * c0_ * std::real(one_minus_conj * li);
  }

  double alpha_;
  double c0_;
  SlowlyVarying kind_;
  std::shared_ptr<const std::vector<double>> coefficients_;
  std::shared_ptr<const SmallJumpTable> small_;
  double gamma_one_minus_alpha_ = 0.0;
};

/// Power-law fit of 1 - P(x) against x near zero.
struct NearZeroFit {
  double slope = 0.0;
  double prefactor = 0.0;
  double slope_stderr = 0.0;
  std::vector<double> residuals;
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  std::vector<double> residuals;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("fit_line: size mismatch");
  if (x.size() < 2) throw std::invalid_argument("fit_line: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: abscissae are all equal");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (fit.intercept + fit.slope * x[i]);
    fit.residuals.push_back(r);
    rss += r * r;
  }
  fit.slope_stderr = x.size() > 2 ? std::sqrt(rss / (n - 2.0) / sxx) : 0.0;
  return fit;
}

inline NearZeroFit near_zero_constant(const StepLaw& law, std::span<const double> x_grid) {
  if (x_grid.size() < 2) throw std::invalid_argument("near_zero_constant: need at least two grid points");
  std::vector<double> lx, ly;
  for (double x : x_grid) {
    if (!(x > 0.0)) throw std::invalid_argument("near_zero_constant: grid points must be positive");
    const double d = law.one_minus_char_fn(x);
    if (!(d > 0.0)) throw std::domain_error("near_zero_constant: 1 - P(x) <= 0 on the grid");
    lx.push_back(std::log(x));
    ly.push_back(std::log(d));
  }
  const LineFit line = fit_line(lx, ly);
  return {line.slope, std::exp(line.intercept), line.slope_stderr, line.residuals};
}

} // namespace lrvoter
