#pragma once

#include "quadrature.hpp"
#include "rng.hpp"
#include "steplaw.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace lrvoter {

namespace detail {

inline void require_transient(double alpha, const char* who) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::domain_error(std::string(who) + ": requires alpha in (0,1); the walk is recurrent for alpha >= 1");
}

// (1 - cos u) / u^2 without cancellation.
inline double one_minus_cos_over_sq(double u) {
  if (u < 1e-3) {
    const double u2 = u * u;
    return 0.5 - u2 / 24.0 + u2 * u2 / 720.0;
  }
  const double s = std::sin(0.5 * u);
  return 2.0 * s * s / (u * u);
}

} // namespace detail

/// V(t, x) at ratio r = t / x^alpha, i.e. the integral over u > 0 of
/// (1 - cos u) u^{-2-alpha} exp(-c_alpha r u^alpha).
///
/// [0, 1] is integrated after u = w^{1/(1-alpha)}, which absorbs the u^{-alpha}
/// singularity exactly. On [1, inf) the cosine part is rotated to 1 + is where
/// the integrand decays like e^{-s}. Absolute error is below 1e-11.
inline double v_ratio(double alpha, double r) {
  detail::require_transient(alpha, "v_integral");
  if (!(r >= 0.0)) throw std::domain_error("v_integral: t / x^alpha must be >= 0");
  const double lambda = c_alpha(alpha) * r;
  const double gamma = 1.0 / (1.0 - alpha);
  const double decay_power = alpha * gamma;

  auto near = [&](double w) {
    return gamma * detail::one_minus_cos_over_sq(std::pow(w, gamma)) * std::exp(-lambda * std::pow(w, decay_power));
  };
  double w_cut = 1.0;
  if (lambda > 0.0) w_cut = std::min(1.0, std::pow(40.0 / lambda, 1.0 / decay_power));
  std::vector<double> breaks{0.0};
  if (w_cut < 1.0) {
    // Geometric breakpoints resolve the e^{-lambda w^p} cutoff.
    for (double b = w_cut * 1e-6; b < w_cut; b *= 10.0) breaks.push_back(b);
  }
  breaks.push_back(w_cut);
  const double head = integrate_pieces(near, breaks, 1e-13).value;

  if (lambda > 0.0 && w_cut < 1.0) return head;

  // integral_1^inf u^{-2-alpha} e^{-lambda u^alpha} du with u = e^s.
  auto plain = [&](double s) { return std::exp(-(1.0 + alpha) * s - lambda * std::exp(alpha * s)); };
  const double plain_part = integrate(plain, 0.0, 50.0 / (1.0 + alpha), 1e-13).value;

  using C = std::complex<double>;
  auto rotated = [&](double s) {
    const C z(1.0, s);
    return std::pow(z, -2.0 - alpha) * std::exp(-lambda * std::pow(z, alpha) - s);
  };
  const C rot = integrate(rotated, 0.0, 45.0, 1e-13).value;
  const double cos_part = std::real(C(0.0, 1.0) * std::exp(C(0.0, 1.0)) * rot);
  return head + plain_part - cos_part;
}

inline double v_integral(double alpha, double t, double x) {
  if (!(t >= 0.0)) throw std::domain_error("v_integral: t must be >= 0");
  if (!(x > 0.0)) throw std::domain_error("v_integral: x must be > 0");
  return v_ratio(alpha, t / std::pow(x, alpha));
}

/// Thread-safe cache of V keyed by t / x^alpha rounded to 12 significant digits.
class VTable {
 public:
  explicit VTable(double alpha) : alpha_(alpha) { detail::require_transient(alpha, "VTable"); }

  double alpha() const { return alpha_; }

  double at_ratio(double r) const {
    const double key = round_key(r);
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    const double v = v_ratio(alpha_, key);
    std::lock_guard lock(mutex_);
    cache_.emplace(key, v);
    return v;
  }

  double operator()(double t, double x) const {
    if (!(t >= 0.0)) throw std::domain_error("VTable: t must be >= 0");
    if (!(x > 0.0)) throw std::domain_error("VTable: x must be > 0");
    return at_ratio(t / std::pow(x, alpha_));
  }

  /// V(tau, |x|) |x|^{1+alpha}, with the value 0 at x = 0.
  double scaled(double tau, double x) const {
    x = std::fabs(x);
    if (x == 0.0) return 0.0;
    return (*this)(tau, x) * std::pow(x, 1.0 + alpha_);
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
  }

 private:
  static double round_key(double r) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.11e", r);
    return std::strtod(buf, nullptr);
  }

  double alpha_;
  mutable std::mutex mutex_;
  mutable std::map<double, double> cache_;
};

/// (1/pi) * integral_0^pi cos(kx) / (1 - P(x)^2) dx: the expected number of
/// meetings of two independent walks started k apart (k = 0 counts time 0).
inline Integral<double> fourier_green(const StepLaw& law, std::int64_t k) {
  detail::require_transient(law.alpha(), "fourier_green");
  const double alpha = law.alpha();
  const double kk = std::fabs(static_cast<double>(k));
  auto integrand_x = [&](double x) {
    const double d = law.one_minus_char_fn(x);
    return std::cos(kk * x) / (d * (2.0 - d));
  };
  const double x_split = std::min(std::numbers::pi, 1.0 / (kk + 1.0));
  const double gamma = 1.0 / (1.0 - alpha);
  // x = x_split w^gamma turns the x^{-alpha} singularity into a bounded integrand.
  auto integrand_w = [&](double w) {
    if (w <= 0.0) return 0.0;
    const double x = x_split * std::pow(w, gamma);
    if (x <= 0.0) return 0.0;
    const double jac = x_split * gamma * std::pow(w, gamma - 1.0);
    return integrand_x(x) * jac;
  };
  auto part = integrate_global(integrand_w, 0.0, 1.0, 1e-14, 1e-13);
  if (x_split < std::numbers::pi) {
    const int pieces = 1 + static_cast<int>(kk / 8.0);
    std::vector<double> breaks;
    for (int j = 0; j <= pieces; ++j) breaks.push_back(x_split + (std::numbers::pi - x_split) * j / pieces);
    auto rest = integrate_global(integrand_x, breaks, 1e-14, 1e-13, 4000 + 4 * breaks.size());
    part.value += rest.value;
    part.error += rest.error;
  }
  part.value /= std::numbers::pi;
  part.error /= std::numbers::pi;
  return part;
}

/// Expected overlap of two independent ancestral lines from one vertex,
/// (1/2pi) * integral over [-pi, pi] of dx / (1 - P(x)^2).
inline double q_norm_squared(const StepLaw& law) { return fourier_green(law, 0).value; }

/// Constants shared by every limit formula for one step law.
struct AnalyticConstants {
  double alpha = 0.0;
  double c_alpha = 0.0;
  double q_norm2 = 0.0;
  double v0 = 0.0;  // V(0, 1)
  std::shared_ptr<const VTable> v;

  static AnalyticConstants compute(const StepLaw& law) {
    detail::require_transient(law.alpha(), "AnalyticConstants");
    AnalyticConstants c;
    c.alpha = law.alpha();
    c.c_alpha = lrvoter::c_alpha(c.alpha);
    c.q_norm2 = q_norm_squared(law);
    c.v = std::make_shared<VTable>(c.alpha);
    c.v0 = c.v->at_ratio(0.0);
    return c;
  }
};

/// P((k,0) ~ (0,0)) from the Green function ratio.
inline double coalesce_prob_fourier(const StepLaw& law, std::int64_t k, double q_norm2) {
  detail::require_transient(law.alpha(), "coalesce_prob_fourier");
  if (k == 0) return 1.0;
  return std::clamp(fourier_green(law, k).value / q_norm2, 0.0, 1.0);
}

inline double c_tilde_p(const AnalyticConstants& c, double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("c_tilde_p: p must lie in (0,1)");
  return 2.0 * p * (1.0 - p) / (std::numbers::pi * c.c_alpha * c.q_norm2);
}

/// Normalisation making Var(S_n(1, 0)) -> 1:
/// sigma_n^2 = 2 V(0,1) c~_p n^{1+alpha} / stable_scale(n).
inline double sigma_n(const AnalyticConstants& c, const StepLaw& law, double p, std::int64_t n) {
  if (n < 1) throw std::domain_error("sigma_n: n must be >= 1");
  const double nd = static_cast<double>(n);
  return std::sqrt(2.0 * c.v0 * c_tilde_p(c, p) * std::pow(nd, 1.0 + c.alpha) / law.stable_scale(nd));
}

/// Microscopic slice time floor(t n^alpha / stable_scale(n)).
inline std::int64_t microscopic_time(const StepLaw& law, double t, std::int64_t n) {
  if (!(t >= 0.0)) throw std::domain_error("microscopic_time: t must be >= 0");
  const double nd = static_cast<double>(n);
  return static_cast<std::int64_t>(std::floor(t * std::pow(nd, law.alpha()) / law.stable_scale(nd)));
}

struct SpaceTimePoint {
  double x = 0.0;
  double t = 0.0;
};

/// Gram matrix of W_alpha at the given points; throws if it is not PSD
/// (smallest eigenvalue below -1e-8 * trace).
inline Eigen::MatrixXd w_covariance(const VTable& v, std::span<const SpaceTimePoint> points) {
  const auto m = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd gram(m, m);
  const double norm = 2.0 * v.at_ratio(0.0);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i; j < m; ++j) {
      const auto& a = points[static_cast<std::size_t>(i)];
      const auto& b = points[static_cast<std::size_t>(j)];
      if (!std::isfinite(a.x) || !std::isfinite(a.t) || !std::isfinite(b.x) || !std::isfinite(b.t))
        throw std::domain_error("w_covariance: points must be finite");
      const double tau = std::fabs(b.t - a.t);
      const double value = (v.scaled(tau, a.x) + v.scaled(tau, b.x) - v.scaled(tau, b.x - a.x)) / norm;
      gram(i, j) = value;
      gram(j, i) = value;
    }
  }
  if (m > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double trace = gram.trace();
    if (eig.eigenvalues().minCoeff() < -1e-8 * std::max(trace, 1e-300))
      throw std::runtime_error("w_covariance: Gram matrix is not positive semidefinite");
  }
  return gram;
}

inline Eigen::MatrixXd w_covariance(double alpha, std::span<const SpaceTimePoint> points) {
  return w_covariance(VTable(alpha), points);
}

/// Exact centred Gaussian sampler with a given covariance, through a symmetric
/// eigen-factorisation so rank-deficient Gram matrices are fine.
class GaussianSampler {
 public:
  explicit GaussianSampler(const Eigen::MatrixXd& gram) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) throw std::runtime_error("GaussianSampler: eigen-decomposition failed");
    const double trace = std::max(gram.trace(), 1e-300);
    Eigen::VectorXd lambda = eig.eigenvalues();
    if (lambda.size() > 0 && lambda.minCoeff() < -1e-10 * trace)
      throw std::runtime_error("GaussianSampler: covariance is not PSD beyond jitter 1e-10 * trace");
    lambda = lambda.cwiseMax(0.0);
    factor_ = eig.eigenvectors() * lambda.cwiseSqrt().asDiagonal();
  }

  Eigen::Index dimension() const { return factor_.rows(); }
  const Eigen::MatrixXd& factor() const { return factor_; }

  template <class URBG>
  Eigen::VectorXd sample(URBG& g) const {
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(factor_.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(g);
    return factor_ * z;
  }

 private:
  Eigen::MatrixXd factor_;
};

inline GaussianSampler w_sampler(const VTable& v, std::span<const SpaceTimePoint> points) {
  return GaussianSampler(w_covariance(v, points));
}

/// One draw of W_alpha at the points. For many draws build w_sampler once.
template <class URBG>
Eigen::VectorXd sample_w_exact(double alpha, std::span<const SpaceTimePoint> points, URBG& g) {
  return w_sampler(VTable(alpha), points).sample(g);
}

/// Test function sampled on x0, x0 + h, ..., treated as piecewise linear.
struct GridFunction {
  double x0 = 0.0;
  double h = 1.0;
  std::vector<double> values;
};

namespace detail {

// Integral of the cubic B-spline (hat * hat) against |d + r|^{alpha - 1}.
inline double hat_kernel_weight(double alpha, double d) {
  d = std::fabs(d);
  if (d <= 8.0) {
    // Fourth central difference of the fourth antiderivative of |y|^{alpha-1}.
    const double denom = alpha * (alpha + 1.0) * (alpha + 2.0) * (alpha + 3.0);
    constexpr std::array<double, 5> binom{1.0, -4.0, 6.0, -4.0, 1.0};
    double s = 0.0;
    for (int k = 0; k < 5; ++k) s += binom[k] * std::pow(std::fabs(d + 2.0 - k), alpha + 3.0);
    return s / denom;
  }
  auto spline = [](double r) {
    r = std::fabs(r);
    if (r >= 2.0) return 0.0;
    if (r >= 1.0) return (2.0 - r) * (2.0 - r) * (2.0 - r) / 6.0;
    return 2.0 / 3.0 - r * r + 0.5 * r * r * r;
  };
  double s = 0.0;
  for (int piece = -2; piece < 2; ++piece) {
    const auto rule = gauss_legendre_panel<12>(piece, piece + 1.0);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i)
      s += rule.weights[i] * spline(rule.nodes[i]) * std::pow(d + rule.nodes[i], alpha - 1.0);
  }
  return s;
}

inline double fgn_quadratic_form(double alpha, double h, std::span<const double> phi) {
  const std::size_t m = phi.size();
  std::vector<double> weights(m);
  for (std::size_t d = 0; d < m; ++d) weights[d] = hat_kernel_weight(alpha, static_cast<double>(d));
  double total = 0.0;
  for (std::size_t d = 0; d < m; ++d) {
    double corr = 0.0;
    for (std::size_t i = 0; i + d < m; ++i) corr += phi[i] * phi[i + d];
    total += (d == 0 ? 1.0 : 2.0) * weights[d] * corr;
  }
  return std::pow(h, 1.0 + alpha) * total;
}

} // namespace detail

/// Double integral of phi(x) phi(y) |x - y|^{alpha - 1} for piecewise-linear phi.
/// The kernel is integrated exactly against the hat basis, so the diagonal
/// singularity costs nothing. `error` compares against the grid with spacing 2h.
inline Integral<double> fgn_variance(double alpha, const GridFunction& phi) {
  detail::require_transient(alpha, "fgn_variance");
  if (!(phi.h > 0.0)) throw std::invalid_argument("fgn_variance: grid spacing must be positive");
  if (phi.values.empty()) return {0.0, 0.0};
  double mass = 0.0;
  for (double v : phi.values) mass += std::fabs(v);
  if (mass == 0.0) return {0.0, 0.0};
  const double boundary = std::fabs(phi.values.front()) + std::fabs(phi.values.back());
  if (boundary > 1e-6 * mass)
    throw std::invalid_argument("fgn_variance: test function does not decay at the window edges");
  const double fine = detail::fgn_quadratic_form(alpha, phi.h, phi.values);
  std::vector<double> coarse;
  for (std::size_t i = 0; i < phi.values.size(); i += 2) coarse.push_back(phi.values[i]);
  const double rough = detail::fgn_quadratic_form(alpha, 2.0 * phi.h, coarse);
  return {fine, std::fabs(fine - rough) / 3.0};
}

} // namespace lrvoter
