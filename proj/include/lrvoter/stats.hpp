#pragma once

#include "analytic.hpp"
#include "coalesce.hpp"
#include "errors.hpp"
#include "field.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "steplaw.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrvoter {

/// One named estimate with its provenance.
struct ExperimentResult {
  std::string estimator;
  std::vector<double> estimates;
  std::vector<double> stderrs;
  std::int64_t replicates = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;
};

struct Estimate {
  double value = 0.0;
  double stderr = 0.0;
};

inline double mean(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("mean: empty sample");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

/// Unbiased sample variance.
inline double sample_variance(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("sample_variance: need at least 2 values");
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

inline Estimate mean_estimate(std::span<const double> x) {
  return {mean(x), x.size() > 1 ? std::sqrt(sample_variance(x) / static_cast<double>(x.size())) : 0.0};
}

/// Sample variance with the standard error of s^2 from the sample fourth moment.
inline Estimate variance_estimate(std::span<const double> x) {
  const double s2 = sample_variance(x);
  const double m = mean(x);
  const auto n = static_cast<double>(x.size());
  double m4 = 0.0;
  for (double v : x) m4 += std::pow(v - m, 4);
  m4 /= n;
  const double var_s2 = std::max(m4 - s2 * s2 * (n - 3.0) / (n - 1.0), 0.0) / n;
  return {s2, std::sqrt(var_s2)};
}

struct CovarianceEstimate {
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd stderr;  // Gaussian fourth-moment approximation
  std::size_t replicates = 0;
  bool stderr_is_approximate = true;
};

/// Rows are replicates, columns are points.
inline CovarianceEstimate empirical_covariance(const Eigen::MatrixXd& samples) {
  const auto n = samples.rows();
  if (n < 2) throw std::invalid_argument("empirical_covariance: need at least 2 replicates");
  const Eigen::RowVectorXd mu = samples.colwise().mean();
  const Eigen::MatrixXd centred = samples.rowwise() - mu;
  CovarianceEstimate out;
  out.replicates = static_cast<std::size_t>(n);
  out.covariance = centred.transpose() * centred / static_cast<double>(n - 1);
  const auto m = out.covariance.rows();
  out.stderr.resize(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double c = out.covariance(i, j);
      out.stderr(i, j) = std::sqrt((out.covariance(i, i) * out.covariance(j, j) + c * c) / static_cast<double>(n - 1));
    }
  return out;
}

/// Pearson correlation; stderr (1 - r^2) / sqrt(n - 3).
inline Estimate empirical_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("empirical_correlation: size mismatch");
  if (x.size() < 4) throw std::invalid_argument("empirical_correlation: need at least 4 replicates");
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0 && syy > 0.0)) throw std::invalid_argument("empirical_correlation: zero variance");
  const double r = sxy / std::sqrt(sxx * syy);
  return {r, (1.0 - r * r) / std::sqrt(static_cast<double>(x.size()) - 3.0)};
}

struct HurstEstimate {
  double h = 0.0;
  double stderr = 0.0;
  std::vector<double> block_sizes;
  std::vector<double> variances;
};

/// Aggregated variance: for m = 8, 16, ..., N/8 the mean square of the
/// overlapping increments path[i + m] - path[i] is regressed on m in log-log;
/// H is half the slope. With `drift` the increments are centred at m * drift,
/// otherwise at their sample mean.
inline HurstEstimate hurst_estimate(std::span<const double> path, std::optional<double> drift = std::nullopt) {
  const std::size_t n = path.size();
  if (n < 1024 || !std::has_single_bit(n)) throw std::invalid_argument("hurst_estimate: length must be a power of two >= 1024");
  HurstEstimate out;
  std::vector<double> lx, ly;
  for (std::size_t m = 8; m <= n / 8; m *= 2) {
    const std::size_t count = n - m;
    double centre = 0.0;
    if (drift) {
      centre = *drift * static_cast<double>(m);
    } else {
      for (std::size_t i = 0; i < count; ++i) centre += path[i + m] - path[i];
      centre /= static_cast<double>(count);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      const double d = path[i + m] - path[i] - centre;
      s += d * d;
    }
    const double var = s / static_cast<double>(drift ? count : count - 1);
    if (!(var > 0.0)) throw std::invalid_argument("hurst_estimate: increments have zero variance");
    out.block_sizes.push_back(static_cast<double>(m));
    out.variances.push_back(var);
    lx.push_back(std::log(static_cast<double>(m)));
    ly.push_back(std::log(var));
  }
  const auto fit = fit_line(lx, ly);
  out.h = 0.5 * fit.slope;
  out.stderr = 0.5 * fit.slope_stderr;
  return out;
}

struct GaussianityReport {
  std::size_t replicates = 0;
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  double ks_distance = 0.0;  // against the normal law with matched mean and variance
};

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline GaussianityReport gaussianity(std::span<const double> x) {
  if (x.size() < 500) throw std::invalid_argument("gaussianity: need at least 500 replicates");
  GaussianityReport r;
  r.replicates = x.size();
  const auto n = static_cast<double>(x.size());
  r.mean = mean(x);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - r.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (!(m2 > 0.0)) throw std::invalid_argument("gaussianity: zero variance");
  r.variance = m2 * n / (n - 1.0);
  r.skewness = m3 / std::pow(m2, 1.5);
  r.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const double sd = std::sqrt(r.variance);
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = normal_cdf((sorted[i] - r.mean) / sd);
    r.ks_distance = std::max({r.ks_distance, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return r;
}

/// Centred moments of a sum  sum_beta w_beta B_beta  of independent +-1
/// colours (+1 with probability p) given the weights, averaged over
/// replicates of the weights. Since the conditional law is explicit this has
/// far less noise than the plain sample moments.
class ConditionalMoments {
 public:
  explicit ConditionalMoments(double p) : p_(p) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("ConditionalMoments: p must lie in (0,1)");
  }

  void add(std::span<const double> weights) {
    double s2 = 0.0, s3 = 0.0, s4 = 0.0;
    for (double w : weights) {
      const double w2 = w * w;
      s2 += w2;
      s3 += w2 * w;
      s4 += w2 * w2;
    }
    const double q = 1.0 - p_;
    const double var = 4.0 * p_ * q;
    const double mu3 = 8.0 * p_ * q * (1.0 - 2.0 * p_);
    const double mu4 = 16.0 * p_ * q * (q * q * q + p_ * p_ * p_);
    rows_.push_back({var * s2, mu3 * s3, 3.0 * var * var * s2 * s2 + (mu4 - 3.0 * var * var) * s4});
  }

  std::size_t replicates() const { return rows_.size(); }

  /// Per-replicate conditional variances.
  std::vector<double> conditional_variances() const {
    std::vector<double> out;
    for (const auto& r : rows_) out.push_back(r[0]);
    return out;
  }

  Estimate variance() const {
    const auto c = moments();
    return {c.mean[0], std::sqrt(c.cov(0, 0))};
  }

  Estimate skewness() const {
    const auto c = moments();
    const double a = c.mean[0], b = c.mean[1];
    const double value = b / std::pow(a, 1.5);
    const Eigen::Vector3d grad(-1.5 * b / std::pow(a, 2.5), 1.0 / std::pow(a, 1.5), 0.0);
    return {value, std::sqrt(std::max(grad.dot(c.cov * grad), 0.0))};
  }

  Estimate excess_kurtosis() const {
    const auto c = moments();
    const double a = c.mean[0], d = c.mean[2];
    const Eigen::Vector3d grad(-2.0 * d / (a * a * a), 0.0, 1.0 / (a * a));
    return {d / (a * a) - 3.0, std::sqrt(std::max(grad.dot(c.cov * grad), 0.0))};
  }

 private:
  struct Summary {
    Eigen::Vector3d mean;
    Eigen::Matrix3d cov;  // covariance of the mean
  };

  Summary moments() const {
    if (rows_.size() < 2) throw std::logic_error("ConditionalMoments: need at least 2 replicates");
    Summary s;
    s.mean.setZero();
    for (const auto& r : rows_) s.mean += Eigen::Vector3d(r[0], r[1], r[2]);
    const auto n = static_cast<double>(rows_.size());
    s.mean /= n;
    s.cov.setZero();
    for (const auto& r : rows_) {
      const Eigen::Vector3d d = Eigen::Vector3d(r[0], r[1], r[2]) - s.mean;
      s.cov += d * d.transpose();
    }
    s.cov /= (n - 1.0) * n;
    return s;
  }

  double p_;
  std::vector<std::array<double, 3>> rows_;
};

/// Per-component weights of rescaled(x) on a slice: c_beta / sigma.
inline std::vector<double> rescaled_weights(const SpaceTimeField& f, double sigma, double x, std::size_t slice) {
  const auto counts = component_counts(f, grid_index(x, f.width()), slice);
  std::vector<double> w;
  w.reserve(counts.size());
  for (auto c : counts)
    if (c > 0) w.push_back(static_cast<double>(c) / sigma);
  return w;
}

/// sqrt(alpha (alpha / 2 + 1 / 2)), the extra normalisation of the noise functional.
inline double fgn_prefactor(double alpha) { return std::sqrt(alpha * (0.5 * alpha + 0.5)); }

namespace detail {

// Rejects test functions with more than 1e-3 of their L1 mass outside [0, 1].
inline void require_window_mass(const std::function<double(double)>& phi) {
  constexpr int per_unit = 4096;
  double inside = 0.0, outside = 0.0;
  for (int k = -per_unit; k < 2 * per_unit; ++k) {
    const double x = (k + 0.5) / per_unit;
    const double a = std::fabs(phi(x));
    (x >= 0.0 && x <= 1.0 ? inside : outside) += a;
  }
  if (outside > 1e-3 * (inside + outside))
    throw std::invalid_argument("fgn_functional: test function has mass outside [0,1]");
}

} // namespace detail

/// (1 / (sigma_n sqrt(alpha (alpha/2 + 1/2)))) sum_{i=0}^n phi(i/n) (xi(i) - (2p - 1)) on slice 0.
inline double fgn_functional(const SpaceTimeField& f, const std::function<double(double)>& phi, double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("fgn_functional: sigma_n must be positive");
  detail::require_window_mass(phi);
  const auto n = f.width();
  const double centre = 2.0 * f.p() - 1.0;
  double s = 0.0;
  for (std::int64_t i = 0; i <= n; ++i)
    s += phi(static_cast<double>(i) / static_cast<double>(std::max<std::int64_t>(n, 1))) * (f.value(i, 0) - centre);
  return s / (sigma * fgn_prefactor(f.law().alpha()));
}

/// Per-component weights of fgn_functional: the sum of phi(i/n) over the
/// component's sites on slice 0, times the same normalisation.
inline std::vector<double> fgn_weights(const SpaceTimeField& f, const std::function<double(double)>& phi, double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("fgn_weights: sigma_n must be positive");
  detail::require_window_mass(phi);
  const auto n = f.width();
  std::vector<double> w(f.labeling().components, 0.0);
  const double norm = 1.0 / (sigma * fgn_prefactor(f.law().alpha()));
  for (std::int64_t i = 0; i <= n; ++i)
    w[f.component(i, 0)] += phi(static_cast<double>(i) / static_cast<double>(std::max<std::int64_t>(n, 1))) * norm;
  return w;
}

/// Backward horizon used for a window of width n: explicit, or c n^alpha log n.
struct HorizonPolicy {
  std::int64_t t_max = -1;
  double c = 10.0;
  std::int64_t for_width(const StepLaw& law, std::int64_t n) const {
    return t_max >= 0 ? t_max : default_t_max(law, n, c);
  }
};

struct SliceMoments {
  std::int64_t n = 0;
  std::int64_t t_max = 0;
  std::size_t replicates = 0;
  Estimate second_moment;  // (1/(n+1)) sum_q |T_q|^2 = sum_beta c_beta^3 / (n+1)
  Estimate v_mean;         // V_n = sum_beta c_beta^2 / sigma_n^2
  Estimate v_variance;
  double mean_residual = 0.0;
  bool all_singletons = false;
};

/// Slice-0 component statistics over `reps` labelings of sites 0..n.
/// Replicate r of width n draws from stream (seed, n * 2^32 + r).
inline SliceMoments slice_moments(const StepLaw& law, std::int64_t n, std::int64_t t_max, std::int64_t reps,
                                  std::uint64_t seed, double sigma, unsigned threads = 1) {
  if (n < 1 || reps < 2) throw std::invalid_argument("slice_moments: need n >= 1 and reps >= 2");
  std::vector<Site> sites;
  for (std::int64_t i = 0; i <= n; ++i) sites.push_back({i, 0});
  std::vector<double> cube(static_cast<std::size_t>(reps)), v(static_cast<std::size_t>(reps)),
      residual(static_cast<std::size_t>(reps));
  std::vector<char> singleton(static_cast<std::size_t>(reps));
  parallel_for(static_cast<std::size_t>(reps), threads, [&](std::size_t r) {
    auto g = replicate_stream(seed, (static_cast<std::uint64_t>(n) << 32) + r);
    const auto lab = run_backward(sites, law, t_max, g);
    std::vector<double> count(lab.components, 0.0);
    for (auto l : lab.label) count[l] += 1.0;
    double s2 = 0.0, s3 = 0.0;
    for (double c : count) {
      s2 += c * c;
      s3 += c * c * c;
    }
    cube[r] = s3 / static_cast<double>(n + 1);
    v[r] = s2 / (sigma * sigma);
    residual[r] = static_cast<double>(lab.residual_clusters);
    singleton[r] = lab.components == sites.size();
  });
  SliceMoments out;
  out.n = n;
  out.t_max = t_max;
  out.replicates = static_cast<std::size_t>(reps);
  out.second_moment = mean_estimate(cube);
  out.v_mean = mean_estimate(v);
  out.v_variance = variance_estimate(v);
  out.mean_residual = mean(residual);
  out.all_singletons = std::all_of(singleton.begin(), singleton.end(), [](char s) { return s != 0; });
  return out;
}

struct ComponentScaling {
  std::vector<SliceMoments> rows;
  LineFit second_moment_fit;  // log mean second moment against log n
  LineFit v_variance_fit;     // log Var(V_n) against log n
  bool v_variance_decreasing = false;
};

/// Growth exponent of the per-site component second moment and the decay of
/// Var(V_n) across a grid of widths, at p = 1/2.
inline ComponentScaling component_moment_scaling(const StepLaw& law, std::span<const std::int64_t> n_grid,
                                                 std::int64_t reps, std::uint64_t seed, HorizonPolicy horizon = {},
                                                 unsigned threads = 1) {
  if (n_grid.size() < 2) throw std::invalid_argument("component_moment_scaling: need at least two widths");
  if (reps < 100) throw std::invalid_argument("component_moment_scaling: reps must be >= 100");
  const auto constants = AnalyticConstants::compute(law);
  ComponentScaling out;
  std::vector<double> lx, ly, lv;
  for (auto n : n_grid) {
    const auto row = slice_moments(law, n, horizon.for_width(law, n), reps, seed, sigma_n(constants, law, 0.5, n), threads);
    if (row.all_singletons)
      throw CutoffError("component_moment_scaling: every labeling is all singletons at n = " + std::to_string(n) +
                        "; t_max is too small");
    out.rows.push_back(row);
    lx.push_back(std::log(static_cast<double>(n)));
    ly.push_back(std::log(row.second_moment.value));
    lv.push_back(std::log(row.v_variance.value));
  }
  out.second_moment_fit = fit_line(lx, ly);
  out.v_variance_fit = fit_line(lx, lv);
  out.v_variance_decreasing = true;
  for (std::size_t i = 1; i < out.rows.size(); ++i)
    if (!(out.rows[i].v_variance.value < out.rows[i - 1].v_variance.value)) out.v_variance_decreasing = false;
  return out;
}

} // namespace lrvoter
