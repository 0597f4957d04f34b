#pragma once

#include "errors.hpp"
#include "quadrature.hpp"
#include "steplaw.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace lrvoter {

/// p_t(0, n) for |n| <= M. masses[i] is position i - M.
struct KernelTable {
  std::int64_t t = 0;
  std::int64_t halfwidth = 0;
  std::vector<double> masses;
  double leaked_mass = 0.0;
  bool leak_warning = false;

  double at(std::int64_t n) const {
    if (n < -halfwidth || n > halfwidth) throw std::out_of_range("KernelTable: position outside window");
    return masses[static_cast<std::size_t>(n + halfwidth)];
  }
  double max_mass() const { return *std::max_element(masses.begin(), masses.end()); }
};

namespace detail {

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
template <class T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

template <class T>
FftwBuffer<T> fftw_buffer(std::size_t n) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * n));
  if (!p) throw std::bad_alloc();
  return FftwBuffer<T>(p);
}

// Planner calls are not thread-safe in FFTW; execution is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanDeleter {
  void operator()(fftw_plan p) const {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(p);
  }
};
using Plan = std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDeleter>;

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

} // namespace detail

/// p_t on [-M, M] by t - 1 FFT convolutions with the window-truncated step law.
/// Mass pushed outside the window is dropped and accounted in leaked_mass, so
/// every entry is a lower bound for the true p_t, short by at most the leak.
inline KernelTable convolve_power(const StepLaw& law, std::int64_t t, std::int64_t M) {
  if (t < 1) throw std::invalid_argument("convolve_power: t must be >= 1");
  if (M < 1) throw std::invalid_argument("convolve_power: window halfwidth must be >= 1");
  const auto width = static_cast<std::size_t>(2 * M + 1);
  const std::size_t n = detail::next_pow2(2 * width);
  const std::size_t nc = n / 2 + 1;

  auto real = detail::fftw_buffer<double>(n);
  auto spec = detail::fftw_buffer<fftw_complex>(nc);
  auto step_spec = detail::fftw_buffer<fftw_complex>(nc);
  detail::Plan forward, backward;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    forward.reset(fftw_plan_dft_r2c_1d(static_cast<int>(n), real.get(), spec.get(), FFTW_ESTIMATE));
    backward.reset(fftw_plan_dft_c2r_1d(static_cast<int>(n), spec.get(), real.get(), FFTW_ESTIMATE));
  }
  if (!forward || !backward) throw std::runtime_error("convolve_power: FFTW planning failed");

  std::vector<double> step(width);
  for (std::size_t i = 0; i < width; ++i) step[i] = law.pmf(static_cast<std::int64_t>(i) - M);

  std::fill(real.get(), real.get() + n, 0.0);
  std::copy(step.begin(), step.end(), real.get());
  fftw_execute(forward.get());
  for (std::size_t i = 0; i < nc; ++i) {
    step_spec[i][0] = spec[i][0];
    step_spec[i][1] = spec[i][1];
  }

  KernelTable table;
  table.t = t;
  table.halfwidth = M;
  table.masses = step;
  double window = 0.0;
  for (double v : step) window += v;
  table.leaked_mass = 1.0 - window;

  for (std::int64_t s = 2; s <= t; ++s) {
    std::fill(real.get(), real.get() + n, 0.0);
    std::copy(table.masses.begin(), table.masses.end(), real.get());
    fftw_execute(forward.get());
    for (std::size_t i = 0; i < nc; ++i) {
      const double re = spec[i][0] * step_spec[i][0] - spec[i][1] * step_spec[i][1];
      const double im = spec[i][0] * step_spec[i][1] + spec[i][1] * step_spec[i][0];
      spec[i][0] = re / static_cast<double>(n);
      spec[i][1] = im / static_cast<double>(n);
    }
    fftw_execute(backward.get());
    // Linear convolution index j holds position j - 2M; keep |position| <= M.
    window = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      const double v = std::max(0.0, real[i + static_cast<std::size_t>(M)]);
      table.masses[i] = v;
    }
    for (std::size_t i = 0; i < width / 2; ++i) {
      const double sym = 0.5 * (table.masses[i] + table.masses[width - 1 - i]);
      table.masses[i] = sym;
      table.masses[width - 1 - i] = sym;
    }
    for (double v : table.masses) window += v;
    table.leaked_mass = 1.0 - window;
  }
  table.leak_warning = table.leaked_mass > 1e-3;
  return table;
}

/// Window halfwidth max(10^4, 50 t^{1/alpha}).
inline std::int64_t default_window(const StepLaw& law, std::int64_t t) {
  const double w = 50.0 * std::pow(static_cast<double>(t), 1.0 / law.alpha());
  return static_cast<std::int64_t>(std::max(1e4, std::ceil(w)));
}

namespace detail {

// Breakpoints for integrands on (0, pi] that live on the scale `scale` near 0
// and oscillate with angular frequency up to `omega`.
inline std::vector<double> spectral_breaks(double scale, double omega) {
  std::vector<double> breaks{0.0};
  const double floor_x = std::min(std::numbers::pi, scale) * 1e-9;
  for (double x = floor_x; x < std::numbers::pi; x *= 2.0) breaks.push_back(x);
  if (omega > 0.0) {
    const double h = 8.0 / omega;
    for (double x = h; x < std::numbers::pi; x += h) breaks.push_back(x);
  }
  breaks.push_back(std::numbers::pi);
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  return breaks;
}

// cos(alpha pi/2) Gamma(1 - alpha) continued through alpha = 1 (value pi/2).
inline double stable_constant(double alpha) {
  if (std::fabs(alpha - 1.0) < 1e-9) return 0.5 * std::numbers::pi;
  return std::cos(0.5 * alpha * std::numbers::pi) * std::tgamma(1.0 - alpha);
}

// Width in x of the region where P(x)^t is not yet negligible.
inline double diffusive_scale(const StepLaw& law, double t) {
  t = std::max(t, 1.0);
  return std::pow(t * law.stable_scale(t) * stable_constant(law.alpha()), -1.0 / law.alpha());
}

} // namespace detail

/// p_t(0, 0) = (1/pi) * integral_0^pi P(x)^t dx, with geometric refinement
/// towards x = 0 where P^t concentrates.
inline Integral<double> return_prob_integral(const StepLaw& law, std::int64_t t) {
  if (t < 0) throw std::invalid_argument("return_prob: t must be >= 0");
  if (t == 0) return {1.0, 0.0};
  const double td = static_cast<double>(t);
  auto f = [&](double x) {
    const double p = law.char_fn(x);
    if (p > 0.0) return std::exp(td * std::log1p(-law.one_minus_char_fn(x)));
    return std::pow(p, td);
  };
  auto r = integrate_global(f, detail::spectral_breaks(detail::diffusive_scale(law, td), 0.0), 1e-300, 1e-11);
  r.value /= std::numbers::pi;
  r.error /= std::numbers::pi;
  return r;
}

inline double return_prob(const StepLaw& law, std::int64_t t) {
  if (t < 1) throw std::invalid_argument("return_prob: t must be >= 1");
  return return_prob_integral(law, t).value;
}

/// Fixed Gauss-Legendre rule for p_t(0) at many t from a single set of
/// characteristic-function values: geometric panels [x, 2x] from 1e-30 to pi.
class ReturnProbTable {
 public:
  explicit ReturnProbTable(const StepLaw& law, double x_min = 1e-30) : x_min_(x_min) {
    std::vector<double> edges;
    for (double x = x_min; x < std::numbers::pi; x *= 2.0) edges.push_back(x);
    edges.push_back(std::numbers::pi);
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
      const auto rule = gauss_legendre_panel<20>(edges[i], edges[i + 1]);
      for (std::size_t j = 0; j < rule.nodes.size(); ++j) {
        weights_.push_back(rule.weights[j]);
        p_.push_back(law.char_fn(rule.nodes[j]));
      }
    }
  }

  /// p_{2t}(0) for t = 0..T.
  std::vector<double> even_returns(std::int64_t T) const {
    std::vector<double> out(static_cast<std::size_t>(T + 1));
    std::vector<double> power(p_.size(), 1.0);
    std::vector<double> sq(p_.size());
    for (std::size_t j = 0; j < p_.size(); ++j) sq[j] = p_[j] * p_[j];
    for (std::int64_t t = 0; t <= T; ++t) {
      double s = x_min_;
      for (std::size_t j = 0; j < p_.size(); ++j) {
        s += weights_[j] * power[j];
        power[j] *= sq[j];
        if (power[j] < 1e-280) power[j] = 0.0;  // keep clear of subnormals
      }
      out[static_cast<std::size_t>(t)] = t == 0 ? 1.0 : s / std::numbers::pi;
    }
    return out;
  }

  std::size_t nodes() const { return p_.size(); }

 private:
  double x_min_;
  std::vector<double> weights_;
  std::vector<double> p_;
};

struct ReturnSum {
  std::int64_t terms = 0;  // p_{2t}(0) summed for t = 0..terms
  double partial = 0.0;
  double tail = 0.0;
  double total = 0.0;
  double amplitude = 0.0;   // A in A (2t)^{-1/alpha} (1 + B/t)
  double correction = 0.0;  // B
};

/// sum_{t>=0} p_{2t}(0), the expected overlap of two independent ancestral
/// lines, as a direct sum to T plus a fitted power-law tail.
inline ReturnSum return_sum_extrapolated(const StepLaw& law, std::int64_t T = 100000) {
  if (!(law.alpha() < 1.0)) throw std::domain_error("return_sum_extrapolated: diverges for alpha >= 1");
  if (T < 16) throw std::invalid_argument("return_sum_extrapolated: need at least 16 terms");
  const auto p = ReturnProbTable(law).even_returns(T);
  ReturnSum r;
  r.terms = T;
  for (double v : p) r.partial += v;
  const double s = 1.0 / law.alpha();
  const auto t1 = T / 2;
  const double y1 = p[static_cast<std::size_t>(t1)] * std::pow(2.0 * static_cast<double>(t1), s);
  const double y2 = p[static_cast<std::size_t>(T)] * std::pow(2.0 * static_cast<double>(T), s);
  // y = A + A B / t at t1 and T.
  const double inv1 = 1.0 / static_cast<double>(t1);
  const double inv2 = 1.0 / static_cast<double>(T);
  const double ab = (y1 - y2) / (inv1 - inv2);
  r.amplitude = y2 - ab * inv2;
  r.correction = ab / r.amplitude;
  const double q = static_cast<double>(T + 1);
  r.tail = r.amplitude * std::pow(2.0, -s) * (hurwitz_zeta(s, q) + r.correction * hurwitz_zeta(s + 1.0, q));
  r.total = r.partial + r.tail;
  return r;
}

struct SupNorm {
  std::int64_t t = 0;
  double value = 0.0;
  double leak = 0.0;  // certified absolute error of `value`
};

/// max_n p_t(0, n). For even t this is p_t(0) exactly (Cauchy-Schwarz with the
/// symmetric half-step kernel); for odd t the upper bound
/// sqrt(p_{t-1}(0) p_{t+1}(0)) is returned and the gap to p_t(0) is the leak.
inline SupNorm supnorm(const StepLaw& law, std::int64_t t) {
  if (t < 1) throw std::invalid_argument("supnorm: t must be >= 1");
  if (t % 2 == 0) {
    const auto r = return_prob_integral(law, t);
    return {t, r.value, r.error};
  }
  const auto lo = return_prob_integral(law, t);
  const auto a = return_prob_integral(law, t - 1);
  const auto b = return_prob_integral(law, t + 1);
  const double hi = std::sqrt(a.value * b.value);
  return {t, hi, std::max(0.0, hi - lo.value) + lo.error + a.error + b.error};
}

struct ExponentFit {
  LineFit fit;
  std::vector<double> abscissa;
  std::vector<double> values;
  std::vector<double> leaks;
};

/// Slope of log sup_n p_t(0, n) against log t. Throws CutoffError when a
/// grid point's certified error exceeds `rel_leak_tol` times its value.
inline ExponentFit supnorm_exponent(const StepLaw& law, std::span<const std::int64_t> t_grid,
                                    double rel_leak_tol = 1e-3) {
  if (t_grid.size() < 2) throw std::invalid_argument("supnorm_exponent: need at least 2 grid points");
  ExponentFit out;
  std::vector<double> lx, ly;
  for (auto t : t_grid) {
    const auto s = supnorm(law, t);
    if (!(s.leak <= rel_leak_tol * s.value))
      throw CutoffError("supnorm_exponent: error bound at t=" + std::to_string(t) + " exceeds tolerance");
    out.abscissa.push_back(static_cast<double>(t));
    out.values.push_back(s.value);
    out.leaks.push_back(s.leak);
    lx.push_back(std::log(static_cast<double>(t)));
    ly.push_back(std::log(s.value));
  }
  out.fit = fit_line(lx, ly);
  return out;
}

struct OccupationSum {
  std::int64_t n = 0;
  std::int64_t k = 0;
  std::int64_t t_cut = 0;
  double value = 0.0;
  double tail_bound = 0.0;
  double quadrature_error = 0.0;
};

namespace detail {

// sum_{m=a}^{b} cos(m x), stable as x -> 0.
inline double cos_block_sum(std::int64_t a, std::int64_t b, double x) {
  const double count = static_cast<double>(b - a + 1);
  const double half = std::sin(0.5 * x);
  if (std::fabs(half) < 1e-300) return count;
  return std::cos(0.5 * static_cast<double>(a + b) * x) * std::sin(0.5 * count * x) / half;
}

// (1/pi) * integral_0^pi g(x) over a spectral break set, with the first piece
// [0, x_split] taken after x = x_split w^{1/(1-alpha)} to absorb x^{-alpha}.
template <class G>
Integral<double> spectral_integral(const StepLaw& law, G&& g, double scale, double omega, double rel_tol) {
  const double alpha = std::min(law.alpha(), 0.95);
  const double gamma = 1.0 / (1.0 - alpha);
  auto breaks = spectral_breaks(scale, omega);
  const double x_split = breaks[1];
  auto inner = [&](double w) {
    if (w <= 0.0) return 0.0;
    const double x = x_split * std::pow(w, gamma);
    if (x <= 0.0) return 0.0;
    return g(x) * x_split * gamma * std::pow(w, gamma - 1.0);
  };
  auto head = integrate_global(inner, 0.0, 1.0, 1e-300, rel_tol);
  breaks.erase(breaks.begin());
  auto rest = integrate_global(g, breaks, 1e-300, rel_tol, 4000 + 4 * breaks.size());
  return {(head.value + rest.value) / std::numbers::pi, (head.error + rest.error) / std::numbers::pi};
}

} // namespace detail

/// sum_{t=0}^{t_cut} sum_{n1=0}^{n} p_t(0, n1 - k) through the Fourier form
/// (1/pi) int D(x) (1 - P^{t_cut+1}) / (1 - P), plus the bound
/// (n+1)/pi int |P|^{t_cut+1} / (1 - |P|) on everything beyond t_cut.
inline OccupationSum occupation_sum(const StepLaw& law, std::int64_t k, std::int64_t n, std::int64_t t_cut) {
  if (n < 0) throw std::invalid_argument("occupation_sum: n must be >= 0");
  if (t_cut < 1) throw std::invalid_argument("occupation_sum: t_cut must be >= 1");
  const double powr = static_cast<double>(t_cut) + 1.0;
  auto body = [&](double x) {
    const double d = law.one_minus_char_fn(x);
    const double p = 1.0 - d;
    const double partial = p > 0.0 ? -std::expm1(powr * std::log1p(-d)) : 1.0 - std::pow(p, powr);
    return detail::cos_block_sum(-k, n - k, x) * partial / d;
  };
  const double omega = static_cast<double>(n + std::llabs(k) + 1);
  const double scale = std::min(1.0 / omega, detail::diffusive_scale(law, powr));
  const auto main = detail::spectral_integral(law, body, scale, omega, 1e-10);

  auto tail = [&](double x) {
    // 1 - |P| and log|P| straight from 1 - P, avoiding cancellation near 0.
    const double omp = law.one_minus_char_fn(x);
    const double d = omp <= 1.0 ? omp : 2.0 - omp;
    if (d <= 0.0) return 0.0;
    return std::exp(powr * std::log1p(-d)) / d;
  };
  const auto bound = detail::spectral_integral(law, tail, detail::diffusive_scale(law, powr), 0.0, 1e-8);

  OccupationSum r;
  r.n = n;
  r.k = k;
  r.t_cut = t_cut;
  r.value = main.value;
  r.quadrature_error = main.error;
  r.tail_bound = static_cast<double>(n + 1) * (bound.value + bound.error);
  return r;
}

/// occupation_sum with the smallest t_cut in {10^4, 10^5, ...} whose tail
/// bound is below `rel_tail` of the sum.
inline OccupationSum occupation_sum_certified(const StepLaw& law, std::int64_t k, std::int64_t n,
                                              double rel_tail = 0.01) {
  if (!(law.alpha() < 1.0)) throw std::domain_error("occupation_sum: the sum diverges for alpha >= 1");
  for (std::int64_t t_cut = 10000; t_cut <= std::int64_t{1} << 60; t_cut *= 10) {
    auto r = occupation_sum(law, k, n, t_cut);
    if (r.tail_bound < rel_tail * r.value) return r;
  }
  throw CutoffError("occupation_sum: tail bound could not be certified below " + std::to_string(rel_tail));
}

inline ExponentFit occupation_exponent(const StepLaw& law, std::span<const std::int64_t> n_grid, std::int64_t k = 0,
                                       double rel_tail = 0.01) {
  if (n_grid.size() < 2) throw std::invalid_argument("occupation_exponent: need at least 2 grid points");
  ExponentFit out;
  std::vector<double> lx, ly;
  for (auto n : n_grid) {
    const auto r = occupation_sum_certified(law, k, n, rel_tail);
    out.abscissa.push_back(static_cast<double>(n));
    out.values.push_back(r.value);
    out.leaks.push_back(r.tail_bound);
    lx.push_back(std::log(static_cast<double>(n)));
    ly.push_back(std::log(r.value));
  }
  out.fit = fit_line(lx, ly);
  return out;
}

} // namespace lrvoter
