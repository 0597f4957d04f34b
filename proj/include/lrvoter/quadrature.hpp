#pragma once

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <queue>
#include <stdexcept>
#include <utility>
#include <vector>

namespace lrvoter {

template <class T>
struct Integral {
  T value{};
  double error = 0.0;
};

namespace detail {

template <class T>
struct KronrodPiece {
  double a, b;
  T value;
  double error;
  bool operator<(const KronrodPiece& o) const { return error < o.error; }
};

// Non-adaptive 31-point Gauss-Kronrod on [a, b] with the |K - G| error
// estimate in the units of the integral. Nodes and weights come from boost.
template <class F>
auto kronrod31(F& f, double a, double b) {
  using K = boost::math::quadrature::gauss_kronrod<double, 31>;
  using G = boost::math::quadrature::gauss<double, 15>;
  using T = decltype(f(a));
  const auto& x = K::abscissa();
  const auto& wk = K::weights();
  const auto& wg = G::weights();
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  T f0 = f(mid);
  T kronrod = f0 * wk[0];
  T gauss = T{};
  for (std::size_t i = 1; i < x.size(); ++i) {
    const T sum = f(mid + half * x[i]) + f(mid - half * x[i]);
    kronrod += sum * wk[i];
    if (i % 2 == 0) gauss += sum * wg[i / 2];
  }
  gauss += f0 * wg[0];
  using std::abs;
  const double err = std::max(static_cast<double>(abs(half * (kronrod - gauss))),
                              static_cast<double>(abs(half * kronrod)) * 4.0 * std::numeric_limits<double>::epsilon());
  return KronrodPiece<T>{a, b, half * kronrod, err};
}

} // namespace detail

// Globally adaptive Gauss-Kronrod over the given breakpoints: the interval
// with the largest error estimate is bisected until the summed error drops
// below max(abs_tol, rel_tol * |value|) or `max_intervals` is reached. Unlike
// per-interval recursion this stays bounded when rounding in the integrand
// sets an error floor, e.g. for cos(kx) at large k.
template <class F>
auto integrate_global(F&& f, const std::vector<double>& breaks, double abs_tol, double rel_tol = 1e-13,
                      std::size_t max_intervals = 4000) {
  using T = decltype(f(breaks.front()));
  using Piece = detail::KronrodPiece<T>;
  using std::abs;
  std::priority_queue<Piece> heap;
  double error = 0.0;
  T value{};
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    if (!(breaks[i + 1] > breaks[i])) continue;
    Piece p = detail::kronrod31(f, breaks[i], breaks[i + 1]);
    value += p.value;
    error += p.error;
    heap.push(p);
  }
  while (!heap.empty() && heap.size() < max_intervals &&
         error > std::max(abs_tol, rel_tol * static_cast<double>(abs(value)))) {
    Piece worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      heap.push(worst);
      break;
    }
    Piece left = detail::kronrod31(f, worst.a, mid);
    Piece right = detail::kronrod31(f, mid, worst.b);
    value += left.value + right.value - worst.value;
    error += left.error + right.error - worst.error;
    heap.push(left);
    heap.push(right);
  }
  // Re-sum in order to drop the rounding accumulated by the running updates.
  std::vector<Piece> all;
  all.reserve(heap.size());
  while (!heap.empty()) {
    all.push_back(heap.top());
    heap.pop();
  }
  std::sort(all.begin(), all.end(), [](const Piece& x, const Piece& y) { return x.a < y.a; });
  Integral<T> out;
  for (const auto& p : all) {
    out.value += p.value;
    out.error += p.error;
  }
  return out;
}

template <class F>
auto integrate_global(F&& f, double a, double b, double abs_tol, double rel_tol = 1e-13,
                      std::size_t max_intervals = 4000) {
  return integrate_global(std::forward<F>(f), std::vector<double>{a, b}, abs_tol, rel_tol, max_intervals);
}

// Relative-tolerance forms.
template <class F>
auto integrate(F&& f, double a, double b, double rel_tol = 1e-13, std::size_t max_intervals = 2000) {
  return integrate_global(std::forward<F>(f), std::vector<double>{a, b}, 0.0, rel_tol, max_intervals);
}

template <class F>
auto integrate_pieces(F&& f, const std::vector<double>& breaks, double rel_tol = 1e-13,
                      std::size_t max_intervals = 2000) {
  return integrate_global(std::forward<F>(f), breaks, 0.0, rel_tol, max_intervals + breaks.size());
}

// Fixed Gauss-Legendre nodes and weights mapped onto [a, b].
template <std::size_t N>
struct PanelRule {
  std::array<double, N> nodes{};
  std::array<double, N> weights{};
};

template <std::size_t N>
PanelRule<N> gauss_legendre_panel(double a, double b) {
  using G = boost::math::quadrature::gauss<double, N>;
  const auto& x = G::abscissa();
  const auto& w = G::weights();
  PanelRule<N> rule;
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  std::size_t k = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) {
      rule.nodes[k] = mid;
      rule.weights[k++] = half * w[i];
      continue;
    }
    rule.nodes[k] = mid - half * x[i];
    rule.weights[k++] = half * w[i];
    rule.nodes[k] = mid + half * x[i];
    rule.weights[k++] = half * w[i];
  }
  return rule;
}

// Hurwitz zeta sum_{j>=0} (q + j)^{-s} for s > 1, q > 0, via Euler-Maclaurin
// after summing enough leading terms directly.
inline double hurwitz_zeta(double s, double q) {
  if (!(s > 1.0) || !(q > 0.0)) throw std::invalid_argument("hurwitz_zeta: need s > 1, q > 0");
  double sum = 0.0;
  while (q < 32.0) {
    sum += std::pow(q, -s);
    q += 1.0;
  }
  sum += std::pow(q, 1.0 - s) / (s - 1.0) + 0.5 * std::pow(q, -s);
  // B2/2!, B4/4!, B6/6!, B8/8!
  constexpr std::array<double, 4> b{1.0 / 12.0, -1.0 / 720.0, 1.0 / 30240.0, -1.0 / 1209600.0};
  double rising = s;
  double power = std::pow(q, -s - 1.0);
  for (std::size_t k = 0; k < b.size(); ++k) {
    sum += b[k] * rising * power;
    rising *= (s + 2.0 * k + 1.0) * (s + 2.0 * k + 2.0);
    power /= q * q;
  }
  return sum;
}

} // namespace lrvoter
