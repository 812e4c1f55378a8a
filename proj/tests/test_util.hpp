#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "lmp/rng.hpp"
#include "lmp/sieve.hpp"
#include "lmp/stats.hpp"

namespace test_util {

// Gauss-Legendre 8-point nodes/weights on [-1, 1].
inline const double kGlNodes[8] = {-0.9602898564975363, -0.7966664774136267,
                                   -0.5255324099163290, -0.1834346424956498,
                                   0.1834346424956498,  0.5255324099163290,
                                   0.7966664774136267,  0.9602898564975363};
inline const double kGlWeights[8] = {0.1012285362903763, 0.2223810344533745,
                                     0.3137066458778873, 0.3626837833783620,
                                     0.3626837833783620, 0.3137066458778873,
                                     0.2223810344533745, 0.1012285362903763};

template <typename F>
double gauss8(F f, double a, double b) {
  double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < 8; ++i) s += kGlWeights[i] * f(mid + half * kGlNodes[i]);
  return s * half;
}

template <typename F>
double simpson(F f, double a, double b, int n_panels) {
  double h = (b - a) / (2.0 * n_panels);
  double s = f(a) + f(b);
  for (int i = 1; i < 2 * n_panels; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Numerical integral of g(v) * density(v) over the real line: panelwise
// quadrature between the (public) knot quantiles plus dense Simpson over a
// wide truncated stretch of each exponential tail. g = 1 gives the mass,
// g = v the mean.
template <typename G>
double integrate_against_density(const lmp::QuantileSieve& s, double lag, double age, G g) {
  auto dist = s.conditional(lag, age);
  const auto& q = dist.knots();
  auto f = [&](double v) { return g(v) * dist.density(v); };
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < q.size(); ++j) {
    if (q[j + 1] - q[j] < 1e-13) continue;
    for (int sub = 0; sub < 4; ++sub) {
      double a = q[j] + (q[j + 1] - q[j]) * sub / 4.0;
      double b = q[j] + (q[j + 1] - q[j]) * (sub + 1) / 4.0;
      total += gauss8(f, a, b);
    }
  }
  double lo_span = 60.0 / dist.lambda_low();
  double hi_span = 60.0 / dist.lambda_high();
  // keep the endpoints strictly inside each tail
  total += simpson(f, q.front() - lo_span,
                   std::nextafter(q.front(), -std::numeric_limits<double>::infinity()), 4000);
  total += simpson(f, q.back(), q.back() + hi_span, 4000);
  return total;
}

inline double integrate_density(const lmp::QuantileSieve& s, double lag, double age) {
  return integrate_against_density(s, lag, age, [](double) { return 1.0; });
}

// Random sieve with sorted base quantiles and mild Hermite perturbations;
// occasionally produces crossing knots, which rearrangement must absorb.
inline lmp::QuantileSieve random_sieve(lmp::Rng& rng, int n_knots = 11, int degree_lag = 3,
                                       int degree_age = 2, double coeff_scale = 0.05) {
  lmp::QuantileSieve s;
  s.grid = lmp::TauGrid(n_knots);
  s.basis.degree_lag = degree_lag;
  s.basis.degree_age = degree_age;
  s.basis.lag_std = {0.2 * (rng.next_uniform() - 0.5), 0.5 + rng.next_uniform()};
  s.basis.age_std = {0.2 * (rng.next_uniform() - 0.5), 0.5 + rng.next_uniform()};
  s.coeffs.assign(s.n_knots() * s.n_basis(), 0.0);
  double spread = 0.3 + rng.next_uniform();
  for (std::size_t l = 0; l < s.n_knots(); ++l) {
    double z = lmp::normal_quantile(s.grid.knots[l]);
    s.coeff(l, 0) = spread * z + 0.1 * rng.next_normal();
    for (std::size_t k = 1; k < s.n_basis(); ++k)
      s.coeff(l, k) = coeff_scale * rng.next_normal();
  }
  s.tail_lambda_low = 0.5 + 4.0 * rng.next_uniform();
  s.tail_lambda_high = 0.5 + 4.0 * rng.next_uniform();
  return s;
}

inline double kolmogorov_distance(std::vector<double> draws,
                                  const lmp::ConditionalDist& dist) {
  std::sort(draws.begin(), draws.end());
  const double n = static_cast<double>(draws.size());
  double d = 0.0;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    double f = dist.cdf(draws[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i + 1) / n));
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
  }
  return d;
}

}  // namespace test_util
