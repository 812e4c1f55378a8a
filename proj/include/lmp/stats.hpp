#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "lmp/common.hpp"

namespace lmp {

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  double kurtosis = 0.0;  // m4 / m2^2, not excess
};

inline Moments compute_moments(std::span<const double> x) {
  Moments m;
  const double n = static_cast<double>(x.size());
  if (x.empty()) return m;
  double s = 0.0;
  for (double v : x) s += v;
  m.mean = s / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    double d = v - m.mean;
    double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  m.variance = m2;
  if (m2 > 0) {
    m.skewness = m3 / std::pow(m2, 1.5);
    m.kurtosis = m4 / (m2 * m2);
  }
  return m;
}

inline double mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

inline double sample_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

// Linear-interpolation empirical quantile (the usual type-7 definition).
inline double empirical_quantile(std::vector<double> sorted_ascending, double p) {
  auto& x = sorted_ascending;
  if (x.empty()) throw invariant_error("stats: quantile of empty sample");
  if (x.size() == 1) return x[0];
  p = std::clamp(p, 0.0, 1.0);
  double h = p * static_cast<double>(x.size() - 1);
  auto lo = static_cast<std::size_t>(h);
  if (lo >= x.size() - 1) return x.back();
  double w = h - static_cast<double>(lo);
  return (1.0 - w) * x[lo] + w * x[lo + 1];
}

inline std::vector<double> sorted_copy(std::span<const double> x) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  return s;
}

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

// Acklam's rational approximation with one Halley refinement step; good to
// ~1e-15 over (0,1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw invariant_error("stats: normal_quantile requires p in (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    double q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

struct DensityGrid {
  std::vector<double> grid;
  std::vector<double> density;
};

inline double silverman_bandwidth(std::span<const double> x) {
  auto s = sorted_copy(x);
  double sd = sample_sd(x);
  double iqr = empirical_quantile(s, 0.75) - empirical_quantile(s, 0.25);
  double spread = sd;
  if (iqr > 0) spread = std::min(sd, iqr / 1.34);
  if (spread <= 0) spread = std::max(sd, 1e-12);
  return 0.9 * spread * std::pow(static_cast<double>(x.size()), -0.2);
}

// Gaussian KDE evaluated on an explicit grid.
inline std::vector<double> kde(std::span<const double> x,
                               std::span<const double> grid,
                               double bandwidth) {
  std::vector<double> out(grid.size(), 0.0);
  if (x.empty() || bandwidth <= 0) return out;
  const double inv_h = 1.0 / bandwidth;
  const double norm = inv_h / static_cast<double>(x.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (double xi : x) acc += normal_pdf((grid[g] - xi) * inv_h);
    out[g] = acc * norm;
  }
  return out;
}

// KDE on 512 points spanning mean +- 5 sd, Silverman bandwidth.
inline DensityGrid kde_default(std::span<const double> x, int n_grid = 512) {
  DensityGrid dg;
  if (x.empty()) return dg;
  Moments m = compute_moments(x);
  double sd = std::sqrt(std::max(m.variance, 1e-24));
  double lo = m.mean - 5.0 * sd;
  double hi = m.mean + 5.0 * sd;
  dg.grid.resize(static_cast<std::size_t>(n_grid));
  for (int i = 0; i < n_grid; ++i)
    dg.grid[static_cast<std::size_t>(i)] =
        lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_grid - 1);
  dg.density = kde(x, dg.grid, silverman_bandwidth(x));
  return dg;
}

}  // namespace lmp
