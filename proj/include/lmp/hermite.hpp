#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lmp/common.hpp"

namespace lmp {

// Probabilists' Hermite polynomial He_n(x) via the three-term recurrence
// He_{n+1} = x He_n - n He_{n-1}.
inline double hermite(int n, double x) {
  double h0 = 1.0;
  if (n == 0) return h0;
  double h1 = x;
  for (int k = 1; k < n; ++k) {
    double h2 = x * h1 - static_cast<double>(k) * h0;
    h0 = h1;
    h1 = h2;
  }
  return h1;
}

// He_n'(x) = n He_{n-1}(x)
inline double hermite_deriv(int n, double x) {
  return n == 0 ? 0.0 : static_cast<double>(n) * hermite(n - 1, x);
}

struct Standardizer {
  double mean = 0.0;
  double sd = 1.0;
  double apply(double x) const { return (x - mean) / sd; }
};

// Tensor-product Hermite basis in (lag state, age). Entry k = b*(K_lag+1)+a
// is He_a(std lag) * He_b(std age), so the lag degree varies fastest and
// entry 0 is the constant term. A sieve that conditions on age alone uses
// degree_lag = 0 and ignores the lag argument.
struct HermiteBasis {
  int degree_lag = 0;
  int degree_age = 0;
  Standardizer lag_std;
  Standardizer age_std;

  int size() const { return (degree_lag + 1) * (degree_age + 1); }

  std::vector<double> eval(double lag_state, double age) const {
    const double xl = lag_std.apply(lag_state);
    const double xa = age_std.apply(age);
    std::vector<double> phi(static_cast<std::size_t>(size()));
    std::vector<double> hl(static_cast<std::size_t>(degree_lag) + 1);
    std::vector<double> ha(static_cast<std::size_t>(degree_age) + 1);
    for (int a = 0; a <= degree_lag; ++a) hl[static_cast<std::size_t>(a)] = hermite(a, xl);
    for (int b = 0; b <= degree_age; ++b) ha[static_cast<std::size_t>(b)] = hermite(b, xa);
    std::size_t k = 0;
    for (int b = 0; b <= degree_age; ++b)
      for (int a = 0; a <= degree_lag; ++a)
        phi[k++] = hl[static_cast<std::size_t>(a)] * ha[static_cast<std::size_t>(b)];
    return phi;
  }

  // d phi / d lag_state (chain rule through the standardizer).
  std::vector<double> eval_dlag(double lag_state, double age) const {
    const double xl = lag_std.apply(lag_state);
    const double xa = age_std.apply(age);
    std::vector<double> dphi(static_cast<std::size_t>(size()));
    std::size_t k = 0;
    for (int b = 0; b <= degree_age; ++b) {
      double hb = hermite(b, xa);
      for (int a = 0; a <= degree_lag; ++a)
        dphi[k++] = hermite_deriv(a, xl) / lag_std.sd * hb;
    }
    return dphi;
  }
};

inline Standardizer standardizer_from(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= x.empty() ? 1.0 : static_cast<double>(x.size());
  double s2 = 0.0;
  for (double v : x) s2 += (v - m) * (v - m);
  double sd = x.size() > 1 ? std::sqrt(s2 / static_cast<double>(x.size() - 1)) : 1.0;
  if (!(sd > 1e-12)) sd = 1.0;
  return {m, sd};
}

}  // namespace lmp
