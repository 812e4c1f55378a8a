#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "lmp/parallel.hpp"
#include "lmp/qreg.hpp"
#include "lmp/sieve.hpp"
#include "lmp/stats.hpp"

namespace lmp {

// Pooled observations for one sieve equation. For initial-condition sieves
// the lag column is ignored (degree_lag = 0).
struct SieveFitData {
  std::vector<double> response;
  std::vector<double> lag;
  std::vector<double> age;
};

// Exponential tail rate from the mean exceedance beyond the fitted extreme
// knots (the exponential MLE given the threshold). Falls back to the
// previous rate when nothing lands outside.
inline double fit_tail_lambda(std::span<const double> exceedances, double fallback) {
  double s = 0.0;
  std::size_t n = 0;
  for (double e : exceedances)
    if (e > 0.0) {
      s += e;
      ++n;
    }
  if (n == 0 || !(s > 0.0)) return fallback;
  return std::clamp(static_cast<double>(n) / s, 1e-8, 1e12);
}

// Knot-wise quantile regressions on a shared design matrix, then tail rates
// from the residual exceedances. `shape` supplies grid, degrees and
// standardizers; its coefficients warm-start the solver.
inline QuantileSieve fit_sieve(const SieveFitData& data, const QuantileSieve& shape,
                               double tol = 1e-8, int n_threads = 1) {
  const std::size_t n = data.response.size();
  if (n == 0 || data.lag.size() != n || data.age.size() != n)
    throw invariant_error("fit: empty or ragged sieve fit data");
  QuantileSieve out = shape;
  const std::size_t L = out.n_knots();
  const std::size_t K = out.n_basis();
  if (n < K) throw invariant_error("fit: fewer observations than basis functions");

  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(K));
  for (std::size_t i = 0; i < n; ++i) {
    auto phi = out.basis.eval(data.lag[i], data.age[i]);
    for (std::size_t k = 0; k < K; ++k) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = phi[k];
  }
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(data.response.data(), static_cast<Eigen::Index>(n));

  parallel_for(L, n_threads, [&](std::size_t l) {
    QregProblem prob;
    prob.design = X;
    prob.response = y;
    prob.tau = out.grid.knots[l];
    Eigen::VectorXd warm(static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k) warm[static_cast<Eigen::Index>(k)] = shape.coeff(l, k);
    Eigen::VectorXd theta = solve_qreg(prob, tol, &warm);
    for (std::size_t k = 0; k < K; ++k) out.coeff(l, k) = theta[static_cast<Eigen::Index>(k)];
  });

  // rearranged extreme knots per observation bound the interior; what falls
  // outside identifies the tail rates
  std::vector<double> exc_low, exc_high;
  for (std::size_t i = 0; i < n; ++i) {
    double qmin = 0.0, qmax = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      double q = 0.0;
      for (std::size_t k = 0; k < K; ++k)
        q += out.coeff(l, k) * X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      if (l == 0) {
        qmin = qmax = q;
      } else {
        qmin = std::min(qmin, q);
        qmax = std::max(qmax, q);
      }
    }
    if (data.response[i] < qmin) exc_low.push_back(qmin - data.response[i]);
    if (data.response[i] > qmax) exc_high.push_back(data.response[i] - qmax);
  }
  out.tail_lambda_low = fit_tail_lambda(exc_low, shape.tail_lambda_low);
  out.tail_lambda_high = fit_tail_lambda(exc_high, shape.tail_lambda_high);
  out.validate();
  return out;
}

// Convenience shape builder: unconditional sample quantiles as intercepts,
// zero slope coefficients, tails from the sample exceedances.
inline QuantileSieve sieve_shape_from_sample(std::span<const double> sample,
                                             const TauGrid& grid, int degree_lag,
                                             int degree_age, Standardizer lag_std,
                                             Standardizer age_std) {
  QuantileSieve s;
  s.grid = grid;
  s.basis.degree_lag = degree_lag;
  s.basis.degree_age = degree_age;
  s.basis.lag_std = lag_std;
  s.basis.age_std = age_std;
  s.coeffs.assign(s.n_knots() * s.n_basis(), 0.0);
  auto sorted = sorted_copy(sample);
  for (std::size_t l = 0; l < s.n_knots(); ++l)
    s.coeff(l, 0) = empirical_quantile(sorted, grid.knots[l]);
  std::vector<double> exc_low, exc_high;
  for (double v : sample) {
    if (v < s.coeff(0, 0)) exc_low.push_back(s.coeff(0, 0) - v);
    if (v > s.coeff(s.n_knots() - 1, 0)) exc_high.push_back(v - s.coeff(s.n_knots() - 1, 0));
  }
  s.tail_lambda_low = fit_tail_lambda(exc_low, 1.0);
  s.tail_lambda_high = fit_tail_lambda(exc_high, 1.0);
  s.validate();
  return s;
}

}  // namespace lmp
