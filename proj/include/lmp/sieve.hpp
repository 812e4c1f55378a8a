#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmp/common.hpp"
#include "lmp/hermite.hpp"
#include "lmp/tau_grid.hpp"

namespace lmp {

// Minimum knot-quantile gap; narrower bins get their density capped so that
// MH log-weights stay finite on degenerate fits.
inline constexpr double kMinBinWidth = 1e-10;

// Monotone rearrangement: sorting the knot quantiles repairs crossing while
// preserving their marginal distribution. Idempotent.
inline std::vector<double> rearrange(std::vector<double> knot_values) {
  std::sort(knot_values.begin(), knot_values.end());
  return knot_values;
}

// One conditioning point of a sieve: rearranged knot quantiles plus the two
// tail rates. Piecewise-linear quantile in tau between knots, exponential
// tails outside, which makes quantile, density, cdf and mean all closed-form.
class ConditionalDist {
 public:
  ConditionalDist(const TauGrid& grid, std::vector<double> sorted_knots,
                  double lambda_low, double lambda_high)
      : tau_(grid.knots),
        q_(std::move(sorted_knots)),
        lam_lo_(lambda_low),
        lam_hi_(lambda_high) {}

  double quantile(double tau) const {
    if (!(tau > 0.0 && tau < 1.0))
      throw invariant_error("sieve: quantile requires tau in (0,1)");
    const std::size_t L = tau_.size();
    if (tau < tau_.front()) return q_.front() + std::log(tau / tau_.front()) / lam_lo_;
    if (tau > tau_.back())
      return q_.back() + std::log((1.0 - tau_.back()) / (1.0 - tau)) / lam_hi_;
    auto it = std::upper_bound(tau_.begin(), tau_.end(), tau);
    std::size_t j = std::min<std::size_t>(
        static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - tau_.begin() - 1, 0)), L - 2);
    double w = (tau - tau_[j]) / (tau_[j + 1] - tau_[j]);
    return (1.0 - w) * q_[j] + w * q_[j + 1];
  }

  double density(double v) const {
    const std::size_t L = q_.size();
    if (v < q_.front())
      return lam_lo_ * tau_.front() * std::exp(lam_lo_ * (v - q_.front()));
    if (v >= q_.back())
      return lam_hi_ * (1.0 - tau_.back()) * std::exp(-lam_hi_ * (v - q_.back()));
    std::size_t j = bin_index(v, L);
    return (tau_[j + 1] - tau_[j]) / std::max(q_[j + 1] - q_[j], kMinBinWidth);
  }

  double cdf(double v) const {
    const std::size_t L = q_.size();
    if (v < q_.front())
      return tau_.front() * std::exp(lam_lo_ * (v - q_.front()));
    if (v >= q_.back())
      return 1.0 - (1.0 - tau_.back()) * std::exp(-lam_hi_ * (v - q_.back()));
    std::size_t j = bin_index(v, L);
    double dq = std::max(q_[j + 1] - q_[j], kMinBinWidth);
    return std::min(tau_[j] + (v - q_[j]) * (tau_[j + 1] - tau_[j]) / dq, tau_[j + 1]);
  }

  // E[X] = integral of the quantile function: trapezoid across the knots
  // plus the exact exponential tail means.
  double mean() const {
    const std::size_t L = q_.size();
    double m = tau_.front() * (q_.front() - 1.0 / lam_lo_) +
               (1.0 - tau_.back()) * (q_.back() + 1.0 / lam_hi_);
    for (std::size_t j = 0; j + 1 < L; ++j)
      m += (tau_[j + 1] - tau_[j]) * 0.5 * (q_[j] + q_[j + 1]);
    return m;
  }

  const std::vector<double>& knots() const { return q_; }
  double lambda_low() const { return lam_lo_; }
  double lambda_high() const { return lam_hi_; }

 private:
  std::size_t bin_index(double v, std::size_t L) const {
    auto it = std::upper_bound(q_.begin(), q_.end(), v);
    auto j = static_cast<std::ptrdiff_t>(it - q_.begin()) - 1;
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j, 0, static_cast<std::ptrdiff_t>(L) - 2));
  }

  std::vector<double> tau_;
  std::vector<double> q_;
  double lam_lo_;
  double lam_hi_;
};

// Hermite-basis quantile sieve for one Markov kernel: coefficient rows
// a_k(tau_l) on an equi-spaced tau grid, exponential tails beyond the
// extreme knots. Immutable in use; all evaluation goes through the
// rearranged knot values.
struct QuantileSieve {
  HermiteBasis basis;
  TauGrid grid;
  std::vector<double> coeffs;  // row-major, L x K
  double tail_lambda_low = 1.0;
  double tail_lambda_high = 1.0;

  std::size_t n_knots() const { return grid.size(); }
  std::size_t n_basis() const { return static_cast<std::size_t>(basis.size()); }

  void validate() const {
    grid.validate();
    if (coeffs.size() != n_knots() * n_basis())
      throw invariant_error("sieve: coeff matrix must be L x K");
    if (!(tail_lambda_low > 0.0) || !(tail_lambda_high > 0.0))
      throw invariant_error("sieve: tail lambdas must be positive");
    for (double c : coeffs)
      if (!std::isfinite(c)) throw invariant_error("sieve: non-finite coefficient");
  }

  double coeff(std::size_t l, std::size_t k) const { return coeffs[l * n_basis() + k]; }
  double& coeff(std::size_t l, std::size_t k) { return coeffs[l * n_basis() + k]; }

  std::vector<double> knot_values_raw(double lag_state, double age) const {
    const auto phi = basis.eval(lag_state, age);
    const std::size_t L = n_knots(), K = n_basis();
    std::vector<double> q(L, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
      double acc = 0.0;
      const double* row = coeffs.data() + l * K;
      for (std::size_t k = 0; k < K; ++k) acc += row[k] * phi[k];
      q[l] = acc;
    }
    return q;
  }

  std::vector<double> knot_values(double lag_state, double age) const {
    return rearrange(knot_values_raw(lag_state, age));
  }

  ConditionalDist conditional(double lag_state, double age) const {
    return ConditionalDist(grid, knot_values(lag_state, age), tail_lambda_low,
                           tail_lambda_high);
  }

  double eval_quantile(double tau, double lag_state, double age) const {
    return conditional(lag_state, age).quantile(tau);
  }

  double implied_density(double value, double lag_state, double age) const {
    return conditional(lag_state, age).density(value);
  }

  double implied_cdf(double value, double lag_state, double age) const {
    return conditional(lag_state, age).cdf(value);
  }

  // Inverse-CDF sampling: with u uniform on (0,1) the draw follows the
  // implied density.
  double sample(double u, double lag_state, double age) const {
    return eval_quantile(u, lag_state, age);
  }

  double conditional_mean(double lag_state, double age) const {
    return conditional(lag_state, age).mean();
  }

  // d/d(lag) of the rearranged quantile function. The sort permutation maps
  // each sorted knot back to the coefficient row that produced it; between
  // knots the derivative interpolates linearly, and in the tails it is
  // constant (the tail offset does not depend on the lag).
  double quantile_derivative(double tau, double lag_state, double age) const {
    if (!(tau > 0.0 && tau < 1.0))
      throw invariant_error("sieve: derivative requires tau in (0,1)");
    const std::size_t L = n_knots(), K = n_basis();
    const auto q = knot_values_raw(lag_state, age);
    const auto dphi = basis.eval_dlag(lag_state, age);
    std::vector<double> dq(L, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
      double acc = 0.0;
      const double* row = coeffs.data() + l * K;
      for (std::size_t k = 0; k < K; ++k) acc += row[k] * dphi[k];
      dq[l] = acc;
    }
    std::vector<std::size_t> perm(L);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::stable_sort(perm.begin(), perm.end(),
                     [&](std::size_t a, std::size_t b) { return q[a] < q[b]; });
    std::vector<double> d_sorted(L);
    for (std::size_t l = 0; l < L; ++l) d_sorted[l] = dq[perm[l]];
    const auto& tau_k = grid.knots;
    if (tau <= tau_k.front()) return d_sorted.front();
    if (tau >= tau_k.back()) return d_sorted.back();
    auto it = std::upper_bound(tau_k.begin(), tau_k.end(), tau);
    std::size_t j = static_cast<std::size_t>(it - tau_k.begin()) - 1;
    j = std::min(j, L - 2);
    double w = (tau - tau_k[j]) / (tau_k[j + 1] - tau_k[j]);
    return (1.0 - w) * d_sorted[j] + w * d_sorted[j + 1];
  }
};

inline void to_json(nlohmann::json& j, const Standardizer& s) {
  j = nlohmann::json{{"mean", s.mean}, {"sd", s.sd}};
}

inline void from_json(const nlohmann::json& j, Standardizer& s) {
  j.at("mean").get_to(s.mean);
  j.at("sd").get_to(s.sd);
}

inline void to_json(nlohmann::json& j, const QuantileSieve& s) {
  j = nlohmann::json{
      {"grid", s.grid.knots},
      {"degrees", {{"lag", s.basis.degree_lag}, {"age", s.basis.degree_age}}},
      {"standardizers", {{"lag", s.basis.lag_std}, {"age", s.basis.age_std}}},
      {"coeffs", s.coeffs},
      {"tail_lambdas", {{"low", s.tail_lambda_low}, {"high", s.tail_lambda_high}}}};
}

inline void from_json(const nlohmann::json& j, QuantileSieve& s) {
  s.grid = TauGrid(j.at("grid").get<std::vector<double>>());
  s.basis.degree_lag = j.at("degrees").at("lag").get<int>();
  s.basis.degree_age = j.at("degrees").at("age").get<int>();
  j.at("standardizers").at("lag").get_to(s.basis.lag_std);
  j.at("standardizers").at("age").get_to(s.basis.age_std);
  j.at("coeffs").get_to(s.coeffs);
  s.tail_lambda_low = j.at("tail_lambdas").at("low").get<double>();
  s.tail_lambda_high = j.at("tail_lambdas").at("high").get<double>();
  s.validate();
}

}  // namespace lmp
