#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmp/msem.hpp"
#include "lmp/panel.hpp"
#include "lmp/rng.hpp"
#include "lmp/stats.hpp"

namespace lmp {

enum class DgpKind { canonical, nonlinear_sieve, fitted };
enum class TransitoryDist { gaussian, laplace };

struct AgeProfile {
  double start = 25.0;
  double increment = 1.0;
};

// Nonlinear benchmark kernel: U_t = rho*U_{t-1} + sigma*z(tau) - kappa*U_{t-1}*max(z(tau),0).
// The kappa term compresses the right tail for high lag states and stretches
// it for low ones, so conditional skewness flips sign across the state range.
struct NonlinearSpec {
  double rho = 0.7;
  double sigma = 0.2;
  double kappa = 0.15;
};

struct DgpSpec {
  DgpKind kind = DgpKind::canonical;
  double sigma_eta = 0.15;  // canonical U innovation sd (also U_1 sd)
  TransitoryDist transitory_dist = TransitoryDist::gaussian;
  double transitory_scale = 0.10;  // sd for gaussian, b for laplace
  double beta0 = 0.0;
  double beta1 = 1.0;
  int n_households = 1000;
  int n_periods = 6;
  AgeProfile age_profile;
  std::uint64_t seed = 1;
  NonlinearSpec nonlinear;
  int year_start = 2000;

  void validate() const {
    if (n_periods < 5) throw invariant_error("simulator: need T >= 5");
    if (n_households < 1) throw invariant_error("simulator: need N >= 1");
    if (!(sigma_eta >= 0.0)) throw invariant_error("simulator: sigma_eta must be >= 0");
    if (!(transitory_scale > 0.0)) throw invariant_error("simulator: transitory scale must be positive");
  }
};

struct SimResult {
  PanelDataset panel;
  Eigen::MatrixXd u_truth;  // N x T
  Eigen::MatrixXd v_truth;  // N x T
  Eigen::MatrixXd age_raw;  // N x T

  RawPanel to_raw(int year_start = 2000) const {
    RawPanel raw;
    const int N = panel.n_households, T = panel.n_periods;
    raw.household_ids.resize(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) raw.household_ids[static_cast<std::size_t>(i)] = i + 1;
    raw.years.resize(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) raw.years[static_cast<std::size_t>(t)] = year_start + t;
    raw.log_earnings = panel.y;
    raw.age = age_raw;
    raw.instrument = panel.instrument;
    raw.demographics.resize(static_cast<Eigen::Index>(N) * T, 0);
    return raw;
  }
};

namespace detail {

inline constexpr std::uint64_t kSimU = 0x5355u;      // "SU"
inline constexpr std::uint64_t kSimV = 0x5356u;      // "SV"
inline constexpr std::uint64_t kSimOmega = 0x534fu;  // "SO"

inline double draw_transitory(Rng& rng, TransitoryDist dist, double scale) {
  return dist == TransitoryDist::gaussian ? scale * rng.next_normal()
                                          : rng.next_laplace(scale);
}

inline void finalize_panel(SimResult& res, const Eigen::MatrixXi& omega, int year_start) {
  const auto N = res.u_truth.rows();
  const auto T = res.u_truth.cols();
  PanelDataset& ds = res.panel;
  ds.n_households = static_cast<int>(N);
  ds.n_periods = static_cast<int>(T);
  ds.y = res.u_truth + res.v_truth;
  ds.instrument = omega;
  ds.age_mean = res.age_raw.mean();
  double ss = (res.age_raw.array() - ds.age_mean).square().sum();
  const auto n = N * T;
  ds.age_sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 1.0;
  if (!(ds.age_sd > 1e-12)) ds.age_sd = 1.0;
  ds.age = (res.age_raw.array() - ds.age_mean) / ds.age_sd;
  ds.year_start = year_start;
  ds.year_spacing = 1;
  ds.household_ids.resize(static_cast<std::size_t>(N));
  for (Eigen::Index i = 0; i < N; ++i) ds.household_ids[static_cast<std::size_t>(i)] = i + 1;
}

}  // namespace detail

// Canonical benchmark: U is a Gaussian random walk (U_1 ~ N(0, sigma_eta^2)),
// V is i.i.d. gaussian or laplace, omega is Bernoulli(logistic(beta0 +
// beta1*U)). The U, V and omega streams are distinct per household, which
// keeps the two processes statistically independent.
inline SimResult simulate_canonical(const DgpSpec& spec) {
  spec.validate();
  const int N = spec.n_households, T = spec.n_periods;
  SimResult res;
  res.u_truth.resize(N, T);
  res.v_truth.resize(N, T);
  res.age_raw.resize(N, T);
  Eigen::MatrixXi omega(N, T);
  for (int i = 0; i < N; ++i) {
    Rng rng_u = Rng::stream(spec.seed, detail::kSimU, static_cast<std::uint64_t>(i));
    Rng rng_v = Rng::stream(spec.seed, detail::kSimV, static_cast<std::uint64_t>(i));
    Rng rng_o = Rng::stream(spec.seed, detail::kSimOmega, static_cast<std::uint64_t>(i));
    double u = spec.sigma_eta * rng_u.next_normal();
    for (int t = 0; t < T; ++t) {
      if (t > 0) u += spec.sigma_eta * rng_u.next_normal();
      res.u_truth(i, t) = u;
      res.v_truth(i, t) = detail::draw_transitory(rng_v, spec.transitory_dist,
                                                  spec.transitory_scale);
      res.age_raw(i, t) = spec.age_profile.start + t * spec.age_profile.increment;
      double p = 1.0 / (1.0 + std::exp(-(spec.beta0 + spec.beta1 * u)));
      omega(i, t) = rng_o.next_bernoulli(p) ? 1 : 0;
    }
  }
  detail::finalize_panel(res, omega, spec.year_start);
  return res;
}

// Forward simulation of a fitted model: initial draws from the two initial
// sieves, then inverse-CDF transitions with fresh uniforms.
inline SimResult simulate_from_model(const ModelParams& params, int n_households,
                                     int n_periods, const AgeProfile& age_profile,
                                     std::uint64_t seed, int year_start = 2000) {
  params.validate();
  const int N = n_households, T = n_periods;
  if (N < 1 || T < 1) throw invariant_error("simulator: need N >= 1 and T >= 1");
  SimResult res;
  res.u_truth.resize(N, T);
  res.v_truth.resize(N, T);
  res.age_raw.resize(N, T);
  Eigen::MatrixXi omega(N, T);
  // ages enter the sieves in panel-standardized units; standardize the raw
  // profile by its own moments, matching what residualize() would produce
  std::vector<double> prof(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t)
    prof[static_cast<std::size_t>(t)] = age_profile.start + t * age_profile.increment;
  double age_mean = mean(prof);
  double ss = 0.0;
  for (double a : prof) ss += (a - age_mean) * (a - age_mean);
  double age_sd = T * N > 1 ? std::sqrt(ss * N / static_cast<double>(N * T - 1)) : 1.0;
  if (!(age_sd > 1e-12)) age_sd = 1.0;

  for (int i = 0; i < N; ++i) {
    Rng rng_u = Rng::stream(seed, detail::kSimU, static_cast<std::uint64_t>(i));
    Rng rng_v = Rng::stream(seed, detail::kSimV, static_cast<std::uint64_t>(i));
    Rng rng_o = Rng::stream(seed, detail::kSimOmega, static_cast<std::uint64_t>(i));
    double u = 0.0, v = 0.0;
    for (int t = 0; t < T; ++t) {
      double age_std = (prof[static_cast<std::size_t>(t)] - age_mean) / age_sd;
      if (t == 0) {
        u = params.sieve_U1.sample(rng_u.next_uniform(), 0.0, age_std);
        v = params.sieve_V1.sample(rng_v.next_uniform(), 0.0, age_std);
      } else {
        u = params.sieve_U.sample(rng_u.next_uniform(), u, age_std);
        v = params.sieve_V.sample(rng_v.next_uniform(), v, age_std);
      }
      res.u_truth(i, t) = u;
      res.v_truth(i, t) = v;
      res.age_raw(i, t) = prof[static_cast<std::size_t>(t)];
      double p = 1.0 / (1.0 + std::exp(-(params.beta0 + params.beta1 * u)));
      omega(i, t) = rng_o.next_bernoulli(p) ? 1 : 0;
    }
  }
  detail::finalize_panel(res, omega, year_start);
  return res;
}

inline SimResult simulate(const DgpSpec& spec, const ModelParams* fitted = nullptr);

// Sieve with no lag dependence whose knots follow an explicit quantile
// function.
inline QuantileSieve iid_sieve(const TauGrid& grid, const std::vector<double>& knot_values,
                               double lambda_low, double lambda_high,
                               Standardizer lag_std = {}, Standardizer age_std = {},
                               int degree_lag = 0, int degree_age = 0) {
  QuantileSieve s;
  s.grid = grid;
  s.basis.degree_lag = degree_lag;
  s.basis.degree_age = degree_age;
  s.basis.lag_std = lag_std;
  s.basis.age_std = age_std;
  s.coeffs.assign(s.n_knots() * s.n_basis(), 0.0);
  for (std::size_t l = 0; l < s.n_knots(); ++l) s.coeff(l, 0) = knot_values[l];
  s.tail_lambda_low = lambda_low;
  s.tail_lambda_high = lambda_high;
  s.validate();
  return s;
}

// Exponential tail rate that makes the sieve density continuous at the
// extreme knot of a N(0, sigma) kernel.
inline double gaussian_tail_lambda(const TauGrid& grid, double sigma) {
  double z = normal_quantile(grid.back());
  return normal_pdf(z) / ((1.0 - grid.back()) * sigma);
}

// Gaussian AR(1) kernel Q(tau | u) = rho*u + sigma*z(tau); rho = 1 is the
// canonical random walk with marginal persistence identically one.
inline QuantileSieve gaussian_ar1_sieve(const TauGrid& grid, double rho, double sigma,
                                        Standardizer lag_std, Standardizer age_std = {},
                                        int degree_age = 0) {
  QuantileSieve s;
  s.grid = grid;
  s.basis.degree_lag = 1;
  s.basis.degree_age = degree_age;
  s.basis.lag_std = lag_std;
  s.basis.age_std = age_std;
  s.coeffs.assign(s.n_knots() * s.n_basis(), 0.0);
  for (std::size_t l = 0; l < s.n_knots(); ++l) {
    double z = normal_quantile(grid.knots[l]);
    s.coeff(l, 0) = sigma * z + rho * lag_std.mean;
    s.coeff(l, 1) = rho * lag_std.sd;
  }
  s.tail_lambda_low = s.tail_lambda_high = gaussian_tail_lambda(grid, sigma);
  s.validate();
  return s;
}

inline QuantileSieve gaussian_iid_sieve(const TauGrid& grid, double sigma,
                                        Standardizer lag_std = {}, Standardizer age_std = {}) {
  std::vector<double> q(grid.size());
  for (std::size_t l = 0; l < grid.size(); ++l)
    q[l] = sigma * normal_quantile(grid.knots[l]);
  double lam = gaussian_tail_lambda(grid, sigma);
  return iid_sieve(grid, q, lam, lam, lag_std, age_std);
}

inline QuantileSieve laplace_iid_sieve(const TauGrid& grid, double scale,
                                       Standardizer lag_std = {}, Standardizer age_std = {}) {
  std::vector<double> q(grid.size());
  for (std::size_t l = 0; l < grid.size(); ++l) {
    double tau = grid.knots[l];
    q[l] = tau <= 0.5 ? scale * std::log(2.0 * tau) : -scale * std::log(2.0 * (1.0 - tau));
  }
  // exponential tails are exact for the laplace kernel
  return iid_sieve(grid, q, 1.0 / scale, 1.0 / scale, lag_std, age_std);
}

// Full parameter set for the skew-reversal benchmark. The true kernels lie
// inside the sieve family, so the estimator can recover them exactly up to
// sampling noise.
inline ModelParams make_skew_reversal_params(const NonlinearSpec& nl, double sigma_v,
                                             double beta0 = 0.0, double beta1 = 1.0,
                                             int n_tau_knots = 11) {
  TauGrid grid(n_tau_knots);
  double s_u = nl.sigma / std::sqrt(std::max(1.0 - nl.rho * nl.rho, 1e-6));
  Standardizer u_std{0.0, s_u};

  ModelParams p;
  QuantileSieve& su = p.sieve_U;
  su.grid = grid;
  su.basis.degree_lag = 1;
  su.basis.degree_age = 0;
  su.basis.lag_std = u_std;
  su.coeffs.assign(su.n_knots() * su.n_basis(), 0.0);
  for (std::size_t l = 0; l < su.n_knots(); ++l) {
    double z = normal_quantile(grid.knots[l]);
    double slope = nl.rho - nl.kappa * std::max(z, 0.0);
    su.coeff(l, 0) = nl.sigma * z;
    su.coeff(l, 1) = slope * s_u;
  }
  su.tail_lambda_low = su.tail_lambda_high = gaussian_tail_lambda(grid, nl.sigma);

  p.sieve_V = gaussian_iid_sieve(grid, sigma_v, Standardizer{0.0, sigma_v});
  p.sieve_U1 = gaussian_iid_sieve(grid, s_u);
  p.sieve_V1 = gaussian_iid_sieve(grid, sigma_v);
  p.beta0 = beta0;
  p.beta1 = beta1;
  p.validate();
  return p;
}

// Canonical model expressed in sieve form (used by tests and diagnostics).
inline ModelParams make_random_walk_params(double sigma_eta, double sigma_v,
                                           double beta0 = 0.0, double beta1 = 1.0,
                                           int n_tau_knots = 11) {
  TauGrid grid(n_tau_knots);
  ModelParams p;
  p.sieve_U = gaussian_ar1_sieve(grid, 1.0, sigma_eta, Standardizer{0.0, 1.0});
  p.sieve_V = gaussian_iid_sieve(grid, sigma_v, Standardizer{0.0, sigma_v});
  p.sieve_U1 = gaussian_iid_sieve(grid, sigma_eta);
  p.sieve_V1 = gaussian_iid_sieve(grid, sigma_v);
  p.beta0 = beta0;
  p.beta1 = beta1;
  p.validate();
  return p;
}

inline SimResult simulate(const DgpSpec& spec, const ModelParams* fitted) {
  switch (spec.kind) {
    case DgpKind::canonical:
      return simulate_canonical(spec);
    case DgpKind::nonlinear_sieve: {
      ModelParams p = make_skew_reversal_params(spec.nonlinear, spec.transitory_scale,
                                                spec.beta0, spec.beta1);
      return simulate_from_model(p, spec.n_households, spec.n_periods, spec.age_profile,
                                 spec.seed, spec.year_start);
    }
    case DgpKind::fitted:
      if (!fitted) throw invariant_error("simulator: fitted kind needs model parameters");
      return simulate_from_model(*fitted, spec.n_households, spec.n_periods,
                                 spec.age_profile, spec.seed, spec.year_start);
  }
  throw invariant_error("simulator: unknown dgp kind");
}

inline void write_truth_csv(const SimResult& res, const std::string& path,
                            int year_start = 2000) {
  std::ofstream out(path);
  if (!out) throw io_error("simulator: cannot write '" + path + "'");
  out << "household_id,year,U,V\n";
  for (Eigen::Index i = 0; i < res.u_truth.rows(); ++i)
    for (Eigen::Index t = 0; t < res.u_truth.cols(); ++t)
      out << (i + 1) << ',' << (year_start + t) << ',' << format_double(res.u_truth(i, t))
          << ',' << format_double(res.v_truth(i, t)) << '\n';
  if (!out) throw io_error("simulator: write failed for '" + path + "'");
}

}  // namespace lmp
