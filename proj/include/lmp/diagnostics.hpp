#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "lmp/fit.hpp"
#include "lmp/msem.hpp"
#include "lmp/panel.hpp"
#include "lmp/simulator.hpp"
#include "lmp/stats.hpp"

namespace lmp {

struct PersistenceSurface {
  std::string target;  // "y", "U" or "V"
  std::vector<double> tau_init_grid;
  std::vector<double> tau_shock_grid;
  Eigen::MatrixXd values;  // tau_init rows x tau_shock cols

  double mean_value() const { return values.mean(); }
};

// Average derivative of the conditional quantile function with respect to
// the lag state, evaluated at the empirical tau_init-quantiles of
// `state_draws`. With `age_sample` set the derivative is averaged over those
// ages instead of fixed at `age`.
inline PersistenceSurface persistence_surface(const QuantileSieve& sieve,
                                              std::span<const double> state_draws,
                                              const std::vector<double>& tau_init_grid,
                                              const std::vector<double>& tau_shock_grid,
                                              double age,
                                              const std::vector<double>* age_sample = nullptr) {
  if (state_draws.empty())
    throw invariant_error("diagnostics: persistence surface needs state draws");
  PersistenceSurface out;
  out.tau_init_grid = tau_init_grid;
  out.tau_shock_grid = tau_shock_grid;
  out.values.resize(static_cast<Eigen::Index>(tau_init_grid.size()),
                    static_cast<Eigen::Index>(tau_shock_grid.size()));
  auto sorted = sorted_copy(state_draws);
  for (std::size_t a = 0; a < tau_init_grid.size(); ++a) {
    double u = empirical_quantile(sorted, tau_init_grid[a]);
    for (std::size_t b = 0; b < tau_shock_grid.size(); ++b) {
      double d;
      if (age_sample && !age_sample->empty()) {
        double s = 0.0;
        for (double ag : *age_sample)
          s += sieve.quantile_derivative(tau_shock_grid[b], u, ag);
        d = s / static_cast<double>(age_sample->size());
      } else {
        d = sieve.quantile_derivative(tau_shock_grid[b], u, age);
      }
      out.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = d;
    }
  }
  return out;
}

// Quantile sieve for observed y fitted to consecutive pairs; y has no
// structural kernel, so persistence for y always goes through this.
inline QuantileSieve fit_y_sieve(const PanelDataset& data, const TauGrid& grid,
                                 int degree_lag = 3, int degree_age = 2,
                                 double tol = 1e-8, int n_threads = 1) {
  SieveFitData d;
  for (int i = 0; i < data.n_households; ++i)
    for (int t = 1; t < data.n_periods; ++t) {
      d.response.push_back(data.y(i, t));
      d.lag.push_back(data.y(i, t - 1));
      d.age.push_back(data.age(i, t));
    }
  QuantileSieve shape = sieve_shape_from_sample(
      d.response, grid, degree_lag, degree_age, standardizer_from(d.lag),
      standardizer_from(d.age));
  return fit_sieve(d, shape, tol, n_threads);
}

// Quantile-based (Bowley-type) conditional skewness with tails at tau and
// 1 - tau; lies in [-1, 1] whenever the conditional quantiles are monotone.
inline std::vector<double> conditional_skewness(const QuantileSieve& sieve,
                                                std::span<const double> cond_values,
                                                double tau, double age) {
  if (!(tau > 0.5 && tau < 1.0))
    throw invariant_error("diagnostics: skewness tau must be in (0.5, 1)");
  std::vector<double> out;
  out.reserve(cond_values.size());
  for (double u : cond_values) {
    auto dist = sieve.conditional(u, age);
    double hi = dist.quantile(tau);
    double lo = dist.quantile(1.0 - tau);
    double med = dist.quantile(0.5);
    double denom = hi - lo;
    if (!(std::abs(denom) > 0))
      throw invariant_error("diagnostics: degenerate conditional distribution");
    out.push_back((hi + lo - 2.0 * med) / denom);
  }
  return out;
}

// Crow-Siddiqui conditional kurtosis: tail spread at (tau, 1-tau) relative
// to the interquartile spread. Gaussian reference value ~2.05 at tau=11/12.
inline std::vector<double> conditional_kurtosis(const QuantileSieve& sieve,
                                                std::span<const double> cond_values,
                                                double tau, double age) {
  if (!(tau > 0.75 && tau < 1.0))
    throw invariant_error("diagnostics: kurtosis tau must be in (0.75, 1)");
  std::vector<double> out;
  out.reserve(cond_values.size());
  for (double u : cond_values) {
    auto dist = sieve.conditional(u, age);
    double denom = dist.quantile(0.75) - dist.quantile(0.25);
    if (!(std::abs(denom) > 0))
      throw invariant_error("diagnostics: degenerate conditional distribution");
    out.push_back((dist.quantile(tau) - dist.quantile(1.0 - tau)) / denom);
  }
  return out;
}

enum class Component { U, V };

namespace detail {

inline constexpr std::uint64_t kDiagStream = 0x4447u;  // "DG"

// Pooled draws of one component simulated at a fixed age, together with the
// subset usable as lagged conditioning states.
struct ComponentStates {
  std::vector<double> pooled;
  std::vector<double> lags;
};

inline ComponentStates simulate_component_states(const ModelParams& params, Component c,
                                                 double age, int n_sim, std::uint64_t seed,
                                                 int t_sim = 8) {
  const QuantileSieve& init = c == Component::U ? params.sieve_U1 : params.sieve_V1;
  const QuantileSieve& trans = c == Component::U ? params.sieve_U : params.sieve_V;
  const int n_paths = std::max(1, (n_sim + t_sim - 1) / t_sim);
  ComponentStates out;
  out.pooled.reserve(static_cast<std::size_t>(n_paths) * static_cast<std::size_t>(t_sim));
  out.lags.reserve(out.pooled.capacity());
  for (int i = 0; i < n_paths; ++i) {
    Rng rng = Rng::stream(seed, kDiagStream, static_cast<std::uint64_t>(c == Component::U ? 0 : 1),
                          static_cast<std::uint64_t>(i));
    double x = init.sample(rng.next_uniform(), 0.0, age);
    out.pooled.push_back(x);
    for (int t = 1; t < t_sim; ++t) {
      out.lags.push_back(x);
      x = trans.sample(rng.next_uniform(), x, age);
      out.pooled.push_back(x);
    }
  }
  return out;
}

}  // namespace detail

struct MarginalDensity {
  std::vector<double> grid;
  std::vector<double> density;
  Moments moments;  // of the pooled simulated draws
};

// Kernel density of one latent component at a fixed age, from pooled
// simulated paths (Silverman bandwidth). Pass an empty grid to span
// mean +- 5 sd with 512 points.
inline MarginalDensity marginal_density(const ModelParams& params, Component component,
                                        double age, std::vector<double> grid, int n_sim,
                                        std::uint64_t seed) {
  if (n_sim < 1000)
    throw invariant_error("diagnostics: marginal_density needs n_sim >= 1000");
  auto states = detail::simulate_component_states(params, component, age, n_sim, seed);
  MarginalDensity out;
  out.moments = compute_moments(states.pooled);
  if (grid.empty()) {
    auto dg = kde_default(states.pooled);
    out.grid = std::move(dg.grid);
    out.density = std::move(dg.density);
  } else {
    out.density = kde(states.pooled, grid, silverman_bandwidth(states.pooled));
    out.grid = std::move(grid);
  }
  return out;
}

struct GrowthRecord {
  int horizon = 0;  // in years
  double variance = 0.0;
  double skewness = 0.0;
  double kurtosis = 0.0;  // m4/m2^2
  double arch_slope = 0.0;
  double arch_se = 0.0;
  int arch_sign = 0;
  bool arch_defined = false;
  DensityGrid density;
};

// Pooled moments of y_{t+h} - y_t per horizon, a KDE of the growth
// distribution, and an ARCH statistic: the slope of squared growth on its
// one-period-lagged square.
inline std::vector<GrowthRecord> growth_moments(const PanelDataset& data,
                                                const std::vector<int>& horizons) {
  std::vector<GrowthRecord> out;
  for (int h : horizons) {
    if (h <= 0 || h % data.year_spacing != 0)
      throw invariant_error("diagnostics: horizon " + std::to_string(h) +
                            " not a multiple of the year spacing");
    const int p = h / data.year_spacing;
    if (p >= data.n_periods)
      throw invariant_error("diagnostics: horizon " + std::to_string(h) +
                            " exceeds the panel span");
    GrowthRecord rec;
    rec.horizon = h;
    std::vector<double> growth;
    std::vector<double> arch_x, arch_y;
    for (int i = 0; i < data.n_households; ++i) {
      double prev = 0.0;
      for (int t = 0; t + p < data.n_periods; ++t) {
        double g = data.y(i, t + p) - data.y(i, t);
        growth.push_back(g);
        if (t > 0) {
          arch_x.push_back(prev * prev);
          arch_y.push_back(g * g);
        }
        prev = g;
      }
    }
    Moments m = compute_moments(growth);
    rec.variance = m.variance;
    rec.skewness = m.skewness;
    rec.kurtosis = m.kurtosis;
    rec.density = kde_default(growth);
    if (arch_x.size() >= 3) {
      const auto n = static_cast<double>(arch_x.size());
      double mx = mean(arch_x), my = mean(arch_y);
      double sxx = 0.0, sxy = 0.0;
      for (std::size_t j = 0; j < arch_x.size(); ++j) {
        sxx += (arch_x[j] - mx) * (arch_x[j] - mx);
        sxy += (arch_x[j] - mx) * (arch_y[j] - my);
      }
      if (sxx > 0) {
        rec.arch_slope = sxy / sxx;
        double ss_res = 0.0;
        for (std::size_t j = 0; j < arch_x.size(); ++j) {
          double e = (arch_y[j] - my) - rec.arch_slope * (arch_x[j] - mx);
          ss_res += e * e;
        }
        rec.arch_se = std::sqrt(ss_res / ((n - 2.0) * sxx));
        rec.arch_sign = rec.arch_slope > 0 ? 1 : (rec.arch_slope < 0 ? -1 : 0);
        rec.arch_defined = true;
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

struct NormalizationDeviation {
  double u = 0.0;  // mean |E[U_{t+1}|U_t] - U_t| over the state distribution
  double v = 0.0;  // mean |E[V_{t+1}|V_t]|
};

// Monte Carlo check of the conditional-mean normalization. Inner means are
// exact for the sieve (trapezoid across knots plus tail means); the outer
// expectation runs over simulated states at the mean age.
inline NormalizationDeviation normalization_deviation(const ModelParams& params, int n_sim,
                                                      std::uint64_t seed) {
  NormalizationDeviation out;
  auto us = detail::simulate_component_states(params, Component::U, 0.0, n_sim, seed);
  auto vs = detail::simulate_component_states(params, Component::V, 0.0, n_sim, seed);
  double su = 0.0;
  for (double u : us.pooled) su += std::abs(params.sieve_U.conditional_mean(u, 0.0) - u);
  out.u = su / static_cast<double>(us.pooled.size());
  double sv = 0.0;
  for (double v : vs.pooled) sv += std::abs(params.sieve_V.conditional_mean(v, 0.0));
  out.v = sv / static_cast<double>(vs.pooled.size());
  return out;
}

struct ConditionalCurve {
  std::vector<double> percentiles;
  std::vector<double> cond_values;
  std::vector<double> values;
};

struct DiagnosticsReport {
  std::vector<PersistenceSurface> surfaces;
  std::map<std::string, ConditionalCurve> skewness_curves;
  std::map<std::string, ConditionalCurve> kurtosis_curves;
  std::map<std::string, MarginalDensity> marginal_densities;
  std::vector<GrowthRecord> growth_records;
  NormalizationDeviation normalization;
};

struct DiagnosticsOptions {
  int n_sim = 100000;
  std::uint64_t seed = 1;
  double skew_tau = 11.0 / 12.0;
  std::vector<int> horizons = {2, 3, 4, 5, 6, 7, 8};
  std::vector<double> cond_percentiles = {0.05, 0.10, 0.20, 0.30, 0.40, 0.50,
                                          0.60, 0.70, 0.80, 0.90, 0.95};
  std::vector<double> tau_init_grid;   // empty: the model's tau knots
  std::vector<double> tau_shock_grid;  // empty: the model's tau knots
  bool average_over_ages = false;      // persistence at mean age vs age-averaged
  double qreg_tol = 1e-8;
};

inline DiagnosticsReport build_report(const ModelParams& params, const PanelDataset& data,
                                      const DiagnosticsOptions& opt = {}, int n_threads = 1) {
  DiagnosticsReport rep;
  std::vector<double> tau_init = opt.tau_init_grid.empty() ? params.sieve_U.grid.knots
                                                           : opt.tau_init_grid;
  std::vector<double> tau_shock = opt.tau_shock_grid.empty() ? params.sieve_U.grid.knots
                                                             : opt.tau_shock_grid;
  std::vector<double> ages;
  const std::vector<double>* age_sample = nullptr;
  if (opt.average_over_ages) {
    ages.assign(data.age.data(), data.age.data() + data.age.size());
    age_sample = &ages;
  }

  auto u_states = detail::simulate_component_states(params, Component::U, 0.0, opt.n_sim,
                                                    opt.seed);
  auto v_states = detail::simulate_component_states(params, Component::V, 0.0, opt.n_sim,
                                                    opt.seed);

  // observed-y surface from an auxiliary sieve on consecutive pairs
  QuantileSieve y_sieve = fit_y_sieve(data, params.sieve_U.grid, params.sieve_U.basis.degree_lag,
                                      params.sieve_U.basis.degree_age, opt.qreg_tol, n_threads);
  std::vector<double> y_lags;
  for (int i = 0; i < data.n_households; ++i)
    for (int t = 0; t + 1 < data.n_periods; ++t) y_lags.push_back(data.y(i, t));
  {
    auto s = persistence_surface(y_sieve, y_lags, tau_init, tau_shock, 0.0, age_sample);
    s.target = "y";
    rep.surfaces.push_back(std::move(s));
  }
  {
    auto s = persistence_surface(params.sieve_U, u_states.lags, tau_init, tau_shock, 0.0,
                                 age_sample);
    s.target = "U";
    rep.surfaces.push_back(std::move(s));
  }
  {
    auto s = persistence_surface(params.sieve_V, v_states.lags, tau_init, tau_shock, 0.0,
                                 age_sample);
    s.target = "V";
    rep.surfaces.push_back(std::move(s));
  }

  auto curve_for = [&](const QuantileSieve& sieve, const std::vector<double>& states,
                       bool kurt) {
    ConditionalCurve c;
    auto sorted = sorted_copy(states);
    for (double p : opt.cond_percentiles) {
      c.percentiles.push_back(p);
      c.cond_values.push_back(empirical_quantile(sorted, p));
    }
    c.values = kurt ? conditional_kurtosis(sieve, c.cond_values, opt.skew_tau, 0.0)
                    : conditional_skewness(sieve, c.cond_values, opt.skew_tau, 0.0);
    return c;
  };
  rep.skewness_curves["U"] = curve_for(params.sieve_U, u_states.lags, false);
  rep.skewness_curves["V"] = curve_for(params.sieve_V, v_states.lags, false);
  rep.kurtosis_curves["U"] = curve_for(params.sieve_U, u_states.lags, true);
  rep.kurtosis_curves["V"] = curve_for(params.sieve_V, v_states.lags, true);

  rep.marginal_densities["U"] =
      marginal_density(params, Component::U, 0.0, {}, opt.n_sim, opt.seed);
  rep.marginal_densities["V"] =
      marginal_density(params, Component::V, 0.0, {}, opt.n_sim, opt.seed);

  std::vector<int> horizons;
  for (int h : opt.horizons)
    if (h % data.year_spacing == 0 && h / data.year_spacing < data.n_periods)
      horizons.push_back(h);
  rep.growth_records = growth_moments(data, horizons);
  rep.normalization = normalization_deviation(params, opt.n_sim, opt.seed);
  return rep;
}

inline void to_json(nlohmann::json& j, const PersistenceSurface& s) {
  std::vector<std::vector<double>> rows;
  for (Eigen::Index a = 0; a < s.values.rows(); ++a) {
    std::vector<double> r;
    for (Eigen::Index b = 0; b < s.values.cols(); ++b) r.push_back(s.values(a, b));
    rows.push_back(std::move(r));
  }
  j = nlohmann::json{{"target", s.target},
                     {"tau_init", s.tau_init_grid},
                     {"tau_shock", s.tau_shock_grid},
                     {"values", rows}};
}

inline void to_json(nlohmann::json& j, const ConditionalCurve& c) {
  j = nlohmann::json{{"percentiles", c.percentiles},
                     {"cond_values", c.cond_values},
                     {"values", c.values}};
}

inline void to_json(nlohmann::json& j, const MarginalDensity& m) {
  j = nlohmann::json{{"grid", m.grid},
                     {"density", m.density},
                     {"mean", m.moments.mean},
                     {"variance", m.moments.variance},
                     {"skewness", m.moments.skewness},
                     {"kurtosis", m.moments.kurtosis}};
}

inline void to_json(nlohmann::json& j, const GrowthRecord& g) {
  j = nlohmann::json{{"horizon", g.horizon},
                     {"variance", g.variance},
                     {"skewness", g.skewness},
                     {"kurtosis", g.kurtosis},
                     {"arch_slope", g.arch_slope},
                     {"arch_se", g.arch_se},
                     {"arch_sign", g.arch_sign},
                     {"arch_defined", g.arch_defined},
                     {"density_grid", g.density.grid},
                     {"density", g.density.density}};
}

inline void to_json(nlohmann::json& j, const DiagnosticsReport& r) {
  j = nlohmann::json{{"surfaces", r.surfaces},
                     {"skewness_curves", r.skewness_curves},
                     {"kurtosis_curves", r.kurtosis_curves},
                     {"marginal_densities", r.marginal_densities},
                     {"growth_moments", r.growth_records},
                     {"normalization_deviation",
                      {{"U", r.normalization.u}, {"V", r.normalization.v}}}};
}

// report.json plus one CSV per surface and curve for external plotting.
inline void write_report(const DiagnosticsReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw io_error("diagnostics: cannot write report.json");
    out << nlohmann::json(rep).dump(2) << '\n';
  }
  for (const auto& s : rep.surfaces) {
    std::ofstream out(dir / ("surface_" + s.target + ".csv"));
    out << "tau_init,tau_shock,value\n";
    for (std::size_t a = 0; a < s.tau_init_grid.size(); ++a)
      for (std::size_t b = 0; b < s.tau_shock_grid.size(); ++b)
        out << format_double(s.tau_init_grid[a]) << ',' << format_double(s.tau_shock_grid[b])
            << ','
            << format_double(s.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)))
            << '\n';
  }
  auto write_curves = [&](const std::map<std::string, ConditionalCurve>& curves,
                          const std::string& prefix, const std::string& col) {
    for (const auto& [name, c] : curves) {
      std::ofstream out(dir / (prefix + "_" + name + ".csv"));
      out << "percentile,cond_value," << col << '\n';
      for (std::size_t i = 0; i < c.values.size(); ++i)
        out << format_double(c.percentiles[i]) << ',' << format_double(c.cond_values[i]) << ','
            << format_double(c.values[i]) << '\n';
    }
  };
  write_curves(rep.skewness_curves, "skewness", "skewness");
  write_curves(rep.kurtosis_curves, "kurtosis", "kurtosis");
  for (const auto& [name, m] : rep.marginal_densities) {
    std::ofstream out(dir / ("marginal_" + name + ".csv"));
    out << "value,density\n";
    for (std::size_t i = 0; i < m.grid.size(); ++i)
      out << format_double(m.grid[i]) << ',' << format_double(m.density[i]) << '\n';
  }
  {
    std::ofstream out(dir / "growth_moments.csv");
    out << "horizon,variance,skewness,kurtosis,arch_slope,arch_se,arch_sign\n";
    for (const auto& g : rep.growth_records)
      out << g.horizon << ',' << format_double(g.variance) << ',' << format_double(g.skewness)
          << ',' << format_double(g.kurtosis) << ',' << format_double(g.arch_slope) << ','
          << format_double(g.arch_se) << ',' << g.arch_sign << '\n';
  }
  for (const auto& g : rep.growth_records) {
    std::ofstream out(dir / ("growth_density_h" + std::to_string(g.horizon) + ".csv"));
    out << "value,density\n";
    for (std::size_t i = 0; i < g.density.grid.size(); ++i)
      out << format_double(g.density.grid[i]) << ',' << format_double(g.density.density[i])
          << '\n';
  }
}

}  // namespace lmp
