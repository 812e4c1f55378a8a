#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmp/fit.hpp"
#include "lmp/panel.hpp"
#include "lmp/parallel.hpp"
#include "lmp/qreg.hpp"
#include "lmp/rng.hpp"
#include "lmp/sieve.hpp"
#include "lmp/stats.hpp"

namespace lmp {

// The four Markov-kernel sieves plus the logistic instrument channel. The
// transition sieves are shared across t (stationary configuration); the
// initial-condition sieves condition on age alone.
struct ModelParams {
  QuantileSieve sieve_U;   // U_t | U_{t-1}, age_t
  QuantileSieve sieve_V;   // V_t | V_{t-1}, age_t
  QuantileSieve sieve_U1;  // U_1 | age_1
  QuantileSieve sieve_V1;  // V_1 | age_1
  double beta0 = 0.0;
  double beta1 = 1.0;

  void validate() const {
    sieve_U.validate();
    sieve_V.validate();
    sieve_U1.validate();
    sieve_V1.validate();
    const auto& k = sieve_U.grid.knots;
    for (const QuantileSieve* s : {&sieve_V, &sieve_U1, &sieve_V1})
      if (s->grid.knots != k)
        throw invariant_error("msem: all four sieves must share the tau grid");
    if (!std::isfinite(beta0) || !std::isfinite(beta1))
      throw invariant_error("msem: non-finite instrument coefficients");
  }
};

inline void to_json(nlohmann::json& j, const ModelParams& p) {
  j = nlohmann::json{{"sieve_U", p.sieve_U},   {"sieve_V", p.sieve_V},
                     {"sieve_U1", p.sieve_U1}, {"sieve_V1", p.sieve_V1},
                     {"beta0", p.beta0},       {"beta1", p.beta1}};
}

inline void from_json(const nlohmann::json& j, ModelParams& p) {
  j.at("sieve_U").get_to(p.sieve_U);
  j.at("sieve_V").get_to(p.sieve_V);
  j.at("sieve_U1").get_to(p.sieve_U1);
  j.at("sieve_V1").get_to(p.sieve_V1);
  j.at("beta0").get_to(p.beta0);
  j.at("beta1").get_to(p.beta1);
  p.validate();
}

struct MsemConfig {
  int n_outer = 50;             // S
  int n_draws = 1;              // M chains per household
  int mh_steps_per_estep = 20;  // full sweeps over t per E-step
  double mh_proposal_sd = 0.0;  // <= 0 means 0.25 * sd(y)
  double burn_in_fraction = 0.5;
  int averaging_window = 0;  // 0 means ceil(S/2)
  std::uint64_t seed = 1;
  double tol_qreg = 1e-8;

  void validate() const {
    if (n_outer < 1) throw invariant_error("msem: n_outer must be >= 1");
    if (n_draws < 1) throw invariant_error("msem: n_draws must be >= 1");
    if (mh_steps_per_estep < 1) throw invariant_error("msem: mh_steps_per_estep must be >= 1");
    if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
      throw invariant_error("msem: burn_in_fraction must be in [0,1)");
    if (averaging_window < 0) throw invariant_error("msem: averaging_window must be >= 0");
    if (!(tol_qreg > 0.0)) throw invariant_error("msem: tol_qreg must be positive");
  }
};

// Latent U draws plus everything needed to continue the chain: the draws are
// indexed (household, chain, period) and the RNG position is the master seed
// together with the global sweep counter.
struct MsemState {
  ModelParams params;  // latest iterate (not the averaged estimate)
  std::vector<double> latent;
  int n_households = 0;
  int n_draws = 0;
  int n_periods = 0;
  std::vector<double> loglik_trace;
  std::vector<double> surrogate_trace;
  std::uint64_t seed = 0;
  std::uint64_t sweep_counter = 0;
  double proposal_sd = 0.0;
  double last_accept_rate = 0.0;

  double& u(int i, int m, int t) {
    return latent[(static_cast<std::size_t>(i) * static_cast<std::size_t>(n_draws) +
                   static_cast<std::size_t>(m)) *
                      static_cast<std::size_t>(n_periods) +
                  static_cast<std::size_t>(t)];
  }
  double u(int i, int m, int t) const {
    return latent[(static_cast<std::size_t>(i) * static_cast<std::size_t>(n_draws) +
                   static_cast<std::size_t>(m)) *
                      static_cast<std::size_t>(n_periods) +
                  static_cast<std::size_t>(t)];
  }
};

namespace detail {

inline constexpr std::uint64_t kMhStreamTag = 0x4d48u;  // "MH"

inline bool mh_accept(double delta_loglik, double unif) {
  return std::log(unif) < delta_loglik;
}

inline double log_sigmoid(double eta) {
  return eta > 0 ? -std::log1p(std::exp(-eta)) : eta - std::log1p(std::exp(eta));
}

}  // namespace detail

// Complete-data log likelihood of one household path: initial densities,
// transition densities of U and of V = y - U, and the Bernoulli instrument
// channel. Densities go through the degeneracy cap, so the result is finite.
inline double complete_data_loglik(const ModelParams& p, std::span<const double> u_path,
                                   std::span<const double> y_path,
                                   std::span<const double> age_path,
                                   std::span<const int> omega_path) {
  const std::size_t T = u_path.size();
  if (y_path.size() != T || age_path.size() != T || omega_path.size() != T)
    throw invariant_error("msem: path length mismatch");
  double ll = std::log(p.sieve_U1.implied_density(u_path[0], 0.0, age_path[0])) +
              std::log(p.sieve_V1.implied_density(y_path[0] - u_path[0], 0.0, age_path[0]));
  for (std::size_t t = 1; t < T; ++t) {
    ll += std::log(p.sieve_U.implied_density(u_path[t], u_path[t - 1], age_path[t]));
    ll += std::log(p.sieve_V.implied_density(y_path[t] - u_path[t],
                                             y_path[t - 1] - u_path[t - 1], age_path[t]));
  }
  for (std::size_t t = 0; t < T; ++t) {
    double eta = p.beta0 + p.beta1 * u_path[t];
    ll += omega_path[t] ? detail::log_sigmoid(eta) : detail::log_sigmoid(-eta);
  }
  return ll;
}

// Random-walk Metropolis-Hastings over the latent U paths: single-site
// Gaussian proposals, full sweeps over t, chains warm-started from the
// current draws. Randomness is keyed by (seed, household, chain, sweep), so
// the result does not depend on the thread count.
inline void estep_sample(MsemState& state, const PanelDataset& data, const MsemConfig& config,
                         int n_threads = 1) {
  const int N = state.n_households;
  const int M = state.n_draws;
  const int T = state.n_periods;
  const double sd = state.proposal_sd > 0
                        ? state.proposal_sd
                        : (config.mh_proposal_sd > 0 ? config.mh_proposal_sd : 0.25);
  const std::uint64_t sweep0 = state.sweep_counter;
  std::vector<std::uint64_t> accepts(static_cast<std::size_t>(N), 0);

  parallel_for(static_cast<std::size_t>(N), n_threads, [&](std::size_t ii) {
    const int i = static_cast<int>(ii);
    std::vector<double> u_path(static_cast<std::size_t>(T));
    std::vector<double> y_path(static_cast<std::size_t>(T));
    std::vector<double> age_path(static_cast<std::size_t>(T));
    std::vector<int> omega_path(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      y_path[static_cast<std::size_t>(t)] = data.y(i, t);
      age_path[static_cast<std::size_t>(t)] = data.age(i, t);
      omega_path[static_cast<std::size_t>(t)] = data.instrument(i, t);
    }
    std::uint64_t local_accepts = 0;
    for (int m = 0; m < M; ++m) {
      for (int t = 0; t < T; ++t) u_path[static_cast<std::size_t>(t)] = state.u(i, m, t);
      double ll = complete_data_loglik(state.params, u_path, y_path, age_path, omega_path);
      for (int s = 0; s < config.mh_steps_per_estep; ++s) {
        const std::uint64_t sweep_id = sweep0 + static_cast<std::uint64_t>(s);
        Rng rng = Rng::stream(state.seed, detail::kMhStreamTag, static_cast<std::uint64_t>(i),
                              (static_cast<std::uint64_t>(m) << 40) | sweep_id);
        for (int t = 0; t < T; ++t) {
          const double old = u_path[static_cast<std::size_t>(t)];
          u_path[static_cast<std::size_t>(t)] = old + sd * rng.next_normal();
          double ll_prop = complete_data_loglik(state.params, u_path, y_path, age_path, omega_path);
          if (detail::mh_accept(ll_prop - ll, rng.next_uniform())) {
            ll = ll_prop;
            ++local_accepts;
          } else {
            u_path[static_cast<std::size_t>(t)] = old;
          }
        }
      }
      for (int t = 0; t < T; ++t) state.u(i, m, t) = u_path[static_cast<std::size_t>(t)];
    }
    accepts[ii] = local_accepts;
  });

  state.sweep_counter += static_cast<std::uint64_t>(config.mh_steps_per_estep);
  std::uint64_t total = 0;
  for (auto a : accepts) total += a;
  const double proposals = static_cast<double>(N) * M * T * config.mh_steps_per_estep;
  state.last_accept_rate = proposals > 0 ? static_cast<double>(total) / proposals : 0.0;
}

namespace detail {

// Pooled per-equation samples for the M-step.
struct MstepPools {
  SieveFitData u_trans, v_trans, u_init, v_init;
  Eigen::VectorXd logit_cov, logit_out;
};

inline MstepPools build_mstep_pools(const MsemState& state, const PanelDataset& data) {
  const int N = state.n_households, M = state.n_draws, T = state.n_periods;
  MstepPools pools;
  const std::size_t n_trans = static_cast<std::size_t>(N) * M * (static_cast<std::size_t>(T) - 1);
  const std::size_t n_init = static_cast<std::size_t>(N) * M;
  for (auto* pool : {&pools.u_trans, &pools.v_trans}) {
    pool->response.reserve(n_trans);
    pool->lag.reserve(n_trans);
    pool->age.reserve(n_trans);
  }
  for (auto* pool : {&pools.u_init, &pools.v_init}) {
    pool->response.reserve(n_init);
    pool->lag.reserve(n_init);
    pool->age.reserve(n_init);
  }
  pools.logit_cov.resize(static_cast<Eigen::Index>(N) * M * T);
  pools.logit_out.resize(static_cast<Eigen::Index>(N) * M * T);
  Eigen::Index li = 0;
  for (int i = 0; i < N; ++i) {
    for (int m = 0; m < M; ++m) {
      pools.u_init.response.push_back(state.u(i, m, 0));
      pools.u_init.lag.push_back(0.0);
      pools.u_init.age.push_back(data.age(i, 0));
      pools.v_init.response.push_back(data.y(i, 0) - state.u(i, m, 0));
      pools.v_init.lag.push_back(0.0);
      pools.v_init.age.push_back(data.age(i, 0));
      for (int t = 1; t < T; ++t) {
        pools.u_trans.response.push_back(state.u(i, m, t));
        pools.u_trans.lag.push_back(state.u(i, m, t - 1));
        pools.u_trans.age.push_back(data.age(i, t));
        pools.v_trans.response.push_back(data.y(i, t) - state.u(i, m, t));
        pools.v_trans.lag.push_back(data.y(i, t - 1) - state.u(i, m, t - 1));
        pools.v_trans.age.push_back(data.age(i, t));
      }
      for (int t = 0; t < T; ++t) {
        pools.logit_cov[li] = state.u(i, m, t);
        pools.logit_out[li] = static_cast<double>(data.instrument(i, t));
        ++li;
      }
    }
  }
  return pools;
}

inline double sieve_surrogate(const QuantileSieve& s, const SieveFitData& d) {
  const std::size_t n = d.response.size(), L = s.n_knots(), K = s.n_basis();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto phi = s.basis.eval(d.lag[i], d.age[i]);
    for (std::size_t l = 0; l < L; ++l) {
      double fit = 0.0;
      for (std::size_t k = 0; k < K; ++k) fit += s.coeff(l, k) * phi[k];
      total += check_loss(d.response[i] - fit, s.grid.knots[l]);
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace detail

// Grid-average of the V-transition knot values at the mean conditioning
// point; the M-step subtracts this from the intercepts.
inline double v_recenter_constant(const QuantileSieve& sieve_v) {
  auto q = sieve_v.knot_values_raw(sieve_v.basis.lag_std.mean, sieve_v.basis.age_std.mean);
  double s = 0.0;
  for (double v : q) s += v;
  return s / static_cast<double>(q.size());
}

// Knot-wise quantile regressions for the four equations on the pooled
// (i, t, m) draws, tail-rate refits, the logistic instrument update, and the
// V recentering. `current` supplies sieve shapes and warm starts.
inline ModelParams mstep_update(const MsemState& state, const PanelDataset& data,
                                const MsemConfig& config, const ModelParams& current,
                                int n_threads = 1, double* surrogate_out = nullptr) {
  auto pools = detail::build_mstep_pools(state, data);
  ModelParams next = current;
  next.sieve_U = fit_sieve(pools.u_trans, current.sieve_U, config.tol_qreg, n_threads);
  next.sieve_V = fit_sieve(pools.v_trans, current.sieve_V, config.tol_qreg, n_threads);
  next.sieve_U1 = fit_sieve(pools.u_init, current.sieve_U1, config.tol_qreg, n_threads);
  next.sieve_V1 = fit_sieve(pools.v_init, current.sieve_V1, config.tol_qreg, n_threads);

  LogitProblem logit{pools.logit_cov, pools.logit_out};
  auto [b0, b1] = fit_logistic(logit, std::min(config.tol_qreg * 100.0, 1e-6));
  next.beta0 = b0;
  next.beta1 = b1;

  if (surrogate_out)
    *surrogate_out = detail::sieve_surrogate(next.sieve_U, pools.u_trans) +
                     detail::sieve_surrogate(next.sieve_V, pools.v_trans) +
                     detail::sieve_surrogate(next.sieve_U1, pools.u_init) +
                     detail::sieve_surrogate(next.sieve_V1, pools.v_init);

  const double c = v_recenter_constant(next.sieve_V);
  for (std::size_t l = 0; l < next.sieve_V.n_knots(); ++l) next.sieve_V.coeff(l, 0) -= c;
  next.validate();
  return next;
}

struct ModelStructure {
  int n_tau_knots = 11;
  int degree_lag = 3;
  int degree_age = 2;
  int degree_age_initial = 2;
};

// Default starting point: unconditional quantiles of y/2 for the U sieves
// and of y - median(y) for the V sieves; instrument at (0, 1). Basis
// standardizers are fixed here, from the data, and stay fixed across the
// whole run so that iterate averaging is coefficient-wise meaningful.
inline ModelParams default_init_params(const PanelDataset& data,
                                       const ModelStructure& ms = {}) {
  TauGrid grid(ms.n_tau_knots);
  std::vector<double> ys(data.y.data(), data.y.data() + data.y.size());
  std::vector<double> ages(data.age.data(), data.age.data() + data.age.size());
  auto sorted = sorted_copy(ys);
  const double med = empirical_quantile(sorted, 0.5);
  std::vector<double> u0(ys.size()), v0(ys.size());
  for (std::size_t i = 0; i < ys.size(); ++i) {
    u0[i] = ys[i] / 2.0;
    v0[i] = ys[i] - med;
  }
  Standardizer age_std = standardizer_from(ages);
  Standardizer u_std = standardizer_from(u0);
  Standardizer v_std = standardizer_from(v0);

  ModelParams p;
  p.sieve_U = sieve_shape_from_sample(u0, grid, ms.degree_lag, ms.degree_age, u_std, age_std);
  p.sieve_V = sieve_shape_from_sample(v0, grid, ms.degree_lag, ms.degree_age, v_std, age_std);
  p.sieve_U1 = sieve_shape_from_sample(u0, grid, 0, ms.degree_age_initial, u_std, age_std);
  p.sieve_V1 = sieve_shape_from_sample(v0, grid, 0, ms.degree_age_initial, v_std, age_std);
  p.beta0 = 0.0;
  p.beta1 = 1.0;
  p.validate();
  return p;
}

inline ModelParams average_params(const std::deque<ModelParams>& iterates) {
  if (iterates.empty()) throw invariant_error("msem: nothing to average");
  ModelParams avg = iterates.back();
  const double w = 1.0 / static_cast<double>(iterates.size());
  auto acc = [&](auto field) {
    double s = 0.0;
    for (const auto& p : iterates) s += field(p);
    return s * w;
  };
  QuantileSieve ModelParams::*sieves[] = {&ModelParams::sieve_U, &ModelParams::sieve_V,
                                          &ModelParams::sieve_U1, &ModelParams::sieve_V1};
  for (auto mem : sieves) {
    auto& out = avg.*mem;
    for (std::size_t c = 0; c < out.coeffs.size(); ++c) {
      double s = 0.0;
      for (const auto& p : iterates) s += (p.*mem).coeffs[c];
      out.coeffs[c] = s * w;
    }
    out.tail_lambda_low = acc([&](const ModelParams& p) { return (p.*mem).tail_lambda_low; });
    out.tail_lambda_high = acc([&](const ModelParams& p) { return (p.*mem).tail_lambda_high; });
  }
  avg.beta0 = acc([](const ModelParams& p) { return p.beta0; });
  avg.beta1 = acc([](const ModelParams& p) { return p.beta1; });
  return avg;
}

struct MsemRun {
  ModelParams estimate;  // averaged over the trailing window
  MsemState state;
};

using MsemCallback = std::function<void(int iteration, const ModelParams&, const MsemState&)>;

// Resume bookkeeping: traces and RNG position of a prior partial run. The
// latent draws are not restored; they are re-initialized and re-burned.
struct MsemResume {
  int completed_iterations = 0;
  std::vector<double> loglik_trace;
  std::vector<double> surrogate_trace;
  std::uint64_t sweep_counter = 0;
};

inline MsemRun run_msem(const PanelDataset& data, const MsemConfig& config,
                        const std::optional<ModelParams>& init = std::nullopt,
                        int n_threads = 1, const MsemCallback& callback = nullptr,
                        const MsemResume* resume = nullptr) {
  config.validate();
  MsemState state;
  state.params = init ? *init : default_init_params(data);
  state.params.validate();
  state.n_households = data.n_households;
  state.n_draws = config.n_draws;
  state.n_periods = data.n_periods;
  state.seed = config.seed;
  {
    std::vector<double> ys(data.y.data(), data.y.data() + data.y.size());
    state.proposal_sd =
        config.mh_proposal_sd > 0 ? config.mh_proposal_sd : 0.25 * sample_sd(ys);
    if (!(state.proposal_sd > 0)) state.proposal_sd = 0.25;
  }
  state.latent.resize(static_cast<std::size_t>(data.n_households) * config.n_draws *
                      data.n_periods);
  for (int i = 0; i < data.n_households; ++i)
    for (int m = 0; m < config.n_draws; ++m)
      for (int t = 0; t < data.n_periods; ++t) state.u(i, m, t) = data.y(i, t) / 2.0;

  int s_start = 1;
  if (resume) {
    s_start = resume->completed_iterations + 1;
    state.loglik_trace = resume->loglik_trace;
    state.surrogate_trace = resume->surrogate_trace;
    state.sweep_counter = resume->sweep_counter;
    estep_sample(state, data, config, n_threads);  // re-burn, not recorded
  }

  const int window = config.averaging_window > 0 ? config.averaging_window
                                                 : (config.n_outer + 1) / 2;
  std::deque<ModelParams> recent;
  for (int s = s_start; s <= config.n_outer; ++s) {
    estep_sample(state, data, config, n_threads);
    double surrogate = 0.0;
    state.params = mstep_update(state, data, config, state.params, n_threads, &surrogate);

    double ll = 0.0;
    std::vector<double> u_path(static_cast<std::size_t>(data.n_periods));
    std::vector<double> y_path(static_cast<std::size_t>(data.n_periods));
    std::vector<double> age_path(static_cast<std::size_t>(data.n_periods));
    std::vector<int> omega_path(static_cast<std::size_t>(data.n_periods));
    for (int i = 0; i < data.n_households; ++i) {
      for (int t = 0; t < data.n_periods; ++t) {
        y_path[static_cast<std::size_t>(t)] = data.y(i, t);
        age_path[static_cast<std::size_t>(t)] = data.age(i, t);
        omega_path[static_cast<std::size_t>(t)] = data.instrument(i, t);
      }
      for (int m = 0; m < config.n_draws; ++m) {
        for (int t = 0; t < data.n_periods; ++t)
          u_path[static_cast<std::size_t>(t)] = state.u(i, m, t);
        ll += complete_data_loglik(state.params, u_path, y_path, age_path, omega_path);
      }
    }
    ll /= static_cast<double>(data.n_households) * config.n_draws;
    if (!std::isfinite(ll) || !std::isfinite(surrogate))
      throw invariant_error("msem: non-finite trace at iteration " + std::to_string(s) +
                            " (loglik=" + format_double(ll) +
                            ", surrogate=" + format_double(surrogate) + ")");
    state.loglik_trace.push_back(ll);
    state.surrogate_trace.push_back(surrogate);

    recent.push_back(state.params);
    if (static_cast<int>(recent.size()) > window) recent.pop_front();
    if (callback) callback(s, state.params, state);
  }
  return {average_params(recent), state};
}

}  // namespace lmp
