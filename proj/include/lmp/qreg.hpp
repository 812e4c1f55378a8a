#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lmp/common.hpp"

namespace lmp {

// Koenker-Bassett check function rho_tau(u) = u * (tau - 1{u <= 0}).
inline double check_loss(double u, double tau) {
  return u * (tau - (u <= 0.0 ? 1.0 : 0.0));
}

struct QregProblem {
  Eigen::MatrixXd design;    // n x K
  Eigen::VectorXd response;  // n
  double tau = 0.5;
  Eigen::VectorXd weights;   // n, empty means all ones

  void validate() const {
    const auto n = design.rows();
    const auto K = design.cols();
    if (n < K) throw invariant_error("qreg: need n >= K rows");
    if (response.size() != n) throw invariant_error("qreg: response length mismatch");
    if (!(tau > 0.0 && tau < 1.0)) throw invariant_error("qreg: tau must be in (0,1)");
    if (weights.size() != 0 && weights.size() != n)
      throw invariant_error("qreg: weight length mismatch");
    if (!design.allFinite() || !response.allFinite())
      throw invariant_error("qreg: non-finite entries");
    if (weights.size() > 0 && weights.minCoeff() < 0.0)
      throw invariant_error("qreg: negative weight");
  }
};

inline double qreg_objective(const QregProblem& p, const Eigen::VectorXd& theta) {
  Eigen::VectorXd r = p.response - p.design * theta;
  double obj = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    double w = p.weights.size() ? p.weights[i] : 1.0;
    obj += w * check_loss(r[i], p.tau);
  }
  return obj;
}

namespace detail {

// One MM pass at smoothing level eps, using the identity
// rho_tau(r) = |r|/2 + (tau - 1/2) r and the quadratic majorizer of |r|
// at the previous residuals. Each step is a weighted least-squares solve.
inline bool qreg_mm_level(const QregProblem& p, double eps, int max_iter,
                          Eigen::VectorXd& theta, Eigen::VectorXd& theta_best,
                          double& obj_best) {
  const auto n = p.design.rows();
  const auto K = p.design.cols();
  Eigen::VectorXd lin = Eigen::VectorXd::Zero(K);
  for (Eigen::Index i = 0; i < n; ++i) {
    double w = p.weights.size() ? p.weights[i] : 1.0;
    lin += (p.tau - 0.5) * w * p.design.row(i).transpose();
  }
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd r = p.response - p.design * theta;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(K, K);
    Eigen::VectorXd b = lin;
    for (Eigen::Index i = 0; i < n; ++i) {
      double w = p.weights.size() ? p.weights[i] : 1.0;
      if (w == 0.0) continue;
      double m = std::max(std::abs(r[i]), eps);
      double c = w / (2.0 * m);
      A.noalias() += c * (p.design.row(i).transpose() * p.design.row(i));
      b += c * p.response[i] * p.design.row(i).transpose();
    }
    double ridge = 1e-12 * (A.trace() / static_cast<double>(K) + 1.0);
    A.diagonal().array() += ridge;
    Eigen::VectorXd theta_new = A.ldlt().solve(b);
    if (!theta_new.allFinite()) return false;
    double obj = qreg_objective(p, theta_new);
    if (obj < obj_best) {
      obj_best = obj;
      theta_best = theta_new;
    }
    double step = (theta_new - theta).lpNorm<Eigen::Infinity>();
    theta = theta_new;
    double scale = 1.0 + theta.lpNorm<Eigen::Infinity>();
    if (step < 1e-14 * scale) return true;
  }
  return false;
}

// A check-loss minimizer generically interpolates K observations. Try the
// small subsets nearest the current fit and keep any exact basic solution
// that beats the smoothed iterate.
inline void qreg_polish(const QregProblem& p, Eigen::VectorXd& theta_best,
                        double& obj_best) {
  const auto n = p.design.rows();
  const auto K = p.design.cols();
  Eigen::VectorXd r = p.response - p.design * theta_best;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return std::abs(r[a]) < std::abs(r[b]);
  });
  const auto pool = std::min<Eigen::Index>(n, K <= 3 ? 2 * K : K + 2);
  std::vector<Eigen::Index> subset(static_cast<std::size_t>(K));
  std::vector<int> mask(static_cast<std::size_t>(pool), 0);
  std::fill(mask.begin(), mask.begin() + static_cast<std::size_t>(K), 1);
  // iterate over K-subsets of the pool via mask permutations (pool is tiny)
  std::sort(mask.begin(), mask.end(), std::greater<int>());
  do {
    std::size_t s = 0;
    for (Eigen::Index i = 0; i < pool; ++i)
      if (mask[static_cast<std::size_t>(i)]) subset[s++] = order[static_cast<std::size_t>(i)];
    Eigen::MatrixXd Xs(K, K);
    Eigen::VectorXd ys(K);
    for (Eigen::Index k = 0; k < K; ++k) {
      Xs.row(k) = p.design.row(subset[static_cast<std::size_t>(k)]);
      ys[k] = p.response[subset[static_cast<std::size_t>(k)]];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xs);
    if (qr.rank() < K) continue;
    Eigen::VectorXd cand = qr.solve(ys);
    if (!cand.allFinite()) continue;
    double obj = qreg_objective(p, cand);
    if (obj < obj_best) {
      obj_best = obj;
      theta_best = cand;
    }
  } while (std::prev_permutation(mask.begin(), mask.end()));
}

}  // namespace detail

// Weighted check-loss minimization. Smoothed-majorization descent with a
// decreasing smoothing parameter, then a basic-solution polish; returns the
// iterate with the best exact objective seen. Deterministic.
inline Eigen::VectorXd solve_qreg(const QregProblem& p, double tol = 1e-8,
                                  const Eigen::VectorXd* warm_start = nullptr) {
  p.validate();
  const auto K = p.design.cols();
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(p.design);
    if (qr.rank() < K) throw invariant_error("qreg: rank-deficient design");
  }
  Eigen::VectorXd theta;
  if (warm_start && warm_start->size() == K) {
    theta = *warm_start;
  } else {
    Eigen::MatrixXd A = p.design.transpose() * p.design;
    A.diagonal().array() += 1e-10 * (A.trace() / static_cast<double>(K) + 1.0);
    theta = A.ldlt().solve(p.design.transpose() * p.response);
  }
  Eigen::VectorXd theta_best = theta;
  double obj_best = qreg_objective(p, theta);

  Eigen::VectorXd r0 = p.response - p.design * theta;
  double scale = std::max(r0.cwiseAbs().maxCoeff(), 1e-8);
  // the smoothing gap is bounded by n * eps, so the floor tracks tol
  double eps_floor =
      scale * std::min(1e-13, tol / (10.0 * static_cast<double>(p.design.rows())));
  for (double eps = 0.1 * scale; eps > eps_floor; eps *= 0.2)
    detail::qreg_mm_level(p, eps, 80, theta, theta_best, obj_best);
  detail::qreg_polish(p, theta_best, obj_best);
  if (!std::isfinite(obj_best))
    throw invariant_error("qreg: solver failed to converge");
  return theta_best;
}

struct LogitProblem {
  Eigen::VectorXd covariate;
  Eigen::VectorXd outcome;  // each entry 0 or 1

  void validate() const {
    const auto n = covariate.size();
    if (outcome.size() != n || n < 2)
      throw invariant_error("qreg: logistic problem needs n >= 2 paired rows");
    bool has0 = false, has1 = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (outcome[i] == 0.0) has0 = true;
      else if (outcome[i] == 1.0) has1 = true;
      else throw invariant_error("qreg: logistic outcome must be 0 or 1");
    }
    if (!has0 || !has1)
      throw invariant_error("qreg: logistic outcome has a single class");
    double lo = covariate.minCoeff(), hi = covariate.maxCoeff();
    if (!(hi > lo)) throw invariant_error("qreg: constant logistic covariate");
    if (!covariate.allFinite()) throw invariant_error("qreg: non-finite covariate");
  }
};

namespace detail {

// Separation certificate: the fitted line classifies every observation
// strictly and with a wide margin, so the likelihood has no interior
// maximum (Albert-Anderson) and the gradient only vanished on the plateau.
inline bool logistic_separated(const LogitProblem& p, double beta0, double beta1) {
  double min_margin = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < p.covariate.size(); ++i) {
    double eta = beta0 + beta1 * p.covariate[i];
    double margin = (2.0 * p.outcome[i] - 1.0) * eta;
    if (margin <= 0.0) return false;
    min_margin = std::min(min_margin, margin);
  }
  return min_margin > 7.0;
}

}  // namespace detail

inline double logistic_loglik(const LogitProblem& p, double beta0, double beta1) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < p.covariate.size(); ++i) {
    double eta = beta0 + beta1 * p.covariate[i];
    // log(1+e^eta) computed stably on both sides
    double log1pe = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    ll += p.outcome[i] * eta - log1pe;
  }
  return ll;
}

// Two-parameter logistic MLE by damped Newton with step-halving.
inline std::pair<double, double> fit_logistic(const LogitProblem& p, double tol = 1e-8,
                                              std::vector<double>* loglik_trace = nullptr) {
  p.validate();
  const auto n = p.covariate.size();
  Eigen::Vector2d beta(0.0, 0.0);
  double ll = logistic_loglik(p, beta[0], beta[1]);
  if (loglik_trace) loglik_trace->push_back(ll);
  for (int it = 0; it < 100; ++it) {
    Eigen::Vector2d grad = Eigen::Vector2d::Zero();
    Eigen::Matrix2d hess = Eigen::Matrix2d::Zero();
    for (Eigen::Index i = 0; i < n; ++i) {
      double u = p.covariate[i];
      double eta = beta[0] + beta[1] * u;
      double pr = 1.0 / (1.0 + std::exp(-eta));
      double res = p.outcome[i] - pr;
      grad[0] += res;
      grad[1] += res * u;
      double w = pr * (1.0 - pr);
      hess(0, 0) += w;
      hess(0, 1) += w * u;
      hess(1, 1) += w * u * u;
    }
    hess(1, 0) = hess(0, 1);
    if (grad.lpNorm<Eigen::Infinity>() < tol) {
      if (detail::logistic_separated(p, beta[0], beta[1]))
        throw invariant_error("qreg: logistic fit hit perfect separation");
      return {beta[0], beta[1]};
    }
    hess.diagonal().array() += 1e-12 * (hess.trace() + 1.0);
    Eigen::Vector2d step = hess.ldlt().solve(grad);
    double t = 1.0;
    Eigen::Vector2d cand = beta + step;
    double ll_cand = logistic_loglik(p, cand[0], cand[1]);
    int halvings = 0;
    while (!(ll_cand >= ll) && halvings < 60) {
      t *= 0.5;
      cand = beta + t * step;
      ll_cand = logistic_loglik(p, cand[0], cand[1]);
      ++halvings;
    }
    beta = cand;
    ll = ll_cand;
    if (loglik_trace) loglik_trace->push_back(ll);
    if (beta.lpNorm<Eigen::Infinity>() > 1e3)
      throw invariant_error("qreg: logistic fit diverged (perfect separation?)");
  }
  Eigen::Vector2d grad = Eigen::Vector2d::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    double eta = beta[0] + beta[1] * p.covariate[i];
    double res = p.outcome[i] - 1.0 / (1.0 + std::exp(-eta));
    grad[0] += res;
    grad[1] += res * p.covariate[i];
  }
  if (grad.lpNorm<Eigen::Infinity>() >= std::max(tol, 1e-6))
    throw invariant_error("qreg: logistic fit did not converge in 100 iterations");
  if (detail::logistic_separated(p, beta[0], beta[1]))
    throw invariant_error("qreg: logistic fit hit perfect separation");
  return {beta[0], beta[1]};
}

}  // namespace lmp
