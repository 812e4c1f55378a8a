#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "lmp/qreg.hpp"
#include "lmp/rng.hpp"

using lmp::check_loss;
using lmp::fit_logistic;
using lmp::LogitProblem;
using lmp::QregProblem;
using lmp::qreg_objective;
using lmp::solve_qreg;

namespace {

// Exhaustive basic-solution search: a check-loss minimum is attained at a
// fit that interpolates K observations, so enumerating all K-subsets gives
// the exact optimal objective on small problems.
double oracle_best_objective(const QregProblem& p) {
  const auto n = p.design.rows();
  const auto K = p.design.cols();
  double best = std::numeric_limits<double>::infinity();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(K), 0);
  auto evaluate = [&](const std::vector<Eigen::Index>& subset) {
    Eigen::MatrixXd Xs(K, K);
    Eigen::VectorXd ys(K);
    for (Eigen::Index k = 0; k < K; ++k) {
      Xs.row(k) = p.design.row(subset[static_cast<std::size_t>(k)]);
      ys[k] = p.response[subset[static_cast<std::size_t>(k)]];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xs);
    if (qr.rank() < K) return;
    Eigen::VectorXd theta = qr.solve(ys);
    if (theta.allFinite()) best = std::min(best, qreg_objective(p, theta));
  };
  // K is 1 or 2 in these tests
  if (K == 1) {
    for (Eigen::Index i = 0; i < n; ++i) evaluate({i});
  } else {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) evaluate({i, j});
  }
  return best;
}

}  // namespace

TEST_CASE("check loss values and convexity") {
  CHECK(check_loss(2.0, 0.5) == 1.0);
  CHECK_THAT(check_loss(-1.0, 0.9), Catch::Matchers::WithinAbs(0.1, 1e-15));
  CHECK(check_loss(0.0, 0.3) == 0.0);
  CHECK(check_loss(0.0, 0.7) == 0.0);
  lmp::Rng rng(2);
  for (int rep = 0; rep < 300; ++rep) {
    double a = 4.0 * rng.next_normal();
    double b = 4.0 * rng.next_normal();
    double lam = rng.next_uniform();
    double tau = rng.next_uniform();
    double lhs = check_loss(lam * a + (1.0 - lam) * b, tau);
    double rhs = lam * check_loss(a, tau) + (1.0 - lam) * check_loss(b, tau);
    CHECK(lhs <= rhs + 1e-12);
    CHECK(check_loss(a, tau) >= 0.0);
  }
}

TEST_CASE("intercept-only solves are sample quantiles") {
  QregProblem p;
  p.design = Eigen::MatrixXd::Ones(3, 1);
  p.response.resize(3);
  p.response << 1.0, 2.0, 3.0;

  SECTION("median") {
    p.tau = 0.5;
    auto theta = solve_qreg(p);
    CHECK_THAT(theta[0], Catch::Matchers::WithinAbs(2.0, 1e-9));
  }
  SECTION("first quartile, checked against a brute-force scan") {
    p.tau = 0.25;
    auto theta = solve_qreg(p);
    // scan a fine grid of candidate intercepts for the minimum
    double best_c = 0.0, best_obj = std::numeric_limits<double>::infinity();
    for (double c = 0.0; c <= 4.0; c += 1e-4) {
      Eigen::VectorXd t(1);
      t << c;
      double obj = qreg_objective(p, t);
      if (obj < best_obj) {
        best_obj = obj;
        best_c = c;
      }
    }
    CHECK_THAT(best_c, Catch::Matchers::WithinAbs(1.0, 1e-3));
    CHECK_THAT(theta[0], Catch::Matchers::WithinAbs(1.0, 1e-6));
    CHECK(qreg_objective(p, theta) <= best_obj + 1e-9);
  }
}

TEST_CASE("exact linear data gives zero loss") {
  QregProblem p;
  p.design.resize(6, 2);
  p.response.resize(6);
  for (int i = 0; i < 6; ++i) {
    double x = 0.5 * i - 1.0;
    p.design(i, 0) = 1.0;
    p.design(i, 1) = x;
    p.response[i] = 3.0 * x;
  }
  p.tau = 0.3;
  auto theta = solve_qreg(p);
  CHECK(qreg_objective(p, theta) < 1e-10);
  CHECK_THAT(theta[0], Catch::Matchers::WithinAbs(0.0, 1e-6));
  CHECK_THAT(theta[1], Catch::Matchers::WithinAbs(3.0, 1e-6));
}

TEST_CASE("solver matches the basic-solution oracle on random instances") {
  lmp::Rng rng(404);
  for (int rep = 0; rep < 60; ++rep) {
    const int n = 5 + static_cast<int>(rng.next_uniform() * 16);  // 5..20
    const int K = rep % 2 ? 2 : 1;
    QregProblem p;
    p.design.resize(n, K);
    p.response.resize(n);
    for (int i = 0; i < n; ++i) {
      p.design(i, 0) = 1.0;
      if (K == 2) p.design(i, 1) = rng.next_normal();
      p.response[i] = rng.next_normal() + (K == 2 ? 0.7 * p.design(i, 1) : 0.0);
    }
    p.tau = 0.05 + 0.9 * rng.next_uniform();
    auto theta = solve_qreg(p);
    double oracle = oracle_best_objective(p);
    CHECK(qreg_objective(p, theta) <= oracle + 1e-6 * (1.0 + oracle));
  }
}

TEST_CASE("solution beats random candidates") {
  lmp::Rng rng(55);
  QregProblem p;
  const int n = 40, K = 3;
  p.design.resize(n, K);
  p.response.resize(n);
  for (int i = 0; i < n; ++i) {
    p.design(i, 0) = 1.0;
    p.design(i, 1) = rng.next_normal();
    p.design(i, 2) = rng.next_normal();
    p.response[i] = 0.5 + p.design(i, 1) - 0.3 * p.design(i, 2) + 0.4 * rng.next_normal();
  }
  p.tau = 0.7;
  auto theta = solve_qreg(p);
  double obj = qreg_objective(p, theta);
  for (int rep = 0; rep < 1000; ++rep) {
    Eigen::VectorXd cand(K);
    for (int k = 0; k < K; ++k) cand[k] = theta[k] + 0.5 * rng.next_normal();
    CHECK(obj <= qreg_objective(p, cand) + 1e-12);
  }
}

TEST_CASE("weighted problems scale like duplicated rows") {
  lmp::Rng rng(91);
  const int n = 25;
  QregProblem once;
  once.design.resize(n, 2);
  once.response.resize(n);
  once.weights = Eigen::VectorXd::Constant(n, 2.0);
  for (int i = 0; i < n; ++i) {
    once.design(i, 0) = 1.0;
    once.design(i, 1) = rng.next_normal();
    once.response[i] = 1.0 - 0.5 * once.design(i, 1) + 0.3 * rng.next_normal();
  }
  once.tau = 0.4;
  QregProblem twice = once;
  twice.weights = Eigen::VectorXd::Ones(n);
  auto t1 = solve_qreg(once);
  auto t2 = solve_qreg(twice);
  CHECK_THAT(qreg_objective(twice, t1), Catch::Matchers::WithinAbs(qreg_objective(twice, t2), 1e-8));
}

TEST_CASE("rank-deficient design is rejected") {
  QregProblem p;
  p.design = Eigen::MatrixXd::Ones(10, 2);  // two identical columns
  p.response = Eigen::VectorXd::LinSpaced(10, 0.0, 1.0);
  p.tau = 0.5;
  CHECK_THROWS_AS(solve_qreg(p), lmp::invariant_error);
}

TEST_CASE("logistic fit on independent data finds a flat slope") {
  lmp::Rng rng(12);
  const int n = 4000;
  LogitProblem p;
  p.covariate.resize(n);
  p.outcome.resize(n);
  for (int i = 0; i < n; ++i) {
    p.covariate[i] = rng.next_normal();
    p.outcome[i] = rng.next_bernoulli(0.5) ? 1.0 : 0.0;
  }
  auto [b0, b1] = fit_logistic(p);
  // crude SE for the slope under the null is 2/sqrt(n)
  CHECK(std::abs(b1) < 3.0 * 2.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("logistic fit recovers the generating coefficients") {
  lmp::Rng rng(13);
  const int n = 10000;
  LogitProblem p;
  p.covariate.resize(n);
  p.outcome.resize(n);
  for (int i = 0; i < n; ++i) {
    double u = rng.next_normal();
    p.covariate[i] = u;
    double pr = 1.0 / (1.0 + std::exp(-u));  // beta0 = 0, beta1 = 1
    p.outcome[i] = rng.next_bernoulli(pr) ? 1.0 : 0.0;
  }
  auto [b0, b1] = fit_logistic(p);
  CHECK_THAT(b0, Catch::Matchers::WithinAbs(0.0, 0.1));
  CHECK_THAT(b1, Catch::Matchers::WithinAbs(1.0, 0.1));

  SECTION("flipping labels negates both coefficients") {
    LogitProblem q = p;
    for (int i = 0; i < n; ++i) q.outcome[i] = 1.0 - q.outcome[i];
    auto [c0, c1] = fit_logistic(q);
    CHECK_THAT(c0, Catch::Matchers::WithinAbs(-b0, 1e-6));
    CHECK_THAT(c1, Catch::Matchers::WithinAbs(-b1, 1e-6));
  }
}

TEST_CASE("logistic log-likelihood is non-decreasing over iterations") {
  lmp::Rng rng(14);
  const int n = 500;
  LogitProblem p;
  p.covariate.resize(n);
  p.outcome.resize(n);
  for (int i = 0; i < n; ++i) {
    double u = rng.next_normal();
    p.covariate[i] = u;
    p.outcome[i] = rng.next_bernoulli(1.0 / (1.0 + std::exp(-0.5 - 2.0 * u))) ? 1.0 : 0.0;
  }
  std::vector<double> trace;
  fit_logistic(p, 1e-8, &trace);
  REQUIRE(trace.size() >= 2);
  for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] >= trace[i - 1] - 1e-12);
}

TEST_CASE("logistic degenerate inputs are rejected") {
  LogitProblem p;
  p.covariate.resize(4);
  p.outcome.resize(4);
  p.covariate << -2.0, -1.0, 1.0, 2.0;
  SECTION("single class") {
    p.outcome << 1.0, 1.0, 1.0, 1.0;
    CHECK_THROWS_AS(fit_logistic(p), lmp::invariant_error);
  }
  SECTION("perfect separation") {
    p.outcome << 0.0, 0.0, 1.0, 1.0;
    CHECK_THROWS_AS(fit_logistic(p), lmp::invariant_error);
  }
  SECTION("constant covariate") {
    p.covariate.setConstant(1.0);
    p.outcome << 0.0, 1.0, 0.0, 1.0;
    CHECK_THROWS_AS(fit_logistic(p), lmp::invariant_error);
  }
}
