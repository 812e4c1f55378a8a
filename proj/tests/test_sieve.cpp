#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmp/rng.hpp"
#include "lmp/sieve.hpp"
#include "test_util.hpp"

using lmp::QuantileSieve;
using lmp::TauGrid;

namespace {

// Q(tau | x) = tau at every conditioning point
QuantileSieve identity_sieve(int n_knots = 11) {
  QuantileSieve s;
  s.grid = TauGrid(n_knots);
  s.basis.degree_lag = 0;
  s.basis.degree_age = 0;
  s.coeffs.resize(s.n_knots());
  for (std::size_t l = 0; l < s.n_knots(); ++l) s.coeffs[l] = s.grid.knots[l];
  s.tail_lambda_low = s.tail_lambda_high = 1.0;
  return s;
}

}  // namespace

TEST_CASE("rearrange sorts and is idempotent") {
  CHECK(lmp::rearrange({1.0, 3.0, 2.0}) == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(lmp::rearrange({1.0, 2.0, 3.0}) == std::vector<double>{1.0, 2.0, 3.0});
  lmp::Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> v;
    for (int i = 0; i < 17; ++i) v.push_back(rng.next_normal());
    auto r = lmp::rearrange(v);
    CHECK(lmp::rearrange(r) == r);
    // same multiset of values
    std::multiset<double> a(v.begin(), v.end()), b(r.begin(), r.end());
    CHECK(a == b);
  }
}

TEST_CASE("identity sieve evaluates the identity") {
  auto s = identity_sieve();
  CHECK(s.eval_quantile(0.5, 0.0, 0.0) == 0.5);
  for (double tau : s.grid.knots)
    CHECK_THAT(s.eval_quantile(tau, 1.7, -0.3), Catch::Matchers::WithinAbs(tau, 1e-15));
  CHECK(s.sample(0.5, 0.0, 0.0) == 0.5);
  // interior density of the identity sieve is uniform
  CHECK_THAT(s.implied_density(0.5, 0.0, 0.0), Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("exponential tail formulas") {
  auto s = identity_sieve();
  const double tau1 = 1.0 / 12.0;
  SECTION("lower quantile tail") {
    double got = s.eval_quantile(0.02, 0.0, 0.0);
    CHECK_THAT(got, Catch::Matchers::WithinAbs(tau1 + std::log(0.02 / tau1), 1e-12));
    CHECK_THAT(got, Catch::Matchers::WithinAbs(tau1 + std::log(0.24), 1e-12));
  }
  SECTION("upper density tail") {
    s.tail_lambda_high = 2.0;
    double q_top = s.grid.back();
    double v = q_top + 0.7;
    double want = 2.0 / 12.0 * std::exp(-2.0 * 0.7);
    CHECK_THAT(s.implied_density(v, 0.0, 0.0), Catch::Matchers::WithinAbs(want, 1e-12));
  }
}

TEST_CASE("implied density integrates to one") {
  lmp::Rng rng(99);
  auto s = identity_sieve();
  CHECK_THAT(test_util::integrate_density(s, 0.0, 0.0),
             Catch::Matchers::WithinAbs(1.0, 1e-6));
  for (int rep = 0; rep < 10; ++rep) {
    auto r = test_util::random_sieve(rng);
    double mass = test_util::integrate_density(r, rng.next_normal(), rng.next_normal());
    CHECK_THAT(mass, Catch::Matchers::WithinAbs(1.0, 1e-6));
  }
}

TEST_CASE("quantile is monotone in tau after rearrangement") {
  lmp::Rng rng(123);
  for (int rep = 0; rep < 40; ++rep) {
    auto s = test_util::random_sieve(rng, 11, 3, 2, 0.3);  // strong crossings
    double lag = 2.0 * rng.next_normal();
    double age = rng.next_normal();
    for (int k = 0; k < 20; ++k) {
      double t1 = rng.next_uniform();
      double t2 = rng.next_uniform();
      if (t1 > t2) std::swap(t1, t2);
      CHECK(s.eval_quantile(t1, lag, age) <= s.eval_quantile(t2, lag, age) + 1e-14);
    }
  }
}

TEST_CASE("cdf inverts the quantile function") {
  lmp::Rng rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    auto s = test_util::random_sieve(rng);
    double lag = rng.next_normal(), age = rng.next_normal();
    auto dist = s.conditional(lag, age);
    for (int k = 0; k < 50; ++k) {
      double tau = s.grid.front() + (s.grid.back() - s.grid.front()) * rng.next_uniform();
      CHECK_THAT(dist.cdf(dist.quantile(tau)), Catch::Matchers::WithinAbs(tau, 1e-9));
    }
  }
}

TEST_CASE("inverse-cdf sampler matches the implied distribution") {
  lmp::Rng rng(31);
  auto s = test_util::random_sieve(rng);
  const double lag = 0.2, age = -0.4;
  auto dist = s.conditional(lag, age);
  std::vector<double> draws;
  draws.reserve(100000);
  lmp::Rng u(77);
  for (int i = 0; i < 100000; ++i) draws.push_back(s.sample(u.next_uniform(), lag, age));
  CHECK(test_util::kolmogorov_distance(draws, dist) < 0.01);
  // a knot-level uniform maps to the knot quantile exactly
  auto knots = s.knot_values(lag, age);
  for (std::size_t l = 0; l < s.n_knots(); ++l)
    CHECK_THAT(s.sample(s.grid.knots[l], lag, age),
               Catch::Matchers::WithinAbs(knots[l], 1e-12));
}

TEST_CASE("degenerate bins get a capped density") {
  auto s = identity_sieve();
  // collapse all knots to the same value
  for (std::size_t l = 0; l < s.n_knots(); ++l) s.coeffs[l] = 0.25;
  double d = s.implied_density(0.25, 0.0, 0.0);
  CHECK(d <= (1.0 / 12.0) / 1e-10 + 1.0);
  CHECK(std::isfinite(std::log(d)));
}

TEST_CASE("json serialization round-trips bitwise") {
  lmp::Rng rng(8);
  auto s = test_util::random_sieve(rng);
  nlohmann::json j = s;
  auto back = j.get<QuantileSieve>();
  CHECK(back.coeffs == s.coeffs);
  CHECK(back.grid.knots == s.grid.knots);
  CHECK(back.tail_lambda_low == s.tail_lambda_low);
  CHECK(back.tail_lambda_high == s.tail_lambda_high);
  CHECK(back.basis.lag_std.mean == s.basis.lag_std.mean);
  CHECK(back.basis.lag_std.sd == s.basis.lag_std.sd);
  // and through a text dump as well
  auto text = nlohmann::json(s).dump();
  auto again = nlohmann::json::parse(text).get<QuantileSieve>();
  CHECK(again.coeffs == s.coeffs);
}

TEST_CASE("conditional mean matches quadrature against the density") {
  lmp::Rng rng(271);
  for (int rep = 0; rep < 10; ++rep) {
    auto s = test_util::random_sieve(rng);
    double lag = rng.next_normal(), age = rng.next_normal();
    double want =
        test_util::integrate_against_density(s, lag, age, [](double v) { return v; });
    CHECK_THAT(s.conditional_mean(lag, age), Catch::Matchers::WithinAbs(want, 1e-6));
  }
}
