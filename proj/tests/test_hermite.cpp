#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lmp/hermite.hpp"
#include "lmp/rng.hpp"

using lmp::hermite;
using lmp::hermite_deriv;
using lmp::HermiteBasis;

namespace {

// explicit probabilists' polynomials, the oracle for the recurrence
double he_explicit(int n, double x) {
  switch (n) {
    case 0: return 1.0;
    case 1: return x;
    case 2: return x * x - 1.0;
    case 3: return x * x * x - 3.0 * x;
    case 4: return x * x * x * x - 6.0 * x * x + 3.0;
    default: return std::nan("");
  }
}

}  // namespace

TEST_CASE("hermite recurrence matches the explicit polynomials") {
  CHECK(hermite(2, 1.0) == 0.0);
  CHECK(hermite(3, 2.0) == 2.0);
  lmp::Rng rng(42);
  for (int rep = 0; rep < 200; ++rep) {
    double x = 10.0 * (rng.next_uniform() - 0.5);  // |x| <= 5
    for (int n = 0; n <= 4; ++n) {
      double want = he_explicit(n, x);
      double got = hermite(n, x);
      CHECK_THAT(got, Catch::Matchers::WithinRel(want, 1e-12) ||
                          Catch::Matchers::WithinAbs(want, 1e-12));
    }
  }
}

TEST_CASE("hermite derivative identity") {
  lmp::Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    double x = 6.0 * (rng.next_uniform() - 0.5);
    for (int n = 1; n <= 4; ++n) {
      CHECK_THAT(hermite_deriv(n, x),
                 Catch::Matchers::WithinRel(n * hermite(n - 1, x), 1e-12) ||
                     Catch::Matchers::WithinAbs(n * hermite(n - 1, x), 1e-12));
    }
  }
}

TEST_CASE("basis at the standardized origin") {
  HermiteBasis basis;
  basis.degree_lag = 2;
  basis.degree_age = 1;
  basis.lag_std = {1.5, 2.0};
  basis.age_std = {40.0, 10.0};
  auto phi = basis.eval(1.5, 40.0);  // both inputs at their means
  REQUIRE(phi.size() == 6);
  CHECK(phi[0] == 1.0);   // He_0 He_0
  CHECK(phi[1] == 0.0);   // He_1(0)
  CHECK(phi[2] == -1.0);  // He_2(0)
  CHECK(phi[3] == 0.0);
  CHECK(phi[4] == 0.0);
  CHECK(phi[5] == 0.0);
}

TEST_CASE("basis entry zero is the constant term") {
  HermiteBasis basis;
  basis.degree_lag = 3;
  basis.degree_age = 2;
  basis.lag_std = {0.3, 0.7};
  basis.age_std = {-1.0, 2.5};
  lmp::Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    auto phi = basis.eval(rng.next_normal(), rng.next_normal());
    REQUIRE(phi.size() == 12);
    CHECK(phi[0] == 1.0);
  }
}

TEST_CASE("basis lag derivative matches finite differences") {
  HermiteBasis basis;
  basis.degree_lag = 3;
  basis.degree_age = 2;
  basis.lag_std = {0.1, 0.8};
  basis.age_std = {0.0, 1.3};
  lmp::Rng rng(11);
  for (int rep = 0; rep < 30; ++rep) {
    double u = rng.next_normal();
    double age = rng.next_normal();
    auto d = basis.eval_dlag(u, age);
    const double h = 1e-6;
    auto hi = basis.eval(u + h, age);
    auto lo = basis.eval(u - h, age);
    for (std::size_t k = 0; k < d.size(); ++k) {
      double fd = (hi[k] - lo[k]) / (2.0 * h);
      CHECK_THAT(d[k], Catch::Matchers::WithinAbs(fd, 1e-6 * (1.0 + std::abs(fd))));
    }
  }
}
