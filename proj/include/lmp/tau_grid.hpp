#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "lmp/common.hpp"

namespace lmp {

// Equi-spaced quantile knots tau_1 < ... < tau_L inside (0,1). The default
// eleven-knot grid puts knots at l/12, so 1/12, 1/2 and 11/12 are all knots.
struct TauGrid {
  std::vector<double> knots;

  TauGrid() = default;

  explicit TauGrid(int n_knots) {
    if (n_knots < 2) throw invariant_error("tau_grid: need at least 2 knots");
    knots.resize(static_cast<std::size_t>(n_knots));
    for (int l = 0; l < n_knots; ++l)
      knots[static_cast<std::size_t>(l)] =
          static_cast<double>(l + 1) / static_cast<double>(n_knots + 1);
  }

  explicit TauGrid(std::vector<double> k) : knots(std::move(k)) { validate(); }

  void validate() const {
    if (knots.size() < 2) throw invariant_error("tau_grid: need at least 2 knots");
    for (std::size_t l = 0; l < knots.size(); ++l) {
      if (!(knots[l] > 0.0 && knots[l] < 1.0))
        throw invariant_error("tau_grid: knots must lie in (0,1)");
      if (l > 0 && !(knots[l] > knots[l - 1]))
        throw invariant_error("tau_grid: knots must be strictly increasing");
    }
    const double step = knots[1] - knots[0];
    for (std::size_t l = 2; l < knots.size(); ++l)
      if (std::abs((knots[l] - knots[l - 1]) - step) > 1e-9)
        throw invariant_error("tau_grid: knots must be equi-spaced");
  }

  std::size_t size() const { return knots.size(); }
  double front() const { return knots.front(); }
  double back() const { return knots.back(); }

  // Index of the knot equal to tau, or -1.
  int knot_index(double tau, double tol = 1e-12) const {
    for (std::size_t l = 0; l < knots.size(); ++l)
      if (std::abs(knots[l] - tau) <= tol) return static_cast<int>(l);
    return -1;
  }
};

}  // namespace lmp
