#pragma once

// Closed-form references used by the unit and acceptance suites.

#include <cmath>

#include "iatt/gradfield.hpp"

namespace iatt::testing {

// Score of N(0,1) data convolved with N(0, sigma^2): -x / (1 + sigma^2).
inline double gaussian_score(double x_tilde, double sigma) { return -x_tilde / (1.0 + sigma * sigma); }

// Aggregate relative error sum|s - s*| / sum|s*| over a grid of x~ in
// [-2, 2] (41 points) and t in [epsilon, T] (21 levels).
inline double gaussian_score_error(const ScoreNet& net) {
  const NoiseSchedule& sch = net.schedule();
  Matrix x(41, 1);
  for (int i = 0; i <= 40; ++i) x(i, 0) = -2.0 + 0.1 * i;
  double num = 0.0;
  double den = 0.0;
  for (int k = 0; k <= 20; ++k) {
    const double t = sch.epsilon + (sch.T - sch.epsilon) * k / 20.0;
    const Matrix s = net.score(x, t);
    for (int i = 0; i <= 40; ++i) {
      const double expect = gaussian_score(x(i, 0), sch.sigma(t));
      num += std::abs(s(i, 0) - expect);
      den += std::abs(expect);
    }
  }
  return num / den;
}

inline GFDataset standard_normal_dataset(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  GFDataset d{FieldKind::custom, Matrix(n, 1)};
  for (int i = 0; i < n; ++i) d.samples(i, 0) = normal(rng);
  return d;
}

}  // namespace iatt::testing
