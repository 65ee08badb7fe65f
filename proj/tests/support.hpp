#pragma once

#include <cmath>
#include <random>

#include "nap/linalg.hpp"

namespace nap::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline Vector random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  return random_matrix(n, 1, rng, scale).col(0);
}

// Relative error with a small absolute floor so exact zeros compare cleanly.
inline bool close_rel(double a, double b, double rel, double abs_floor = 1e-7) {
  const double diff = std::abs(a - b);
  return diff <= abs_floor || diff <= rel * std::max(std::abs(a), std::abs(b));
}

}  // namespace nap::testing

namespace nap::testing {

// x1 ~ N(0, 1), x2 = x1^2 + 0.5 eps: a curved, skewed 2-D target.
inline Matrix banana_samples(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix out(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double a = z(rng);
    out(i, 0) = a;
    out(i, 1) = a * a + 0.5 * z(rng);
  }
  return out;
}

// Riemann sum of exp(log_prob) over a box centered on the standardizer shift.
template <typename Density>
double grid_mass(const Density& logp, const Vector& center, const Vector& half_width, int cells) {
  const double hx = 2.0 * half_width(0) / cells, hy = 2.0 * half_width(1) / cells;
  Matrix pts(static_cast<Eigen::Index>(cells) * cells, 2);
  Eigen::Index r = 0;
  for (int i = 0; i < cells; ++i)
    for (int j = 0; j < cells; ++j, ++r) {
      pts(r, 0) = center(0) - half_width(0) + (i + 0.5) * hx;
      pts(r, 1) = center(1) - half_width(1) + (j + 0.5) * hy;
    }
  return logp(pts).array().exp().sum() * hx * hy;
}

}  // namespace nap::testing
