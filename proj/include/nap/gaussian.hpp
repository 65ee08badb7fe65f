#pragma once

#include <random>

#include "nap/linalg.hpp"

namespace nap {

struct GaussianSummary {
  Vector mean;
  Matrix covariance;
};

/// Sample mean and unbiased (n - 1) covariance of the rows.
GaussianSummary fit_gaussian(const Matrix& samples);

/// Cholesky factor of a symmetric PSD matrix. If factorization fails, a ridge of 1e-8
/// (then 10x larger, up to 1e-2) is added to the diagonal and `ridged` is set.
struct SpdFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  bool ridged = false;

  explicit SpdFactor(const Matrix& m);
  Matrix inverse() const;
  double log_det() const;
  Vector solve(const Vector& b) const;
};

/// Draws n rows from N(mean, covariance).
Matrix sample_gaussian(const GaussianSummary& g, std::size_t n, std::mt19937_64& rng);

double log_sum_exp(const Vector& v);

}  // namespace nap
