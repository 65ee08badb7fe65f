#include "nap/gaussian.hpp"

#include <cmath>

namespace nap {

GaussianSummary fit_gaussian(const Matrix& samples) {
  require_shape(samples.rows() >= 2, "gaussian fit needs at least two rows");
  GaussianSummary g;
  g.mean = samples.colwise().mean().transpose();
  const Matrix centered = samples.rowwise() - g.mean.transpose();
  g.covariance = (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
  return g;
}

SpdFactor::SpdFactor(const Matrix& m) {
  require_shape(m.rows() == m.cols() && m.rows() > 0, "SPD factor needs a square matrix");
  Eigen::MatrixXd a = m;
  llt.compute(a);
  double ridge = 1e-8;
  while (llt.info() != Eigen::Success || !llt.matrixL().toDenseMatrix().allFinite() ||
         (llt.matrixL().toDenseMatrix().diagonal().array() <= 0.0).any()) {
    if (ridge > 1e-2) throw std::runtime_error("matrix is not positive semi-definite");
    Eigen::MatrixXd r = m;
    r.diagonal().array() += ridge;
    llt.compute(r);
    ridged = true;
    ridge *= 10.0;
  }
}

Matrix SpdFactor::inverse() const {
  const auto n = llt.rows();
  return llt.solve(Eigen::MatrixXd::Identity(n, n));
}

double SpdFactor::log_det() const {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

Vector SpdFactor::solve(const Vector& b) const { return llt.solve(b); }

Matrix sample_gaussian(const GaussianSummary& g, std::size_t n, std::mt19937_64& rng) {
  const SpdFactor f(g.covariance);
  const Eigen::MatrixXd lower = f.llt.matrixL();
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(static_cast<Eigen::Index>(n), g.mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  Matrix out = z * lower.transpose();
  out.rowwise() += g.mean.transpose();
  return out;
}

double log_sum_exp(const Vector& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace nap
