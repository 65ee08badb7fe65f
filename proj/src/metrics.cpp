#include "nap/metrics.hpp"

#include <cmath>

#include "nap/gaussian.hpp"

namespace nap {

namespace {

void check_pair(const Matrix& approx, const Matrix& truth) {
  if (approx.rows() == 0 || truth.rows() == 0) throw MetricError("metric needs nonempty sample sets");
  if (approx.cols() != truth.cols()) throw MetricError("sample sets differ in dimension");
}

}  // namespace

double rmse(const Matrix& approx, const Matrix& truth) {
  check_pair(approx, truth);
  const Vector diff = approx.colwise().mean() - truth.colwise().mean();
  return diff.norm() / std::sqrt(static_cast<double>(approx.cols()));
}

double concentration_ratio(const Matrix& approx, const Matrix& truth) {
  check_pair(approx, truth);
  const Eigen::RowVectorXd m = truth.colwise().mean();
  const double num = (approx.rowwise() - m).rowwise().squaredNorm().mean();
  const double den = (truth.rowwise() - m).rowwise().squaredNorm().mean();
  if (!(den > 0.0)) throw MetricError("ground truth has zero dispersion");
  return std::sqrt(num / den);
}

double gaussian_kl(const Matrix& approx, const Matrix& truth, bool* ridged) {
  check_pair(approx, truth);
  const auto d = approx.cols();
  if (approx.rows() <= d || truth.rows() <= d) throw MetricError("KL needs more samples than dimensions");
  const GaussianSummary a = fit_gaussian(approx);
  const GaussianSummary t = fit_gaussian(truth);
  const SpdFactor ft(t.covariance);
  const SpdFactor fa(a.covariance);
  if (ridged != nullptr) *ridged = ft.ridged;
  const Eigen::MatrixXd sa = a.covariance;
  const double trace = ft.llt.solve(sa).trace();
  const Vector diff = t.mean - a.mean;
  const double maha = diff.dot(ft.solve(diff));
  return 0.5 * (trace + maha - static_cast<double>(d) + ft.log_det() - fa.log_det());
}

CommunicationReport communication_report(const std::vector<std::vector<std::uint8_t>>& blobs,
                                         std::size_t samples_per_shard, std::size_t dim) {
  CommunicationReport r;
  for (const auto& b : blobs) r.nap_bytes += b.size();
  r.sample_shipping_bytes = samples_per_shard * blobs.size() * dim * sizeof(double);
  return r;
}

MetricsReport compare(const std::string& method, const Matrix& approx, const Matrix& truth) {
  MetricsReport m;
  m.method = method;
  m.rmse = rmse(approx, truth);
  m.concentration_ratio = concentration_ratio(approx, truth);
  bool ridged = false;
  m.kl_divergence = gaussian_kl(approx, truth, &ridged);
  if (ridged) m.warnings.push_back("truth covariance singular; ridge added");
  return m;
}

}  // namespace nap
