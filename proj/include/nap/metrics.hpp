#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nap/linalg.hpp"

namespace nap {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Euclidean distance between the two sample means divided by sqrt(D).
double rmse(const Matrix& approx, const Matrix& truth);

/// sqrt( sum_r |approx_r - m|^2 / sum_r |truth_r - m|^2 ), m the truth mean. Sums run over
/// each set's own rows, so sets of different sizes are compared per row.
double concentration_ratio(const Matrix& approx, const Matrix& truth);

/// KL( N(approx fit) || N(truth fit) ). Sets `ridged` when the truth covariance needed a ridge.
double gaussian_kl(const Matrix& approx, const Matrix& truth, bool* ridged = nullptr);

struct CommunicationReport {
  std::size_t nap_bytes = 0;             // sum of serialized flow sizes
  std::size_t sample_shipping_bytes = 0;  // S * K * D * 8
};

CommunicationReport communication_report(const std::vector<std::vector<std::uint8_t>>& blobs,
                                         std::size_t samples_per_shard, std::size_t dim);

struct MetricsReport {
  std::string method;
  double rmse = 0.0;
  double concentration_ratio = 0.0;
  double kl_divergence = 0.0;
  std::optional<double> weight_ess;
  std::size_t bytes_communicated = 0;
  std::map<std::string, double> wall_times;  // seconds per stage
  std::vector<std::string> warnings;
};

MetricsReport compare(const std::string& method, const Matrix& approx, const Matrix& truth);

}  // namespace nap
