#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace nap {

/// Dense row-major float64 matrix. Batches of points are stored one point per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when optimization produces a non-finite quantity.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, long iteration)
      : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"),
        iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace nap
