#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "nap/flow.hpp"
#include "nap/gaussian.hpp"
#include "nap/linalg.hpp"
#include "nap/sampler.hpp"

namespace nap {

/// A normalized density on R^D with a known finite supremum and exact sampling.
class DensityModel {
 public:
  virtual ~DensityModel() = default;
  virtual std::size_t dim() const = 0;
  virtual Vector log_prob(const Matrix& thetas) const = 0;
  /// Must satisfy log_prob(x) <= log_prob_upper_bound() exactly, for every x.
  virtual double log_prob_upper_bound() const = 0;
  virtual Matrix sample(std::size_t n, std::mt19937_64& rng) const = 0;
};

class FlowDensity final : public DensityModel {
 public:
  explicit FlowDensity(FlowModel model) : model_(std::move(model)) {}
  std::size_t dim() const override { return model_.dim(); }
  Vector log_prob(const Matrix& thetas) const override { return model_.log_prob(thetas); }
  double log_prob_upper_bound() const override { return model_.log_prob_upper_bound(); }
  Matrix sample(std::size_t n, std::mt19937_64& rng) const override { return model_.sample(n, rng); }
  const FlowModel& model() const { return model_; }

 private:
  FlowModel model_;
};

/// Product of independent normals; stands in for a flow when the exact answer is needed.
class DiagonalGaussianDensity final : public DensityModel {
 public:
  DiagonalGaussianDensity(Vector mean, Vector variance);
  std::size_t dim() const override { return static_cast<std::size_t>(mean_.size()); }
  Vector log_prob(const Matrix& thetas) const override;
  double log_prob_upper_bound() const override { return log_norm_; }
  Matrix sample(std::size_t n, std::mt19937_64& rng) const override;

 private:
  Vector mean_;
  Vector variance_;
  double log_norm_;
};

/// The server-side collection of subposterior approximations.
struct SubposteriorEnsemble {
  std::vector<std::shared_ptr<const DensityModel>> members;
  std::vector<std::string> labels;
  std::size_t bytes_ingested = 0;

  /// Deserializes worker blobs; records the total byte count.
  static SubposteriorEnsemble from_blobs(const std::vector<std::vector<std::uint8_t>>& blobs);

  std::size_t size() const { return members.size(); }
  std::size_t dim() const;
  void validate() const;
};

struct WeightedSamples {
  Matrix draws;        // T x D
  Vector log_weights;  // unnormalized
  Vector weights;      // normalized, sum to one
  std::size_t proposal = 0;
  double log_bound = 0.0;  // sum over non-proposal members of their log upper bounds

  /// (sum w)^2 / sum w^2
  double ess() const;
};

class DegenerateWeightsError : public std::runtime_error {
 public:
  DegenerateWeightsError(const std::string& what, long installment)
      : std::runtime_error(what), installment_(installment) {}
  long installment() const { return installment_; }

 private:
  long installment_;
};

/// Raised if a log-weight exceeds the deterministic bound. Indicates a bug, never data.
class WeightBoundViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// log w_t = sum over k' != k of log p_k'(theta_t), normalized by log-sum-exp. Asserts
/// every log w_t <= sum over k' != k of the members' log upper bounds.
WeightedSamples nap_weights(const SubposteriorEnsemble& ensemble, std::size_t proposal,
                            Matrix draws, std::size_t threads = 1);

struct NapSirMode {
  enum class Kind { single, installments };
  Kind kind = Kind::installments;
  std::size_t proposal = 0;  // for Kind::single

  static NapSirMode single(std::size_t k) { return {Kind::single, k}; }
  static NapSirMode installments() { return {Kind::installments, 0}; }
};

struct NapSirResult {
  Matrix samples;  // R x D
  std::vector<double> weight_ess;  // one per installment
  std::vector<std::string> warnings;
  double min_weight_ess() const;
};

/// Sampling/importance resampling from the product of ensemble densities. In installment
/// mode every member serves once as the proposal with ceil(T/K) candidates and ceil(R/K)
/// resampled draws; the concatenation is truncated to R rows.
NapSirResult nap_sir(const SubposteriorEnsemble& ensemble, std::size_t t, std::size_t r,
                     std::uint64_t seed, NapSirMode mode = NapSirMode::installments(),
                     std::size_t threads = 1);

struct MergeResult {
  Matrix samples;
  GaussianSummary summary;  // parametric only
  std::vector<std::string> warnings;
};

/// Consensus Monte Carlo: row-wise precision-weighted averages of the K sample sets.
MergeResult consensus_merge(const std::vector<Matrix>& sample_sets);

/// Product of per-set Gaussian fits, with `r` exact draws from it.
MergeResult parametric_merge(const std::vector<Matrix>& sample_sets, std::size_t r,
                             std::uint64_t seed);

/// Closed-form product of Gaussians: precision-weighted mean.
GaussianSummary gaussian_product(const std::vector<GaussianSummary>& factors,
                                 std::vector<std::string>* warnings = nullptr);

}  // namespace nap
