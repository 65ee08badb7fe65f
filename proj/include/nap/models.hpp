#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "nap/gaussian.hpp"
#include "nap/linalg.hpp"
#include "nap/sampler.hpp"

namespace nap {

enum class ModelKind {
  warped_gaussian,
  gamma_mixture,
  logistic_regression,
  rare_categorical,
  gaussian_location,  // conjugate 2-D location model with known covariance
};

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Generative model plus prior. Use the factory functions for the experiment defaults.
struct ModelSpec {
  ModelKind kind = ModelKind::warped_gaussian;

  // warped Gaussian: y ~ N(mu1 + mu2^2, sigma2); N(0, prior_var) on both means
  double mu1 = 0.5;
  double mu2 = 0.0;
  double sigma2 = 2.0;
  double prior_var = 25.0;

  // mixture of gammas: 0.5 Gamma(alpha1, rate beta1) + 0.5 Gamma(alpha2, rate beta2);
  // Gamma(shape, scale) priors on the alphas
  double alpha1 = 0.5;
  double alpha2 = 1.0;
  double beta1 = 1.0;
  double beta2 = 1.0;
  double alpha_prior_shape = 0.5;
  double alpha_prior_scale = 1.0;

  // logistic regression with p covariates, x ~ N(0, Sigma), Sigma_ij = corr^|i-j|;
  // labels are sigmoid(theta'x + theta0) rounded at 0.5; N(0, coef_prior_var) priors
  std::size_t p = 10;
  double intercept = -3.0;
  double coef_var = 0.25;
  double covariate_corr = 0.9;
  double coef_prior_var = 5.0;

  // rare categorical: Categorical(lambda), Dirichlet(dirichlet_prior) prior
  std::vector<double> lambda;
  std::vector<double> dirichlet_prior = {1.0, 1.0, 1.0};

  // Gaussian location: y ~ N(location, obs_cov), N(0, prior_var I) prior
  std::vector<double> location = {1.0, -1.0};
  std::vector<double> obs_cov = {1.0, 0.5, 0.5, 1.0};  // row-major 2x2

  static ModelSpec warped_gaussian();
  static ModelSpec gamma_mixture();
  static ModelSpec logistic_regression(std::size_t p);
  /// lambda1 = lambda2 = 2K/N, so each of K shards expects two of each rare outcome.
  static ModelSpec rare_categorical(std::size_t n, std::size_t k);
  static ModelSpec gaussian_location();

  /// Throws std::invalid_argument when a parameter is out of its domain.
  void validate() const;
  /// Unconstrained parameter dimension D.
  std::size_t param_dim() const;
  std::vector<std::string> param_names() const;
};

/// Observations as a row matrix. Record layouts:
///   warped_gaussian, gamma_mixture: [y]
///   logistic_regression: [y, x_1..x_p]
///   rare_categorical: [category in {0, 1, 2}]
///   gaussian_location: [y_1, y_2]
struct Dataset {
  Matrix rows;
  std::vector<std::string> columns;
  std::string label;
  Vector true_params;  // constrained; logistic draws its coefficients per dataset

  std::size_t size() const { return static_cast<std::size_t>(rows.rows()); }
};

struct ShardedData {
  std::vector<Dataset> shards;
  std::uint64_t partition_seed = 0;
};

class PartitionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Dataset generate(const ModelSpec& spec, std::size_t n, std::mt19937_64& rng);

/// Random permutation dealt round-robin into K shards.
ShardedData shard(const Dataset& data, std::size_t k, std::uint64_t seed);

/// Subposterior on unconstrained parameters:
///   (1/K) * [log prior(to_constrained(u)) + log|J(u)|] + sum over shard of log lik.
/// The unconstraining Jacobian belongs to the prior of the unconstrained parameterization,
/// so it is fractionated with it and the product over shards is the full posterior.
TargetModel subposterior(const ModelSpec& spec, const Dataset& shard, std::size_t k);

/// Full-data posterior (the K = 1 subposterior).
TargetModel posterior(const ModelSpec& spec, const Dataset& data);

/// Constrained -> unconstrained map (inverse of TargetModel::to_constrained).
Vector to_unconstrained(const ModelSpec& spec, const Vector& constrained);

/// Exact posterior of the gaussian_location model.
GaussianSummary location_posterior(const ModelSpec& spec, const Dataset& data);

void write_dataset_csv(const Dataset& data, const std::string& path);
Dataset read_dataset_csv(const std::string& path);

}  // namespace nap
