#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nap/linalg.hpp"

namespace nap {

/// A log-density on unconstrained R^D. Any reparameterization Jacobian is already folded
/// into log_density. Must be safe to call concurrently.
struct TargetModel {
  std::size_t dim = 0;
  std::function<double(const Vector&)> log_density;
  std::function<Vector(const Vector&)> grad_log_density;  // optional; HMC requires it
  std::function<Vector(const Vector&)> to_constrained;
  std::string label;
};

struct ChainDiagnostics {
  double acceptance_rate = 0.0;  // post-warmup
  double step_size = 0.0;        // frozen value used after warmup
  long divergences = 0;          // post-warmup (HMC only)
  double min_ess = 0.0;          // smallest per-coordinate ESS of this chain's draws
};

struct SampleSet {
  Matrix values;  // n x D, unconstrained unless the label says otherwise
  std::string label;
  int shard = -1;
  std::vector<ChainDiagnostics> chains;

  std::size_t n() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(values.cols()); }
  /// Sum over chains of each chain's min_ess.
  double pooled_ess() const;
};

enum class McmcAlgorithm { rwm, hmc };

struct McmcConfig {
  std::size_t n_samples = 1000;  // pooled over chains, post-warmup
  std::optional<std::size_t> n_warmup;  // per chain; defaults to the chain's sample count
  std::size_t n_chains = 4;
  McmcAlgorithm algorithm = McmcAlgorithm::rwm;
  double hmc_step_size = 0.1;
  std::size_t hmc_leapfrog_steps = 20;
  /// Tune the HMC step size (target acceptance 0.8) and a diagonal mass matrix during
  /// warmup. Off gives plain fixed-step HMC with identity mass.
  bool hmc_adapt = false;
  /// Each trajectory scales the step by Uniform(1 - j, 1 + j), independent of the state.
  /// Breaks the resonances a fixed trajectory length hits on long curved targets.
  double hmc_step_jitter = 0.0;
  double init_jitter = 0.5;
  /// Keep every `thin`-th post-warmup state; n_samples counts the kept draws.
  std::size_t thin = 1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

class McmcError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Random-walk Metropolis with a diagonal Gaussian proposal. During warmup the overall
/// scale is tuned toward acceptance 0.234 and per-coordinate scales are set from the
/// first half of warmup; both are frozen afterwards.
SampleSet rwm_sample(const TargetModel& target, const McmcConfig& cfg);

/// Leapfrog HMC with Metropolis correction. Trajectories with energy error above 1000 are
/// rejected and counted as divergent.
SampleSet hmc_sample(const TargetModel& target, const McmcConfig& cfg);

SampleSet mcmc_sample(const TargetModel& target, const McmcConfig& cfg);

struct EssResult {
  double ess = 0.0;
  bool degenerate = false;  // constant series
};

/// Initial-positive-sequence autocorrelation estimate, capped at n.
EssResult effective_sample_size(std::span<const double> values);

/// H(end) - H(start) of one leapfrog trajectory with unit mass.
double leapfrog_energy_error(const TargetModel& target, const Vector& theta, const Vector& momentum,
                             double step_size, std::size_t n_steps);

/// Central finite-difference check of target.grad_log_density at `theta`.
bool gradient_matches_fd(const TargetModel& target, const Vector& theta, double rel_tol = 1e-4);

}  // namespace nap
