#include "nap/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nap/parallel.hpp"
#include "nap/seed.hpp"

namespace nap {

namespace {

constexpr double kRwmTargetAcceptance = 0.234;
constexpr double kHmcTargetAcceptance = 0.8;
constexpr double kDivergenceThreshold = 1000.0;

struct ChainResult {
  Matrix draws;
  ChainDiagnostics diag;
};

// Welford accumulator for per-coordinate variance.
class RunningMoments {
 public:
  explicit RunningMoments(std::size_t dim)
      : mean_(Vector::Zero(static_cast<Eigen::Index>(dim))),
        m2_(Vector::Zero(static_cast<Eigen::Index>(dim))) {}
  void add(const Vector& x) {
    ++n_;
    const Vector delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta.cwiseProduct(x - mean_);
  }
  long count() const { return n_; }
  Vector variance() const { return m2_ / static_cast<double>(std::max<long>(1, n_ - 1)); }

 private:
  long n_ = 0;
  Vector mean_;
  Vector m2_;
};

double robbins_monro_gain(long t) { return 1.0 / std::pow(static_cast<double>(t) + 1.0, 0.6); }

void validate(const TargetModel& target, const McmcConfig& cfg) {
  if (target.dim == 0) throw std::invalid_argument("target dimension must be positive");
  if (!target.log_density) throw std::invalid_argument("target has no log density");
  if (cfg.n_samples == 0 || cfg.n_chains == 0)
    throw std::invalid_argument("sample and chain counts must be positive");
  if (cfg.n_warmup && *cfg.n_warmup == 0) throw std::invalid_argument("warmup count must be positive");
  if (cfg.thin == 0) throw std::invalid_argument("thinning interval must be positive");
}

std::size_t chain_share(std::size_t total, std::size_t chains, std::size_t c) {
  return total / chains + (c < total % chains ? 1 : 0);
}

Vector initial_point(const TargetModel& target, double jitter, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-jitter, jitter);
  const auto d = static_cast<Eigen::Index>(target.dim);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Vector theta(d);
    for (Eigen::Index i = 0; i < d; ++i) theta(i) = u(rng);
    if (std::isfinite(target.log_density(theta))) return theta;
  }
  throw McmcError("no finite-density initial point for '" + target.label +
                  "' after 100 jitter attempts");
}

double min_ess(const Matrix& draws) {
  if (draws.rows() < 10) return static_cast<double>(draws.rows());
  double best = static_cast<double>(draws.rows());
  std::vector<double> col(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index j = 0; j < draws.cols(); ++j) {
    for (Eigen::Index i = 0; i < draws.rows(); ++i) col[static_cast<std::size_t>(i)] = draws(i, j);
    best = std::min(best, effective_sample_size(col).ess);
  }
  return best;
}

ChainResult rwm_chain(const TargetModel& target, std::size_t n_samples, std::size_t n_warmup,
                      std::size_t thin, std::uint64_t seed, double jitter) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(target.dim);

  Vector theta = initial_point(target, jitter, rng);
  double lp = target.log_density(theta);
  const double base_log_step = std::log(2.38 / std::sqrt(static_cast<double>(d)));
  double log_step = base_log_step;
  Vector sd = Vector::Ones(d);
  RunningMoments moments(target.dim);
  const std::size_t half = n_warmup / 2;
  long adapt_t = 0;

  ChainResult out;
  out.draws.resize(static_cast<Eigen::Index>(n_samples), d);
  long accepted = 0;
  Vector prop(d);
  for (std::size_t it = 0; it < n_warmup + n_samples * thin; ++it) {
    const double step = std::exp(log_step);
    for (Eigen::Index i = 0; i < d; ++i) prop(i) = theta(i) + step * sd(i) * normal(rng);
    const double lp_prop = target.log_density(prop);
    const double log_ratio = std::isfinite(lp_prop) ? lp_prop - lp : -INFINITY;
    const bool accept = std::log(unif(rng)) < log_ratio;
    if (accept) {
      theta = prop;
      lp = lp_prop;
    }
    if (it < n_warmup) {
      const double alpha = std::min(1.0, std::exp(log_ratio));
      log_step += robbins_monro_gain(adapt_t++) * (alpha - kRwmTargetAcceptance);
      if (it < half) moments.add(theta);
      if (it + 1 == half && half >= 20) {
        sd = moments.variance().cwiseSqrt().cwiseMax(1e-12);
        log_step = base_log_step;
        adapt_t = 0;
      }
    } else {
      if ((it - n_warmup + 1) % thin == 0)
        out.draws.row(static_cast<Eigen::Index>((it - n_warmup) / thin)) = theta.transpose();
      accepted += accept ? 1 : 0;
    }
  }
  out.diag.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(n_samples * thin);
  out.diag.step_size = std::exp(log_step);
  out.diag.min_ess = min_ess(out.draws);
  return out;
}

struct Leapfrog {
  const TargetModel& target;
  const Vector& inv_mass;

  // Advances (theta, p) in place; returns the final log density.
  double run(Vector& theta, Vector& p, double step, std::size_t n_steps) const {
    Vector g = target.grad_log_density(theta);
    p += 0.5 * step * g;
    for (std::size_t l = 0; l < n_steps; ++l) {
      theta += step * inv_mass.cwiseProduct(p);
      g = target.grad_log_density(theta);
      if (l + 1 < n_steps) p += step * g;
    }
    p += 0.5 * step * g;
    return target.log_density(theta);
  }
};

ChainResult hmc_chain(const TargetModel& target, const McmcConfig& cfg, std::size_t n_samples,
                      std::size_t n_warmup, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(target.dim);

  Vector theta = initial_point(target, cfg.init_jitter, rng);
  if (!gradient_matches_fd(target, theta))
    throw McmcError("gradient of '" + target.label + "' disagrees with finite differences");
  double lp = target.log_density(theta);
  Vector inv_mass = Vector::Ones(d);
  double log_step = std::log(cfg.hmc_step_size);
  RunningMoments moments(target.dim);
  const std::size_t half = n_warmup / 2;
  long adapt_t = 0;

  ChainResult out;
  out.draws.resize(static_cast<Eigen::Index>(n_samples), d);
  long accepted = 0;
  Vector p(d);
  for (std::size_t it = 0; it < n_warmup + n_samples * cfg.thin; ++it) {
    for (Eigen::Index i = 0; i < d; ++i) p(i) = normal(rng) / std::sqrt(inv_mass(i));
    const double h0 = -lp + 0.5 * p.cwiseProduct(inv_mass).dot(p);
    Vector prop = theta;
    double step = std::exp(log_step);
    if (cfg.hmc_step_jitter > 0.0) step *= 1.0 + cfg.hmc_step_jitter * (2.0 * unif(rng) - 1.0);
    const double lp_prop = Leapfrog{target, inv_mass}.run(prop, p, step, cfg.hmc_leapfrog_steps);
    const double h1 = -lp_prop + 0.5 * p.cwiseProduct(inv_mass).dot(p);
    const double dh = h1 - h0;
    const bool divergent = !std::isfinite(dh) || dh > kDivergenceThreshold;
    const bool accept = !divergent && std::log(unif(rng)) < -dh;
    if (accept) {
      theta = prop;
      lp = lp_prop;
    }
    if (it < n_warmup) {
      if (cfg.hmc_adapt) {
        const double alpha = divergent ? 0.0 : std::min(1.0, std::exp(-dh));
        log_step += robbins_monro_gain(adapt_t++) * (alpha - kHmcTargetAcceptance);
        if (it < half) moments.add(theta);
        if (it + 1 == half && half >= 20) {
          inv_mass = moments.variance().cwiseMax(1e-12);
          // keep the typical step length roughly unchanged under the new metric
          log_step = std::log(cfg.hmc_step_size);
          adapt_t = 0;
        }
      }
    } else {
      if ((it - n_warmup + 1) % cfg.thin == 0)
        out.draws.row(static_cast<Eigen::Index>((it - n_warmup) / cfg.thin)) = theta.transpose();
      accepted += accept ? 1 : 0;
      out.diag.divergences += divergent ? 1 : 0;
    }
  }
  const std::size_t n_iter = n_samples * cfg.thin;
  if (2 * out.diag.divergences > static_cast<long>(n_iter))
    throw McmcError("more than half of HMC trajectories diverged for '" + target.label + "'");
  out.diag.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(n_iter);
  out.diag.step_size = std::exp(log_step);
  out.diag.min_ess = min_ess(out.draws);
  return out;
}

template <typename ChainFn>
SampleSet run_chains(const TargetModel& target, const McmcConfig& cfg, ChainFn&& chain) {
  std::vector<ChainResult> results(cfg.n_chains);
  parallel_for(cfg.n_chains, cfg.threads, [&](std::size_t c) {
    const std::size_t n = chain_share(cfg.n_samples, cfg.n_chains, c);
    if (n == 0) return;
    const std::size_t warm = cfg.n_warmup ? *cfg.n_warmup : n;
    results[c] = chain(n, warm, derive_seed(cfg.seed, {stream::chain, c}));
  });
  SampleSet out;
  out.label = target.label;
  out.values.resize(static_cast<Eigen::Index>(cfg.n_samples), static_cast<Eigen::Index>(target.dim));
  Eigen::Index row = 0;
  for (auto& r : results) {
    if (r.draws.rows() == 0) continue;
    out.values.middleRows(row, r.draws.rows()) = r.draws;
    row += r.draws.rows();
    out.chains.push_back(r.diag);
  }
  return out;
}

}  // namespace

double SampleSet::pooled_ess() const {
  double total = 0.0;
  for (const auto& c : chains) total += c.min_ess;
  return total;
}

SampleSet rwm_sample(const TargetModel& target, const McmcConfig& cfg) {
  validate(target, cfg);
  return run_chains(target, cfg, [&](std::size_t n, std::size_t warm, std::uint64_t seed) {
    return rwm_chain(target, n, warm, cfg.thin, seed, cfg.init_jitter);
  });
}

SampleSet hmc_sample(const TargetModel& target, const McmcConfig& cfg) {
  validate(target, cfg);
  if (!target.grad_log_density) throw std::invalid_argument("HMC needs grad_log_density");
  if (cfg.hmc_leapfrog_steps == 0) throw std::invalid_argument("HMC needs at least one leapfrog step");
  if (!(cfg.hmc_step_size > 0.0)) throw std::invalid_argument("HMC step size must be positive");
  if (!(cfg.hmc_step_jitter >= 0.0 && cfg.hmc_step_jitter < 1.0))
    throw std::invalid_argument("HMC step jitter must lie in [0, 1)");
  return run_chains(target, cfg, [&](std::size_t n, std::size_t warm, std::uint64_t seed) {
    return hmc_chain(target, cfg, n, warm, seed);
  });
}

SampleSet mcmc_sample(const TargetModel& target, const McmcConfig& cfg) {
  return cfg.algorithm == McmcAlgorithm::hmc ? hmc_sample(target, cfg) : rwm_sample(target, cfg);
}

double leapfrog_energy_error(const TargetModel& target, const Vector& theta, const Vector& momentum,
                             double step_size, std::size_t n_steps) {
  const Vector inv_mass = Vector::Ones(theta.size());
  Vector q = theta;
  Vector p = momentum;
  const double h0 = -target.log_density(theta) + 0.5 * momentum.squaredNorm();
  const double lp = Leapfrog{target, inv_mass}.run(q, p, step_size, n_steps);
  return (-lp + 0.5 * p.squaredNorm()) - h0;
}

EssResult effective_sample_size(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 10) throw std::invalid_argument("effective_sample_size needs at least 10 values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  auto autocov = [&](std::size_t lag) {
    double acc = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) acc += (values[i] - mean) * (values[i + lag] - mean);
    return acc / static_cast<double>(n);
  };
  const double c0 = autocov(0);
  if (!(c0 > 0.0)) return {0.0, true};

  // Geyer: sum pairs rho(2k) + rho(2k+1) while positive, forced non-increasing.
  double tau = -1.0;
  double prev_pair = INFINITY;
  for (std::size_t lag = 0; lag + 1 < n; lag += 2) {
    double pair = (autocov(lag) + autocov(lag + 1)) / c0;
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    tau += 2.0 * pair;
    prev_pair = pair;
  }
  const double nn = static_cast<double>(n);
  if (!(tau > 1.0)) return {nn, false};
  return {std::min(nn, nn / tau), false};
}

bool gradient_matches_fd(const TargetModel& target, const Vector& theta, double rel_tol) {
  const Vector g = target.grad_log_density(theta);
  if (g.size() != theta.size() || !g.allFinite()) return false;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(theta(i)));
    Vector plus = theta;
    Vector minus = theta;
    plus(i) += h;
    minus(i) -= h;
    const double fd = (target.log_density(plus) - target.log_density(minus)) / (2.0 * h);
    if (std::abs(fd - g(i)) > rel_tol * std::max({1.0, std::abs(fd), std::abs(g(i))})) return false;
  }
  return true;
}

}  // namespace nap
