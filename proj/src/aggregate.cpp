#include "nap/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nap/parallel.hpp"
#include "nap/seed.hpp"

namespace nap {

namespace {

// Indices drawn i.i.d. from Categorical(weights).
std::vector<Eigen::Index> resample(const Vector& weights, std::size_t r, std::mt19937_64& rng) {
  std::vector<double> cumulative(static_cast<std::size_t>(weights.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    acc += weights(i);
    cumulative[static_cast<std::size_t>(i)] = acc;
  }
  std::uniform_real_distribution<double> u(0.0, acc);
  std::vector<Eigen::Index> out(r);
  for (auto& idx : out) {
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u(rng));
    idx = std::min<Eigen::Index>(static_cast<Eigen::Index>(it - cumulative.begin()),
                                 weights.size() - 1);
  }
  return out;
}

}  // namespace

DiagonalGaussianDensity::DiagonalGaussianDensity(Vector mean, Vector variance)
    : mean_(std::move(mean)), variance_(std::move(variance)) {
  require_shape(mean_.size() == variance_.size() && mean_.size() > 0, "mean/variance length mismatch");
  require_shape((variance_.array() > 0.0).all(), "variances must be positive");
  log_norm_ = -0.5 * (2.0 * std::numbers::pi * variance_.array()).log().sum();
}

Vector DiagonalGaussianDensity::log_prob(const Matrix& thetas) const {
  require_shape(thetas.cols() == mean_.size(), "density width mismatch");
  Vector out(thetas.rows());
  for (Eigen::Index i = 0; i < thetas.rows(); ++i) {
    const double q = ((thetas.row(i).transpose() - mean_).array().square() / variance_.array()).sum();
    out(i) = log_norm_ - 0.5 * q;
  }
  return out;
}

Matrix DiagonalGaussianDensity::sample(std::size_t n, std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(static_cast<Eigen::Index>(n), mean_.size());
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      out(i, j) = mean_(j) + std::sqrt(variance_(j)) * normal(rng);
  return out;
}

SubposteriorEnsemble SubposteriorEnsemble::from_blobs(const std::vector<std::vector<std::uint8_t>>& blobs) {
  SubposteriorEnsemble e;
  for (std::size_t k = 0; k < blobs.size(); ++k) {
    e.members.push_back(std::make_shared<FlowDensity>(deserialize(blobs[k])));
    e.labels.push_back("shard" + std::to_string(k));
    e.bytes_ingested += blobs[k].size();
  }
  e.validate();
  return e;
}

std::size_t SubposteriorEnsemble::dim() const {
  return members.empty() ? 0 : members.front()->dim();
}

void SubposteriorEnsemble::validate() const {
  require_shape(!members.empty(), "ensemble needs at least one member");
  for (const auto& m : members) require_shape(m && m->dim() == dim(), "ensemble members differ in dimension");
}

double WeightedSamples::ess() const {
  const double s = weights.sum();
  const double s2 = weights.squaredNorm();
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

WeightedSamples nap_weights(const SubposteriorEnsemble& ensemble, std::size_t proposal, Matrix draws,
                            std::size_t threads) {
  ensemble.validate();
  require_shape(proposal < ensemble.size(), "proposal index out of range");
  require_shape(static_cast<std::size_t>(draws.cols()) == ensemble.dim(), "draw width mismatch");
  require_shape(draws.rows() > 0, "no draws to weight");

  WeightedSamples ws;
  ws.proposal = proposal;
  const Eigen::Index n = draws.rows();
  ws.log_weights = Vector::Zero(n);

  // The proposal's own density cancels, so it is left out of both the sum and the bound.
  // Both accumulate in member order, which keeps the bound exact under rounding.
  ws.log_bound = 0.0;
  for (std::size_t k = 0; k < ensemble.size(); ++k)
    if (k != proposal) ws.log_bound += ensemble.members[k]->log_prob_upper_bound();

  constexpr Eigen::Index kChunk = 1024;
  const auto chunks = static_cast<std::size_t>((n + kChunk - 1) / kChunk);
  parallel_for(chunks, threads, [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kChunk;
    const Eigen::Index len = std::min(kChunk, n - begin);
    const Matrix block = draws.middleRows(begin, len);
    Vector acc = Vector::Zero(len);
    for (std::size_t k = 0; k < ensemble.size(); ++k)
      if (k != proposal) acc += ensemble.members[k]->log_prob(block);
    ws.log_weights.segment(begin, len) = acc;
  });

  for (Eigen::Index i = 0; i < n; ++i) {
    const double lw = ws.log_weights(i);
    if (std::isnan(lw)) throw DegenerateWeightsError("NaN log-weight", -1);
    if (lw > ws.log_bound)
      throw WeightBoundViolation("log-weight " + std::to_string(lw) + " exceeds bound " +
                                 std::to_string(ws.log_bound));
  }
  const double top = ws.log_weights.maxCoeff();
  if (!std::isfinite(top)) throw DegenerateWeightsError("all importance weights are zero", -1);
  ws.weights = (ws.log_weights.array() - top).exp().matrix();
  ws.weights /= ws.weights.sum();
  ws.draws = std::move(draws);
  return ws;
}

double NapSirResult::min_weight_ess() const {
  return weight_ess.empty() ? 0.0 : *std::min_element(weight_ess.begin(), weight_ess.end());
}

NapSirResult nap_sir(const SubposteriorEnsemble& ensemble, std::size_t t, std::size_t r,
                     std::uint64_t seed, NapSirMode mode, std::size_t threads) {
  ensemble.validate();
  if (r == 0 || t < r) throw std::invalid_argument("NAP-SIR needs T >= R >= 1");
  const std::size_t k_total = ensemble.size();

  std::vector<std::size_t> proposals;
  std::size_t t_each = t;
  std::size_t r_each = r;
  if (mode.kind == NapSirMode::Kind::single) {
    require_shape(mode.proposal < k_total, "proposal index out of range");
    proposals.push_back(mode.proposal);
  } else {
    for (std::size_t k = 0; k < k_total; ++k) proposals.push_back(k);
    t_each = (t + k_total - 1) / k_total;
    r_each = (r + k_total - 1) / k_total;
  }

  NapSirResult out;
  out.samples.resize(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(ensemble.dim()));
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const std::size_t k = proposals[i];
    std::mt19937_64 rng(derive_seed(seed, {stream::aggregation, k}));
    WeightedSamples ws;
    try {
      ws = nap_weights(ensemble, k, ensemble.members[k]->sample(t_each, rng), threads);
    } catch (const DegenerateWeightsError& e) {
      throw DegenerateWeightsError(std::string(e.what()) + " in installment " + std::to_string(i),
                                   static_cast<long>(i));
    }
    const double ess = ws.ess();
    out.weight_ess.push_back(ess);
    if (ess < 10.0)
      out.warnings.push_back("installment " + std::to_string(i) + ": weight ESS " + std::to_string(ess) +
                             " < 10");
    const auto take = std::min<Eigen::Index>(static_cast<Eigen::Index>(r_each),
                                              static_cast<Eigen::Index>(r) - row);
    if (take <= 0) continue;
    const auto idx = resample(ws.weights, static_cast<std::size_t>(take), rng);
    out.samples.middleRows(row, take) = ws.draws(idx, Eigen::all);
    row += take;
  }
  return out;
}

GaussianSummary gaussian_product(const std::vector<GaussianSummary>& factors,
                                 std::vector<std::string>* warnings) {
  require_shape(!factors.empty(), "gaussian product needs at least one factor");
  const Eigen::Index d = factors.front().mean.size();
  Matrix precision = Matrix::Zero(d, d);
  Vector shift = Vector::Zero(d);
  for (std::size_t k = 0; k < factors.size(); ++k) {
    require_shape(factors[k].mean.size() == d, "factor dimension mismatch");
    const SpdFactor f(factors[k].covariance);
    if (f.ridged && warnings != nullptr)
      warnings->push_back("covariance " + std::to_string(k) + " singular; ridge added");
    const Matrix p = f.inverse();
    precision += p;
    shift += p * factors[k].mean;
  }
  const SpdFactor total(precision);
  GaussianSummary g;
  g.covariance = total.inverse();
  g.covariance = 0.5 * (g.covariance + g.covariance.transpose()).eval();
  g.mean = total.solve(shift);
  return g;
}

MergeResult consensus_merge(const std::vector<Matrix>& sample_sets) {
  require_shape(!sample_sets.empty(), "consensus needs at least one sample set");
  const Eigen::Index s = sample_sets.front().rows();
  const Eigen::Index d = sample_sets.front().cols();
  MergeResult out;
  std::vector<Matrix> w;
  Matrix w_sum = Matrix::Zero(d, d);
  for (std::size_t k = 0; k < sample_sets.size(); ++k) {
    require_shape(sample_sets[k].rows() == s && sample_sets[k].cols() == d,
                  "consensus needs equally sized sample sets");
    const SpdFactor f(fit_gaussian(sample_sets[k]).covariance);
    if (f.ridged) out.warnings.push_back("covariance " + std::to_string(k) + " singular; ridge added");
    w.push_back(f.inverse());
    w_sum += w.back();
  }
  const SpdFactor total(w_sum);
  Matrix acc = Matrix::Zero(s, d);
  for (std::size_t k = 0; k < sample_sets.size(); ++k) acc += sample_sets[k] * w[k].transpose();
  // rows of acc are (sum_k W_k theta_k)^T; solve (sum W) x = acc^T column-wise
  const Eigen::MatrixXd solved = total.llt.solve(Eigen::MatrixXd(acc.transpose()));
  out.samples = solved.transpose();
  return out;
}

MergeResult parametric_merge(const std::vector<Matrix>& sample_sets, std::size_t r, std::uint64_t seed) {
  require_shape(!sample_sets.empty(), "parametric merge needs at least one sample set");
  std::vector<GaussianSummary> fits;
  for (const auto& set : sample_sets) {
    require_shape(set.rows() > set.cols(), "parametric merge needs more samples than dimensions");
    fits.push_back(fit_gaussian(set));
  }
  MergeResult out;
  out.summary = gaussian_product(fits, &out.warnings);
  std::mt19937_64 rng(derive_seed(seed, {stream::baseline}));
  out.samples = sample_gaussian(out.summary, r, rng);
  return out;
}

}  // namespace nap
