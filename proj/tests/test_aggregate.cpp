#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include "doctest.h"
#include "nap/aggregate.hpp"
#include "nap/gaussian.hpp"
#include "support.hpp"

using namespace nap;
using nap::testing::random_matrix;

namespace {

SubposteriorEnsemble gaussians(const std::vector<std::pair<double, double>>& mean_var, Eigen::Index d = 2) {
  SubposteriorEnsemble e;
  for (const auto& [m, v] : mean_var) {
    e.members.push_back(std::make_shared<DiagonalGaussianDensity>(Vector::Constant(d, m), Vector::Constant(d, v)));
    e.labels.push_back("g");
  }
  return e;
}

// A Gaussian whose log density is offset by a constant; still bounded.
class ShiftedDensity final : public DensityModel {
 public:
  ShiftedDensity(std::shared_ptr<const DensityModel> base, double shift) : base_(std::move(base)), shift_(shift) {}
  std::size_t dim() const override { return base_->dim(); }
  Vector log_prob(const Matrix& x) const override { return base_->log_prob(x).array() + shift_; }
  double log_prob_upper_bound() const override { return base_->log_prob_upper_bound() + shift_; }
  Matrix sample(std::size_t n, std::mt19937_64& rng) const override { return base_->sample(n, rng); }

 private:
  std::shared_ptr<const DensityModel> base_;
  double shift_;
};

FlowModel small_flow(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Standardizer st = Standardizer::identity(dim);
  st.shift = nap::testing::random_vector(static_cast<Eigen::Index>(dim), rng, 0.3);
  return FlowModel::random(dim, FlowArch{3, {8, 8}}, st, rng, 0.5);
}

}  // namespace

TEST_SUITE("aggregate") {

TEST_CASE("K = 1 gives uniform weights") {
  const auto e = gaussians({{0.0, 1.0}});
  std::mt19937_64 rng(1);
  const WeightedSamples ws = nap_weights(e, 0, e.members[0]->sample(100, rng));
  CHECK((ws.weights.array() == 1.0 / 100.0).all());
  CHECK(ws.ess() == doctest::Approx(100.0));
}

TEST_CASE("two standard normals: hand-evaluated weights") {
  const auto e = gaussians({{0.0, 1.0}, {0.0, 1.0}});
  Matrix draws(2, 2);
  draws << 0.0, 0.0, 1.0, 0.0;
  const WeightedSamples ws = nap_weights(e, 0, draws);
  CHECK(ws.weights(0) == doctest::Approx(0.39894 / (0.39894 + 0.24197)).epsilon(1e-4));
  CHECK(ws.weights(0) == doctest::Approx(0.6225).epsilon(1e-3));
  CHECK(ws.weights(1) == doctest::Approx(0.3775).epsilon(1e-3));
  CHECK(ws.log_weights(0) == doctest::Approx(-std::log(2.0 * std::numbers::pi)));
}

TEST_CASE("normalized weights ignore a constant added to every member") {
  const auto e = gaussians({{0.0, 1.0}, {0.5, 2.0}, {-0.3, 1.5}});
  SubposteriorEnsemble shifted;
  for (const auto& m : e.members) shifted.members.push_back(std::make_shared<ShiftedDensity>(m, 7.5));
  std::mt19937_64 rng(2);
  const Matrix draws = e.members[1]->sample(500, rng);
  const WeightedSamples a = nap_weights(e, 1, draws);
  const WeightedSamples b = nap_weights(shifted, 1, draws);
  CHECK((a.weights - b.weights).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(a.weights.sum() - 1.0) < 1e-12);
}

TEST_CASE("matched proposal keeps most of its effective sample size") {
  const auto e = gaussians({{0.0, 1.0}, {0.0, 1.0}});
  std::mt19937_64 rng(3);
  const std::size_t t = 20000;
  const WeightedSamples ws = nap_weights(e, 0, e.members[0]->sample(t, rng));
  const double frac = ws.ess() / static_cast<double>(t);
  CHECK(frac > 0.3);
  CHECK(frac <= 1.0);
}

TEST_CASE("weights respect the deterministic cap on flows") {
  SubposteriorEnsemble e;
  for (std::uint64_t k = 0; k < 4; ++k) e.members.push_back(std::make_shared<FlowDensity>(small_flow(3, k)));
  std::mt19937_64 rng(4);
  for (std::size_t k = 0; k < 4; ++k) {
    const WeightedSamples ws = nap_weights(e, k, e.members[k]->sample(3000, rng));
    double bound = 0.0;
    for (std::size_t j = 0; j < 4; ++j)
      if (j != k) bound += e.members[j]->log_prob_upper_bound();
    CHECK(ws.log_bound == bound);
    CHECK(ws.log_weights.maxCoeff() <= bound);
    CHECK(ws.weights.maxCoeff() < 1.0);
    CHECK(ws.weights.maxCoeff() <= std::exp(bound - log_sum_exp(ws.log_weights)));
    CHECK(std::isfinite(ws.weights.squaredNorm()));
  }
}

TEST_CASE("bound violation and degenerate weights are reported") {
  class Liar final : public DensityModel {
   public:
    std::size_t dim() const override { return 2; }
    Vector log_prob(const Matrix& x) const override { return Vector::Constant(x.rows(), 1.0); }
    double log_prob_upper_bound() const override { return 0.0; }
    Matrix sample(std::size_t n, std::mt19937_64&) const override { return Matrix::Zero(static_cast<Eigen::Index>(n), 2); }
  };
  class Nowhere final : public DensityModel {
   public:
    std::size_t dim() const override { return 2; }
    Vector log_prob(const Matrix& x) const override {
      return Vector::Constant(x.rows(), -std::numeric_limits<double>::infinity());
    }
    double log_prob_upper_bound() const override { return 0.0; }
    Matrix sample(std::size_t n, std::mt19937_64&) const override { return Matrix::Zero(static_cast<Eigen::Index>(n), 2); }
  };
  auto base = gaussians({{0.0, 1.0}});
  SubposteriorEnsemble lying = base;
  lying.members.push_back(std::make_shared<Liar>());
  CHECK_THROWS_AS(nap_weights(lying, 0, Matrix::Zero(5, 2)), WeightBoundViolation);
  SubposteriorEnsemble empty = base;
  empty.members.push_back(std::make_shared<Nowhere>());
  CHECK_THROWS_AS(nap_weights(empty, 0, Matrix::Zero(5, 2)), DegenerateWeightsError);
  try {
    nap_sir(empty, 10, 5, 1);
    FAIL("expected DegenerateWeightsError");
  } catch (const DegenerateWeightsError& e) {
    CHECK(e.installment() == 0);
  }
}

TEST_CASE("argument validation") {
  const auto e = gaussians({{0.0, 1.0}, {1.0, 1.0}});
  CHECK_THROWS_AS(nap_sir(e, 10, 20, 1), std::invalid_argument);
  CHECK_THROWS_AS(nap_sir(e, 10, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(nap_sir(e, 10, 5, 1, NapSirMode::single(2)), ShapeError);
  CHECK_THROWS_AS(nap_weights(e, 0, Matrix::Zero(3, 3)), ShapeError);
  SubposteriorEnsemble mixed = e;
  mixed.members.push_back(std::make_shared<DiagonalGaussianDensity>(Vector::Zero(3), Vector::Ones(3)));
  CHECK_THROWS_AS(mixed.validate(), ShapeError);
}

TEST_CASE("K = 1 SIR reproduces the member's moments") {
  const auto e = gaussians({{2.0, 0.5}});
  const NapSirResult r = nap_sir(e, 20000, 20000, 5, NapSirMode::single(0));
  const auto g = fit_gaussian(r.samples);
  // with T = R resampling adds at most a factor ~2 to the variance of the mean
  CHECK((g.mean.array() - 2.0).abs().maxCoeff() < 4.0 * std::sqrt(2.0 * 0.5 / 20000.0));
  CHECK(g.covariance(0, 0) == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("exact-density harness: N(0,1) x N(1,1) = N(0.5, 0.5)") {
  const auto e = gaussians({{0.0, 1.0}, {1.0, 1.0}});
  const std::size_t r = 4000;
  for (auto mode : {NapSirMode::installments(), NapSirMode::single(0), NapSirMode::single(1)}) {
    const NapSirResult out = nap_sir(e, 40000, r, 6, mode);
    CHECK(out.samples.rows() == static_cast<Eigen::Index>(r));
    const auto g = fit_gaussian(out.samples);
    for (int j = 0; j < 2; ++j) {
      CHECK(std::abs(g.mean(j) - 0.5) < 4.0 * std::sqrt(0.5 / r));
      CHECK(g.covariance(j, j) == doctest::Approx(0.5).epsilon(0.1));
    }
  }
}

TEST_CASE("harness error shrinks with R") {
  const auto e = gaussians({{0.0, 1.0}, {1.0, 1.0}});
  double prev = 1e9;
  for (std::size_t r : {1000u, 10000u, 100000u}) {
    double err = 0.0;
    for (std::uint64_t s = 0; s < 4; ++s) {
      const auto g = fit_gaussian(nap_sir(e, 4 * r, r, 100 + s).samples);
      err += (g.mean.array() - 0.5).square().sum() / 4.0;
    }
    CHECK(err < prev);
    prev = err;
  }
}

TEST_CASE("installments split T and R and truncate to R") {
  const auto e = gaussians({{0.0, 1.0}, {0.2, 1.0}, {0.4, 1.0}});
  const NapSirResult r = nap_sir(e, 100, 10, 7);
  CHECK(r.samples.rows() == 10);  // ceil(10/3) = 4 per installment, 12 truncated to 10
  CHECK(r.weight_ess.size() == 3);
  CHECK(r.samples.allFinite());
}

TEST_CASE("low weight ESS produces a warning") {
  const auto e = gaussians({{0.0, 1.0}, {6.0, 0.01}});
  const NapSirResult r = nap_sir(e, 200, 10, 8, NapSirMode::single(0));
  CHECK(r.min_weight_ess() < 10.0);
  CHECK_FALSE(r.warnings.empty());
}

TEST_CASE("all mergers are deterministic") {
  const auto e = gaussians({{0.0, 1.0}, {1.0, 2.0}});
  CHECK(nap_sir(e, 500, 100, 9).samples == nap_sir(e, 500, 100, 9).samples);
  CHECK(nap_sir(e, 500, 100, 9, NapSirMode::installments(), 4).samples == nap_sir(e, 500, 100, 9).samples);
  std::mt19937_64 rng(10);
  const std::vector<Matrix> sets{random_matrix(200, 2, rng), random_matrix(200, 2, rng)};
  CHECK(parametric_merge(sets, 50, 3).samples == parametric_merge(sets, 50, 3).samples);
  CHECK(consensus_merge(sets).samples == consensus_merge(sets).samples);
}

TEST_CASE("serialized flows ingest with byte accounting") {
  std::vector<std::vector<std::uint8_t>> blobs;
  for (std::uint64_t k = 0; k < 3; ++k) blobs.push_back(serialize(small_flow(2, k)));
  const auto e = SubposteriorEnsemble::from_blobs(blobs);
  CHECK(e.size() == 3);
  CHECK(e.bytes_ingested == blobs[0].size() * 3);
  const NapSirResult r = nap_sir(e, 400, 100, 11);
  CHECK(r.samples.rows() == 100);
}

TEST_CASE("consensus: degenerate identical sets, equal-weight means, precision weighting") {
  Matrix c(50, 2);
  c.col(0).setConstant(1.5);
  c.col(1).setConstant(-2.0);
  const MergeResult same = consensus_merge({c, c});
  CHECK((same.samples.rowwise() - c.row(0)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_FALSE(same.warnings.empty());

  std::mt19937_64 rng(12);
  std::vector<Matrix> sets;
  Vector target = Vector::Zero(2);
  for (int k = 0; k < 4; ++k) {
    const Vector m = nap::testing::random_vector(2, rng);
    target += m / 4.0;
    sets.push_back(random_matrix(20000, 2, rng).rowwise() + m.transpose());
  }
  CHECK((consensus_merge(sets).samples.colwise().mean().transpose() - target).cwiseAbs().maxCoeff() < 0.03);

  // 1-D style check: set b has twice the variance, so it carries half the weight
  Matrix a = random_matrix(40000, 2, rng);
  Matrix b = random_matrix(40000, 2, rng) * std::sqrt(2.0);
  b.col(0).array() += 3.0;
  const double combined = consensus_merge({a, b}).samples.col(0).mean();
  CHECK(combined == doctest::Approx(3.0 * (0.5 / 1.5)).epsilon(0.03));
}

TEST_CASE("gaussian product closed forms") {
  GaussianSummary std2{Vector::Zero(2), Matrix::Identity(2, 2)};
  const GaussianSummary p3 = gaussian_product({std2, std2, std2});
  CHECK(p3.mean.cwiseAbs().maxCoeff() < 1e-15);
  CHECK((p3.covariance - Matrix::Identity(2, 2) / 3.0).cwiseAbs().maxCoeff() < 1e-15);

  GaussianSummary a{Vector::Zero(1), Matrix::Ones(1, 1)}, b{Vector::Ones(1), Matrix::Ones(1, 1)};
  const GaussianSummary ab = gaussian_product({a, b});
  CHECK(ab.mean(0) == doctest::Approx(0.5));
  CHECK(ab.covariance(0, 0) == doctest::Approx(0.5));

  // precision-weighted means stay inside the members' hull (1-D: between min and max)
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<GaussianSummary> fs;
    double lo = 1e9, hi = -1e9;
    for (int k = 0; k < 4; ++k) {
      const double m = u(rng) * 4.0 - 6.0;
      lo = std::min(lo, m);
      hi = std::max(hi, m);
      fs.push_back({Vector::Constant(1, m), Matrix::Constant(1, 1, u(rng))});
    }
    const double pm = gaussian_product(fs).mean(0);
    CHECK(pm >= lo - 1e-12);
    CHECK(pm <= hi + 1e-12);
  }
}

TEST_CASE("parametric merge draws from the exact product") {
  std::mt19937_64 rng(14);
  const Matrix a = random_matrix(50000, 2, rng);
  const Matrix b = random_matrix(50000, 2, rng).array() + 1.0;
  const MergeResult m = parametric_merge({a, b}, 4000, 15);
  CHECK((m.summary.mean.array() - 0.5).abs().maxCoeff() < 0.02);
  CHECK(m.summary.covariance(0, 0) == doctest::Approx(0.5).epsilon(0.03));
  CHECK(m.samples.rows() == 4000);
  CHECK_THROWS_AS(parametric_merge({Matrix::Zero(2, 2)}, 10, 1), ShapeError);
}

}  // TEST_SUITE
