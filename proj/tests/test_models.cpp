#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "doctest.h"
#include "nap/models.hpp"
#include "support.hpp"

using namespace nap;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double normal_logpdf(double x, double mean, double var) {
  return -0.5 * (kLog2Pi + std::log(var)) - 0.5 * (x - mean) * (x - mean) / var;
}

std::vector<ModelSpec> all_specs() {
  return {ModelSpec::warped_gaussian(), ModelSpec::gamma_mixture(), ModelSpec::logistic_regression(4),
          ModelSpec::rare_categorical(600, 3), ModelSpec::gaussian_location()};
}

// Points where every model's density is comfortably finite.
Vector random_theta(const ModelSpec& spec, std::mt19937_64& rng) {
  const auto d = static_cast<Eigen::Index>(spec.param_dim());
  Vector u = nap::testing::random_vector(d, rng, 0.5);
  if (spec.kind == ModelKind::rare_categorical) u = u.array() * 2.0 - 3.0;
  return u;
}

Dataset one_row(double y) {
  Dataset d;
  d.rows = Matrix::Constant(1, 1, y);
  d.columns = {"y"};
  return d;
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("names round trip and validation") {
  for (const auto& s : all_specs()) {
    CHECK(model_kind_from_string(to_string(s.kind)) == s.kind);
    CHECK_NOTHROW(s.validate());
    CHECK(s.param_names().size() == s.param_dim());
  }
  CHECK(ModelSpec::logistic_regression(10).param_dim() == 11);
  CHECK_THROWS(model_kind_from_string("bogus"));
  ModelSpec bad = ModelSpec::warped_gaussian();
  bad.sigma2 = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  ModelSpec bad_gamma = ModelSpec::gamma_mixture();
  bad_gamma.beta2 = -1.0;
  CHECK_THROWS_AS(bad_gamma.validate(), std::invalid_argument);
  ModelSpec bad_cat = ModelSpec::rare_categorical(100, 2);
  bad_cat.lambda = {0.5, 0.6, 0.1};
  CHECK_THROWS_AS(bad_cat.validate(), std::invalid_argument);
}

TEST_CASE("warped Gaussian data mean") {
  std::mt19937_64 rng(1);
  const Dataset d = generate(ModelSpec::warped_gaussian(), 10000, rng);
  CHECK(std::abs(d.rows.col(0).mean() - 0.5) < 4.0 * std::sqrt(2.0 / 10000.0));
}

TEST_CASE("warped Gaussian single-observation likelihood") {
  const ModelSpec spec = ModelSpec::warped_gaussian();
  const TargetModel t = posterior(spec, one_row(0.5));
  const Vector theta = (Vector(2) << 0.5, 0.0).finished();
  const double prior = normal_logpdf(0.5, 0.0, 25.0) + normal_logpdf(0.0, 0.0, 25.0);
  CHECK(t.log_density(theta) - prior == doctest::Approx(-0.5 * std::log(4.0 * std::numbers::pi)).epsilon(1e-12));
  CHECK(-0.5 * std::log(4.0 * std::numbers::pi) == doctest::Approx(-1.26551).epsilon(1e-5));
}

TEST_CASE("gamma mixture data are positive with the right mean") {
  std::mt19937_64 rng(2);
  const Dataset d = generate(ModelSpec::gamma_mixture(), 20000, rng);
  CHECK(d.rows.minCoeff() > 0.0);
  CHECK(std::abs(d.rows.col(0).mean() - 0.75) < 0.03);  // 0.5 * (0.5 + 1.0)
}

TEST_CASE("logistic labels are the rounding indicator") {
  std::mt19937_64 rng(3);
  const ModelSpec spec = ModelSpec::logistic_regression(10);
  const Dataset d = generate(spec, 3000, rng);
  CHECK(d.rows.cols() == 11);
  CHECK(d.true_params(0) == -3.0);
  for (Eigen::Index i = 0; i < d.rows.rows(); ++i) {
    const double eta = d.true_params(0) + d.true_params.tail(10).dot(d.rows.row(i).tail(10).transpose());
    CHECK(d.rows(i, 0) == (eta >= 0.0 ? 1.0 : 0.0));
  }
  // covariates: unit variances, lag-one correlation 0.9
  const Matrix x = d.rows.rightCols(10);
  const Matrix centered = x.rowwise() - x.colwise().mean();
  const Matrix cov = centered.transpose() * centered / 2999.0;
  CHECK(cov(3, 3) == doctest::Approx(1.0).epsilon(0.1));
  CHECK(cov(3, 4) == doctest::Approx(0.9).epsilon(0.1));
}

TEST_CASE("rare categorical expects two rare events per shard") {
  const ModelSpec spec = ModelSpec::rare_categorical(10000, 10);
  CHECK(spec.lambda[0] == doctest::Approx(0.002));
  CHECK(spec.lambda[1] == doctest::Approx(0.002));
  std::mt19937_64 rng(4);
  const Dataset d = generate(spec, 10000, rng);
  const auto count = [&](double c) { return (d.rows.col(0).array() == c).count(); };
  CHECK(std::abs(count(0.0) - 20.0) <= 4.0 * std::sqrt(20.0));
  CHECK(std::abs(count(1.0) - 20.0) <= 4.0 * std::sqrt(20.0));
  CHECK(count(0.0) + count(1.0) + count(2.0) == 10000);
}

TEST_CASE("shard: K = 1, even split, disjoint cover, determinism, errors") {
  std::mt19937_64 rng(5);
  const Dataset d = generate(ModelSpec::warped_gaussian(), 10000, rng);
  const ShardedData one = shard(d, 1, 3);
  REQUIRE(one.shards.size() == 1);
  std::vector<double> a(d.rows.data(), d.rows.data() + d.size());
  std::vector<double> b(one.shards[0].rows.data(), one.shards[0].rows.data() + d.size());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);

  const ShardedData ten = shard(d, 10, 3);
  std::vector<double> all;
  for (const auto& s : ten.shards) {
    CHECK(s.size() == 1000);
    all.insert(all.end(), s.rows.data(), s.rows.data() + s.size());
  }
  std::sort(all.begin(), all.end());
  CHECK(all == a);
  CHECK(shard(d, 10, 3).shards[4].rows == ten.shards[4].rows);

  const ShardedData uneven = shard(generate(ModelSpec::warped_gaussian(), 23, rng), 5, 1);
  std::size_t lo = 100, hi = 0;
  for (const auto& s : uneven.shards) {
    lo = std::min(lo, s.size());
    hi = std::max(hi, s.size());
  }
  CHECK(hi - lo <= 1);
  CHECK_THROWS_AS(shard(d, 0, 1), PartitionError);
  CHECK_THROWS_AS(shard(one_row(1.0), 2, 1), PartitionError);
}

TEST_CASE("subposteriors add up to the posterior") {
  for (const auto& spec : all_specs()) {
    std::mt19937_64 rng(6);
    const Dataset d = generate(spec, 600, rng);
    const ShardedData parts = shard(d, 3, 9);
    std::vector<TargetModel> subs;
    for (const auto& s : parts.shards) subs.push_back(subposterior(spec, s, 3));
    const TargetModel full = posterior(spec, d);
    auto gap = [&](const Vector& u) {
      double sum = 0.0;
      for (const auto& t : subs) sum += t.log_density(u);
      return sum - full.log_density(u);
    };
    const Vector ref = random_theta(spec, rng);
    const double g0 = gap(ref);
    for (int i = 0; i < 100; ++i) {
      const double g = gap(random_theta(spec, rng));
      CHECK_MESSAGE(std::abs(g - g0) < 1e-9 * std::max(1.0, std::abs(full.log_density(ref))),
                    to_string(spec.kind) << " gap moved by " << g - g0);
    }
  }
}

TEST_CASE("gradients match finite differences at 20 points per model") {
  for (const auto& spec : all_specs()) {
    std::mt19937_64 rng(7);
    const Dataset d = generate(spec, 400, rng);
    const TargetModel t = subposterior(spec, shard(d, 4, 1).shards[0], 4);
    REQUIRE(t.grad_log_density);
    for (int i = 0; i < 20; ++i) {
      const Vector u = random_theta(spec, rng);
      CHECK_MESSAGE(std::isfinite(t.log_density(u)), to_string(spec.kind));
      CHECK_MESSAGE(gradient_matches_fd(t, u, 1e-4), to_string(spec.kind));
    }
  }
}

TEST_CASE("gamma mixture density is symmetric under swapping the shapes") {
  std::mt19937_64 rng(8);
  const ModelSpec spec = ModelSpec::gamma_mixture();
  const TargetModel t = posterior(spec, generate(spec, 300, rng));
  const Vector u = (Vector(2) << -0.4, 0.2).finished();
  const Vector swapped = (Vector(2) << 0.2, -0.4).finished();
  CHECK(t.log_density(u) == doctest::Approx(t.log_density(swapped)).epsilon(1e-12));
  CHECK(t.to_constrained(u)(0) == doctest::Approx(std::exp(-0.4)));
}

TEST_CASE("categorical subposterior is a Dirichlet seen through the ALR map") {
  ModelSpec spec = ModelSpec::rare_categorical(1000, 10);
  Dataset d;
  d.columns = {"category"};
  d.rows = Matrix::Constant(1000, 1, 2.0);
  d.rows.topRows(2).setConstant(0.0);
  d.rows.middleRows(2, 3).setConstant(1.0);  // counts (2, 3, 995)
  const std::size_t k = 10;
  const TargetModel t = subposterior(spec, d, k);
  // u-space density of Dirichlet(beta) is Dir(lambda(u); beta) * lambda1 lambda2 lambda3;
  // with the fractionated prior-and-Jacobian term beta = counts + prior / K.
  const Vector beta = (Vector(3) << 2.0 + 0.1, 3.0 + 0.1, 995.0 + 0.1).finished();
  auto dirichlet_u = [&](const Vector& u) {
    const Vector lam = t.to_constrained(u);
    double lp = std::lgamma(beta.sum());
    for (int j = 0; j < 3; ++j) lp += (beta(j) - 1.0) * std::log(lam(j)) - std::lgamma(beta(j));
    return lp + lam.array().log().sum();
  };
  std::mt19937_64 rng(9);
  const Vector u0 = (Vector(2) << -5.5, -5.0).finished();
  const double offset = t.log_density(u0) - dirichlet_u(u0);
  for (int i = 0; i < 50; ++i) {
    const Vector u = u0 + nap::testing::random_vector(2, rng);
    CHECK(t.log_density(u) - dirichlet_u(u) == doctest::Approx(offset).epsilon(1e-10));
  }
  const Vector lam = (Vector(3) << 0.2, 0.3, 0.5).finished();
  CHECK((t.to_constrained(to_unconstrained(spec, lam)) - lam).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("location posterior matches the closed form") {
  const ModelSpec spec = ModelSpec::gaussian_location();
  std::mt19937_64 rng(10);
  const Dataset d = generate(spec, 500, rng);
  const GaussianSummary g = location_posterior(spec, d);
  const TargetModel t = posterior(spec, d);
  // the log density is quadratic with its maximum at the posterior mean
  CHECK(t.grad_log_density(g.mean).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((g.mean - d.true_params).cwiseAbs().maxCoeff() < 0.2);
}

TEST_CASE("every model is finite over its unconstrained domain") {
  for (const auto& spec : all_specs()) {
    std::mt19937_64 rng(11);
    const TargetModel t = posterior(spec, generate(spec, 200, rng));
    for (int i = 0; i < 200; ++i) {
      const Vector u = nap::testing::random_vector(static_cast<Eigen::Index>(spec.param_dim()), rng, 3.0);
      CHECK_MESSAGE(std::isfinite(t.log_density(u)), to_string(spec.kind));
    }
  }
}

TEST_CASE("dataset csv round trip is exact") {
  std::mt19937_64 rng(12);
  const Dataset d = generate(ModelSpec::logistic_regression(3), 50, rng);
  const auto path = (std::filesystem::temp_directory_path() / "nap_dataset_roundtrip.csv").string();
  write_dataset_csv(d, path);
  const Dataset back = read_dataset_csv(path);
  CHECK(back.columns == d.columns);
  CHECK(back.rows == d.rows);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
