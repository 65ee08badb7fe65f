#include "nap/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>

namespace nap {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double normal_logpdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var)) - 0.5 * d * d / var;
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix covariate_cov(std::size_t p, double corr) {
  Matrix s(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::pow(corr, std::abs(static_cast<double>(i) - static_cast<double>(j)));
  return s;
}

Matrix obs_cov_matrix(const ModelSpec& spec) {
  Matrix c(2, 2);
  c << spec.obs_cov[0], spec.obs_cov[1], spec.obs_cov[2], spec.obs_cov[3];
  return c;
}

// ALR inverse: softmax over (u1, u2, 0).
Vector alr_to_simplex(const Vector& u) {
  const double m = std::max({u(0), u(1), 0.0});
  Vector e(3);
  e << std::exp(u(0) - m), std::exp(u(1) - m), std::exp(-m);
  return e / e.sum();
}

// --- per-model log densities ------------------------------------------------------------
// Each builder returns a TargetModel whose closures share immutable precomputed data.

TargetModel warped_gaussian_target(const ModelSpec& spec, const Dataset& data, double inv_k) {
  struct Stats {
    double n = 0, sum = 0, sum_sq = 0;
  };
  auto st = std::make_shared<Stats>();
  st->n = static_cast<double>(data.size());
  for (Eigen::Index i = 0; i < data.rows.rows(); ++i) {
    const double y = data.rows(i, 0);
    st->sum += y;
    st->sum_sq += y * y;
  }
  const double s2 = spec.sigma2;
  const double pv = spec.prior_var;
  TargetModel t;
  t.dim = 2;
  t.label = "warped_gaussian";
  t.log_density = [st, s2, pv, inv_k](const Vector& u) {
    const double m = u(0) + u(1) * u(1);
    const double rss = st->sum_sq - 2.0 * m * st->sum + st->n * m * m;
    const double lik = -0.5 * st->n * (kLog2Pi + std::log(s2)) - 0.5 * rss / s2;
    const double prior = normal_logpdf(u(0), 0.0, pv) + normal_logpdf(u(1), 0.0, pv);
    return inv_k * prior + lik;
  };
  t.grad_log_density = [st, s2, pv, inv_k](const Vector& u) {
    const double m = u(0) + u(1) * u(1);
    const double dm = (st->sum - st->n * m) / s2;
    Vector g(2);
    g << dm - inv_k * u(0) / pv, dm * 2.0 * u(1) - inv_k * u(1) / pv;
    return g;
  };
  t.to_constrained = [](const Vector& u) { return u; };
  return t;
}

TargetModel gamma_mixture_target(const ModelSpec& spec, const Dataset& data, double inv_k) {
  auto log_y = std::make_shared<std::vector<double>>();
  auto y = std::make_shared<std::vector<double>>();
  for (Eigen::Index i = 0; i < data.rows.rows(); ++i) {
    y->push_back(data.rows(i, 0));
    log_y->push_back(std::log(data.rows(i, 0)));
  }
  const double b1 = spec.beta1, b2 = spec.beta2;
  const double a0 = spec.alpha_prior_shape, s0 = spec.alpha_prior_scale;
  // Gamma(shape a0, scale s0) log prior on alpha plus log|d alpha / d u| = u.
  auto log_prior_u = [a0, s0](double u) {
    const double a = std::exp(u);
    return (a0 - 1.0) * u - a / s0 - std::lgamma(a0) - a0 * std::log(s0) + u;
  };
  auto dlog_prior_u = [a0, s0](double u) { return (a0 - 1.0) - std::exp(u) / s0 + 1.0; };

  TargetModel t;
  t.dim = 2;
  t.label = "gamma_mixture";
  t.log_density = [=](const Vector& u) {
    const double a1 = std::exp(u(0)), a2 = std::exp(u(1));
    if (!std::isfinite(a1) || !std::isfinite(a2) || a1 <= 0.0 || a2 <= 0.0) return -std::numeric_limits<double>::infinity();
    const double c1 = std::log(0.5) + a1 * std::log(b1) - std::lgamma(a1);
    const double c2 = std::log(0.5) + a2 * std::log(b2) - std::lgamma(a2);
    double lik = 0.0;
    for (std::size_t i = 0; i < y->size(); ++i) {
      const double l1 = c1 + (a1 - 1.0) * (*log_y)[i] - b1 * (*y)[i];
      const double l2 = c2 + (a2 - 1.0) * (*log_y)[i] - b2 * (*y)[i];
      const double m = std::max(l1, l2);
      lik += m + std::log(std::exp(l1 - m) + std::exp(l2 - m));
    }
    return inv_k * (log_prior_u(u(0)) + log_prior_u(u(1))) + lik;
  };
  t.grad_log_density = [=](const Vector& u) {
    const double a1 = std::exp(u(0)), a2 = std::exp(u(1));
    const double c1 = a1 * std::log(b1) - std::lgamma(a1);
    const double c2 = a2 * std::log(b2) - std::lgamma(a2);
    const double k1 = std::log(b1) - boost::math::digamma(a1);
    const double k2 = std::log(b2) - boost::math::digamma(a2);
    double g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < y->size(); ++i) {
      const double l1 = c1 + (a1 - 1.0) * (*log_y)[i] - b1 * (*y)[i];
      const double l2 = c2 + (a2 - 1.0) * (*log_y)[i] - b2 * (*y)[i];
      const double r1 = sigmoid(l1 - l2);
      g1 += r1 * (k1 + (*log_y)[i]);
      g2 += (1.0 - r1) * (k2 + (*log_y)[i]);
    }
    Vector g(2);
    g << g1 * a1 + inv_k * dlog_prior_u(u(0)), g2 * a2 + inv_k * dlog_prior_u(u(1));
    return g;
  };
  t.to_constrained = [](const Vector& u) { return Vector(u.array().exp()); };
  return t;
}

TargetModel logistic_target(const ModelSpec& spec, const Dataset& data, double inv_k) {
  const auto p = static_cast<Eigen::Index>(spec.p);
  require_shape(data.rows.cols() == p + 1, "logistic dataset must have p + 1 columns");
  struct Data {
    Matrix x;  // n x (p + 1), leading column of ones
    Vector y;
  };
  auto d = std::make_shared<Data>();
  const Eigen::Index n = data.rows.rows();
  d->x.resize(n, p + 1);
  d->x.col(0).setOnes();
  d->x.rightCols(p) = data.rows.rightCols(p);
  d->y = data.rows.col(0);
  const double pv = spec.coef_prior_var;

  TargetModel t;
  t.dim = static_cast<std::size_t>(p + 1);
  t.label = "logistic_regression";
  t.log_density = [d, pv, inv_k](const Vector& u) {
    const Vector eta = d->x * u;
    double lik = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) lik += d->y(i) * eta(i) - softplus(eta(i));
    double prior = 0.0;
    for (Eigen::Index j = 0; j < u.size(); ++j) prior += normal_logpdf(u(j), 0.0, pv);
    return inv_k * prior + lik;
  };
  t.grad_log_density = [d, pv, inv_k](const Vector& u) {
    const Vector eta = d->x * u;
    Vector resid(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) resid(i) = d->y(i) - sigmoid(eta(i));
    Vector g = d->x.transpose() * resid;
    g -= inv_k * u / pv;
    return g;
  };
  t.to_constrained = [](const Vector& u) { return u; };
  return t;
}

TargetModel categorical_target(const ModelSpec& spec, const Dataset& data, double inv_k) {
  Vector counts = Vector::Zero(3);
  for (Eigen::Index i = 0; i < data.rows.rows(); ++i) {
    const auto c = static_cast<Eigen::Index>(data.rows(i, 0));
    require_shape(c >= 0 && c < 3, "category out of range");
    counts(c) += 1.0;
  }
  Vector prior(3);
  prior << spec.dirichlet_prior[0], spec.dirichlet_prior[1], spec.dirichlet_prior[2];
  const double log_norm = std::lgamma(prior.sum()) - std::lgamma(prior(0)) - std::lgamma(prior(1)) -
                          std::lgamma(prior(2));
  // Exponents of log(lambda_j): likelihood counts, fractionated prior, and the
  // fractionated ALR Jacobian lambda1 * lambda2 * lambda3.
  const Vector expo = counts + inv_k * prior;
  const double constant = inv_k * log_norm;

  TargetModel t;
  t.dim = 2;
  t.label = "rare_categorical";
  t.log_density = [expo, constant](const Vector& u) {
    // log lambda_j = u_j - logsumexp(u1, u2, 0), with u3 = 0
    const double m = std::max({u(0), u(1), 0.0});
    const double lse = m + std::log(std::exp(u(0) - m) + std::exp(u(1) - m) + std::exp(-m));
    return constant + expo(0) * (u(0) - lse) + expo(1) * (u(1) - lse) + expo(2) * (-lse);
  };
  t.grad_log_density = [expo](const Vector& u) {
    const Vector lam = alr_to_simplex(u);
    const double total = expo.sum();
    Vector g(2);
    g << expo(0) - lam(0) * total, expo(1) - lam(1) * total;
    return g;
  };
  t.to_constrained = [](const Vector& u) { return alr_to_simplex(u); };
  return t;
}

TargetModel location_target(const ModelSpec& spec, const Dataset& data, double inv_k) {
  struct Stats {
    double n = 0;
    Vector sum;
    Matrix precision;
  };
  auto st = std::make_shared<Stats>();
  st->n = static_cast<double>(data.size());
  st->sum = data.rows.colwise().sum().transpose();
  st->precision = obs_cov_matrix(spec).inverse();
  const double pv = spec.prior_var;

  TargetModel t;
  t.dim = 2;
  t.label = "gaussian_location";
  // Likelihood up to a theta-free constant: theta' P sum - n/2 theta' P theta.
  t.log_density = [st, pv, inv_k](const Vector& u) {
    const Vector pu = st->precision * u;
    const double lik = st->sum.dot(pu) - 0.5 * st->n * u.dot(pu);
    const double prior = normal_logpdf(u(0), 0.0, pv) + normal_logpdf(u(1), 0.0, pv);
    return inv_k * prior + lik;
  };
  t.grad_log_density = [st, pv, inv_k](const Vector& u) {
    return Vector(st->precision * (st->sum - st->n * u) - inv_k * u / pv);
  };
  t.to_constrained = [](const Vector& u) { return u; };
  return t;
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::warped_gaussian: return "warped_gaussian";
    case ModelKind::gamma_mixture: return "gamma_mixture";
    case ModelKind::logistic_regression: return "logistic_regression";
    case ModelKind::rare_categorical: return "rare_categorical";
    case ModelKind::gaussian_location: return "gaussian_location";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  for (auto k : {ModelKind::warped_gaussian, ModelKind::gamma_mixture, ModelKind::logistic_regression,
                 ModelKind::rare_categorical, ModelKind::gaussian_location})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown model '" + name + "'");
}

ModelSpec ModelSpec::warped_gaussian() { return ModelSpec{}; }

ModelSpec ModelSpec::gamma_mixture() {
  ModelSpec s;
  s.kind = ModelKind::gamma_mixture;
  return s;
}

ModelSpec ModelSpec::logistic_regression(std::size_t p) {
  ModelSpec s;
  s.kind = ModelKind::logistic_regression;
  s.p = p;
  return s;
}

ModelSpec ModelSpec::rare_categorical(std::size_t n, std::size_t k) {
  if (n == 0) throw std::invalid_argument("rare_categorical needs n > 0");
  ModelSpec s;
  s.kind = ModelKind::rare_categorical;
  const double rare = 2.0 * static_cast<double>(k) / static_cast<double>(n);
  s.lambda = {rare, rare, 1.0 - 2.0 * rare};
  return s;
}

ModelSpec ModelSpec::gaussian_location() {
  ModelSpec s;
  s.kind = ModelKind::gaussian_location;
  return s;
}

void ModelSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid model spec: " + m); };
  switch (kind) {
    case ModelKind::warped_gaussian:
      if (!(sigma2 > 0.0)) fail("sigma2 must be positive");
      if (!(prior_var > 0.0)) fail("prior variance must be positive");
      break;
    case ModelKind::gamma_mixture:
      if (!(alpha1 > 0.0 && alpha2 > 0.0)) fail("gamma shapes must be positive");
      if (!(beta1 > 0.0 && beta2 > 0.0)) fail("gamma rates must be positive");
      if (!(alpha_prior_shape > 0.0 && alpha_prior_scale > 0.0)) fail("gamma prior must be proper");
      break;
    case ModelKind::logistic_regression:
      if (p == 0) fail("p must be at least 1");
      if (!(coef_var > 0.0 && coef_prior_var > 0.0)) fail("variances must be positive");
      if (!(std::abs(covariate_corr) < 1.0)) fail("covariate correlation must lie in (-1, 1)");
      break;
    case ModelKind::rare_categorical: {
      if (lambda.size() != 3 || dirichlet_prior.size() != 3) fail("categorical needs three outcomes");
      double total = 0.0;
      for (double l : lambda) {
        if (!(l > 0.0)) fail("lambda entries must be positive");
        total += l;
      }
      if (std::abs(total - 1.0) > 1e-12) fail("lambda must sum to one");
      for (double a : dirichlet_prior)
        if (!(a > 0.0)) fail("dirichlet prior must be positive");
      break;
    }
    case ModelKind::gaussian_location:
      if (location.size() != 2 || obs_cov.size() != 4) fail("location model is two-dimensional");
      if (!(obs_cov[0] > 0.0 && obs_cov[3] > 0.0 &&
            obs_cov[0] * obs_cov[3] - obs_cov[1] * obs_cov[2] > 0.0 && obs_cov[1] == obs_cov[2]))
        fail("observation covariance must be symmetric positive definite");
      if (!(prior_var > 0.0)) fail("prior variance must be positive");
      break;
  }
}

std::size_t ModelSpec::param_dim() const {
  return kind == ModelKind::logistic_regression ? p + 1 : 2;
}

std::vector<std::string> ModelSpec::param_names() const {
  switch (kind) {
    case ModelKind::warped_gaussian: return {"mu1", "mu2"};
    case ModelKind::gamma_mixture: return {"log_alpha1", "log_alpha2"};
    case ModelKind::rare_categorical: return {"alr1", "alr2"};
    case ModelKind::gaussian_location: return {"m1", "m2"};
    case ModelKind::logistic_regression: {
      std::vector<std::string> names;
      for (std::size_t j = 0; j <= p; ++j) names.push_back("theta" + std::to_string(j));
      return names;
    }
  }
  return {};
}

Dataset generate(const ModelSpec& spec, std::size_t n, std::mt19937_64& rng) {
  spec.validate();
  if (n == 0) throw std::invalid_argument("generate needs n > 0");
  const auto rows = static_cast<Eigen::Index>(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.label = to_string(spec.kind);
  switch (spec.kind) {
    case ModelKind::warped_gaussian: {
      d.columns = {"y"};
      d.rows.resize(rows, 1);
      const double mean = spec.mu1 + spec.mu2 * spec.mu2;
      const double sd = std::sqrt(spec.sigma2);
      for (Eigen::Index i = 0; i < rows; ++i) d.rows(i, 0) = mean + sd * normal(rng);
      d.true_params = Vector(2);
      d.true_params << spec.mu1, spec.mu2;
      break;
    }
    case ModelKind::gamma_mixture: {
      d.columns = {"y"};
      d.rows.resize(rows, 1);
      std::bernoulli_distribution pick(0.5);
      std::gamma_distribution<double> g1(spec.alpha1, 1.0 / spec.beta1);
      std::gamma_distribution<double> g2(spec.alpha2, 1.0 / spec.beta2);
      for (Eigen::Index i = 0; i < rows; ++i) {
        const bool first = pick(rng);
        double y = 0.0;
        while (!(y > 0.0)) y = first ? g1(rng) : g2(rng);  // shape < 1 can underflow to 0
        d.rows(i, 0) = y;
      }
      d.true_params = Vector(2);
      d.true_params << spec.alpha1, spec.alpha2;
      break;
    }
    case ModelKind::logistic_regression: {
      const auto p = static_cast<Eigen::Index>(spec.p);
      d.columns = {"y"};
      for (Eigen::Index j = 1; j <= p; ++j) d.columns.push_back("x" + std::to_string(j));
      Vector theta(p + 1);
      theta(0) = spec.intercept;
      const double coef_sd = std::sqrt(spec.coef_var);
      for (Eigen::Index j = 1; j <= p; ++j) theta(j) = coef_sd * normal(rng);
      const Eigen::MatrixXd lower = Eigen::LLT<Eigen::MatrixXd>(covariate_cov(spec.p, spec.covariate_corr)).matrixL();
      d.rows.resize(rows, p + 1);
      Vector z(p);
      for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) z(j) = normal(rng);
        const Vector x = lower * z;
        const double eta = theta(0) + theta.tail(p).dot(x);
        d.rows(i, 0) = sigmoid(eta) >= 0.5 ? 1.0 : 0.0;
        d.rows.row(i).tail(p) = x.transpose();
      }
      d.true_params = theta;
      break;
    }
    case ModelKind::rare_categorical: {
      d.columns = {"category"};
      d.rows.resize(rows, 1);
      std::discrete_distribution<int> cat(spec.lambda.begin(), spec.lambda.end());
      for (Eigen::Index i = 0; i < rows; ++i) d.rows(i, 0) = cat(rng);
      d.true_params = Vector(3);
      d.true_params << spec.lambda[0], spec.lambda[1], spec.lambda[2];
      break;
    }
    case ModelKind::gaussian_location: {
      d.columns = {"y1", "y2"};
      GaussianSummary g;
      g.mean = Vector(2);
      g.mean << spec.location[0], spec.location[1];
      g.covariance = obs_cov_matrix(spec);
      d.rows = sample_gaussian(g, n, rng);
      d.true_params = g.mean;
      break;
    }
  }
  return d;
}

ShardedData shard(const Dataset& data, std::size_t k, std::uint64_t seed) {
  if (k == 0 || k > data.size())
    throw PartitionError("cannot split " + std::to_string(data.size()) + " rows into " +
                         std::to_string(k) + " shards");
  std::vector<Eigen::Index> perm(data.size());
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<Eigen::Index>> members(k);
  for (std::size_t i = 0; i < perm.size(); ++i) members[i % k].push_back(perm[i]);

  ShardedData out;
  out.partition_seed = seed;
  for (std::size_t s = 0; s < k; ++s) {
    Dataset part;
    part.rows = data.rows(members[s], Eigen::all);
    part.columns = data.columns;
    part.label = data.label + "/shard" + std::to_string(s);
    part.true_params = data.true_params;
    out.shards.push_back(std::move(part));
  }
  return out;
}

TargetModel subposterior(const ModelSpec& spec, const Dataset& data, std::size_t k) {
  spec.validate();
  if (k == 0) throw std::invalid_argument("K must be positive");
  require_shape(data.size() > 0, "subposterior needs a nonempty shard");
  const double inv_k = 1.0 / static_cast<double>(k);
  switch (spec.kind) {
    case ModelKind::warped_gaussian: return warped_gaussian_target(spec, data, inv_k);
    case ModelKind::gamma_mixture: return gamma_mixture_target(spec, data, inv_k);
    case ModelKind::logistic_regression: return logistic_target(spec, data, inv_k);
    case ModelKind::rare_categorical: return categorical_target(spec, data, inv_k);
    case ModelKind::gaussian_location: return location_target(spec, data, inv_k);
  }
  throw std::invalid_argument("unknown model kind");
}

TargetModel posterior(const ModelSpec& spec, const Dataset& data) { return subposterior(spec, data, 1); }

Vector to_unconstrained(const ModelSpec& spec, const Vector& c) {
  switch (spec.kind) {
    case ModelKind::gamma_mixture: return Vector(c.array().log());
    case ModelKind::rare_categorical: {
      require_shape(c.size() == 3, "categorical parameters are a 3-simplex");
      Vector u(2);
      u << std::log(c(0) / c(2)), std::log(c(1) / c(2));
      return u;
    }
    default: return c;
  }
}

GaussianSummary location_posterior(const ModelSpec& spec, const Dataset& data) {
  require_shape(spec.kind == ModelKind::gaussian_location, "location_posterior needs the location model");
  const Matrix p = obs_cov_matrix(spec).inverse();
  const Matrix precision =
      Matrix::Identity(2, 2) / spec.prior_var + static_cast<double>(data.size()) * p;
  GaussianSummary g;
  g.covariance = precision.inverse();
  g.mean = g.covariance * (p * data.rows.colwise().sum().transpose());
  return g;
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (std::size_t j = 0; j < data.columns.size(); ++j) out << (j ? "," : "") << data.columns[j];
  out << '\n';
  out.precision(17);
  for (Eigen::Index i = 0; i < data.rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.rows.cols(); ++j) out << (j ? "," : "") << data.rows(i, j);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  Dataset d;
  d.label = path;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": missing header row");
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) d.columns.push_back(col);
  }
  std::vector<double> values;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t cols = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::stod(cell));
      ++cols;
    }
    if (cols != d.columns.size())
      throw std::runtime_error(path + ": row " + std::to_string(n + 1) + " has " + std::to_string(cols) +
                               " fields, expected " + std::to_string(d.columns.size()));
    ++n;
  }
  d.rows = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(n),
                              static_cast<Eigen::Index>(d.columns.size()));
  return d;
}

}  // namespace nap
