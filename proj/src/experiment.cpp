#include "nap/experiment.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "nap/parallel.hpp"
#include "nap/seed.hpp"

namespace nap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw std::invalid_argument("unknown config key '" + where + key + "'");
}

template <typename T>
void read_if(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

// Selects exactly r rows: evenly spaced when there are enough, otherwise resampled.
Matrix take_rows(const Matrix& m, std::size_t r, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(r);
  const auto n = static_cast<std::size_t>(m.rows());
  if (n >= r) {
    for (std::size_t i = 0; i < r; ++i) idx[i] = static_cast<Eigen::Index>(i * n / r);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Eigen::Index> u(0, m.rows() - 1);
    for (auto& i : idx) i = u(rng);
  }
  return m(idx, Eigen::all);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string samples_csv(const Matrix& m, const std::vector<std::string>& names, const std::string& hash) {
  std::ostringstream os;
  os << "# config_hash=" << hash << '\n';
  for (std::size_t j = 0; j < names.size(); ++j) os << (j ? "," : "") << names[j];
  os << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << fmt17(m(i, j));
    os << '\n';
  }
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------------------
// Config

std::string to_string(Method m) {
  switch (m) {
    case Method::nap: return "nap";
    case Method::param: return "param";
    case Method::consensus: return "consensus";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  for (auto m : {Method::nap, Method::param, Method::consensus})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown method '" + name + "'");
}

void ExperimentConfig::validate() const {
  model.validate();
  if (k == 0) throw std::invalid_argument("K must be positive");
  if (n < k) throw std::invalid_argument("N must be at least K");
  if (r == 0 || t < r) throw std::invalid_argument("need T >= R >= 1");
  if (s < 2) throw std::invalid_argument("S must be at least 2");
  if (methods.empty()) throw std::invalid_argument("at least one method must be enabled");
  if (model.param_dim() < 2) throw UnsupportedDimension("flows need D >= 2");
  if (nap_mode.kind == NapSirMode::Kind::single && nap_mode.proposal >= k)
    throw std::invalid_argument("nap_mode proposal index out of range");
  if (train.iterations <= 0 || !(train.learning_rate > 0.0) || train.batch_size == 0)
    throw std::invalid_argument("invalid train settings");
  if (flow.layers == 0) throw std::invalid_argument("flow needs at least one layer");
  for (auto h : flow.hidden)
    if (h == 0) throw std::invalid_argument("hidden widths must be positive");
  if (mcmc.n_chains == 0) throw std::invalid_argument("mcmc chains must be positive");
  if (mcmc.algorithm == McmcAlgorithm::hmc && mcmc.hmc_leapfrog_steps == 0)
    throw std::invalid_argument("HMC needs at least one leapfrog step");
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  reject_unknown_keys(j, {"model", "p", "N", "K", "S", "T", "R", "flow", "train", "mcmc", "methods",
                          "nap_mode", "seed", "out", "threads"},
                      "");
  ExperimentConfig c;
  read_if(j, "N", c.n);
  read_if(j, "K", c.k);
  read_if(j, "S", c.s);
  read_if(j, "T", c.t);
  read_if(j, "R", c.r);
  const ModelKind kind = model_kind_from_string(j.value("model", std::string("warped_gaussian")));
  switch (kind) {
    case ModelKind::warped_gaussian: c.model = ModelSpec::warped_gaussian(); break;
    case ModelKind::gamma_mixture: c.model = ModelSpec::gamma_mixture(); break;
    case ModelKind::logistic_regression: c.model = ModelSpec::logistic_regression(j.value("p", std::size_t{10})); break;
    case ModelKind::rare_categorical: c.model = ModelSpec::rare_categorical(c.n, c.k); break;
    case ModelKind::gaussian_location: c.model = ModelSpec::gaussian_location(); break;
  }
  if (j.contains("p") && kind != ModelKind::logistic_regression)
    throw std::invalid_argument("config key 'p' only applies to logistic_regression");

  if (j.contains("flow")) {
    const auto& f = j.at("flow");
    reject_unknown_keys(f, {"layers", "hidden"}, "flow.");
    read_if(f, "layers", c.flow.layers);
    read_if(f, "hidden", c.flow.hidden);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown_keys(t, {"iterations", "learning_rate", "batch_size"}, "train.");
    read_if(t, "iterations", c.train.iterations);
    read_if(t, "learning_rate", c.train.learning_rate);
    read_if(t, "batch_size", c.train.batch_size);
  }
  if (j.contains("mcmc")) {
    const auto& m = j.at("mcmc");
    reject_unknown_keys(m, {"algorithm", "chains", "warmup", "step_size", "leapfrog_steps", "adapt", "step_jitter", "init_jitter", "thin"},
                        "mcmc.");
    const std::string algo = m.value("algorithm", std::string("rwm"));
    if (algo == "rwm") c.mcmc.algorithm = McmcAlgorithm::rwm;
    else if (algo == "hmc") c.mcmc.algorithm = McmcAlgorithm::hmc;
    else throw std::invalid_argument("unknown mcmc algorithm '" + algo + "'");
    read_if(m, "chains", c.mcmc.n_chains);
    if (m.contains("warmup") && !m.at("warmup").is_null()) c.mcmc.n_warmup = m.at("warmup").get<std::size_t>();
    read_if(m, "step_size", c.mcmc.hmc_step_size);
    read_if(m, "leapfrog_steps", c.mcmc.hmc_leapfrog_steps);
    read_if(m, "adapt", c.mcmc.hmc_adapt);
    read_if(m, "step_jitter", c.mcmc.hmc_step_jitter);
    read_if(m, "init_jitter", c.mcmc.init_jitter);
    read_if(m, "thin", c.mcmc.thin);
  }
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(method_from_string(m.get<std::string>()));
  }
  if (j.contains("nap_mode")) {
    const std::string mode = j.at("nap_mode").get<std::string>();
    if (mode == "installments") c.nap_mode = NapSirMode::installments();
    else if (mode.rfind("single:", 0) == 0) c.nap_mode = NapSirMode::single(std::stoul(mode.substr(7)));
    else throw std::invalid_argument("nap_mode must be 'installments' or 'single:<k>'");
  }
  read_if(j, "seed", c.seed);
  read_if(j, "out", c.out_dir);
  read_if(j, "threads", c.threads);
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  json j;
  j["model"] = to_string(model.kind);
  if (model.kind == ModelKind::logistic_regression) j["p"] = model.p;
  j["N"] = n;
  j["K"] = k;
  j["S"] = s;
  j["T"] = t;
  j["R"] = r;
  j["flow"] = {{"layers", flow.layers}, {"hidden", flow.hidden}};
  j["train"] = {{"iterations", train.iterations},
                {"learning_rate", train.learning_rate},
                {"batch_size", train.batch_size}};
  json m = {{"algorithm", mcmc.algorithm == McmcAlgorithm::hmc ? "hmc" : "rwm"},
            {"chains", mcmc.n_chains},
            {"step_size", mcmc.hmc_step_size},
            {"leapfrog_steps", mcmc.hmc_leapfrog_steps},
            {"adapt", mcmc.hmc_adapt},
            {"step_jitter", mcmc.hmc_step_jitter},
            {"init_jitter", mcmc.init_jitter},
            {"thin", mcmc.thin}};
  m["warmup"] = mcmc.n_warmup ? json(*mcmc.n_warmup) : json(nullptr);
  j["mcmc"] = m;
  json methods_json = json::array();
  for (auto meth : methods) methods_json.push_back(to_string(meth));
  j["methods"] = methods_json;
  j["nap_mode"] = nap_mode.kind == NapSirMode::Kind::installments
                      ? std::string("installments")
                      : "single:" + std::to_string(nap_mode.proposal);
  j["seed"] = seed;
  j["out"] = out_dir;
  j["threads"] = threads;
  return j;
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("out");
  j.erase("threads");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

StageError::StageError(const std::string& stage, int shard, std::uint64_t seed, const std::string& cause)
    : std::runtime_error("stage '" + stage + "'" + (shard >= 0 ? " shard " + std::to_string(shard) : "") +
                         " seed " + std::to_string(seed) + ": " + cause),
      stage_(stage), shard_(shard), seed_(seed) {}

const MethodResult& RunArtifacts::result(Method m) const {
  for (const auto& r : results)
    if (r.method == m) return r;
  throw std::out_of_range("method " + to_string(m) + " was not run");
}

// ---------------------------------------------------------------------------------------
// Pipeline

RunArtifacts run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  RunArtifacts a;
  a.config = cfg;
  a.config_hash = cfg.hash();
  Stopwatch clock;

  auto stage = [&](const std::string& name, int shard, std::uint64_t seed, auto&& fn) {
    try {
      return fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, shard, seed, e.what());
    }
  };

  const std::uint64_t data_seed = derive_seed(cfg.seed, {stream::data});
  a.data = stage("generate", -1, data_seed, [&] {
    std::mt19937_64 rng(data_seed);
    return generate(cfg.model, cfg.n, rng);
  });
  const std::uint64_t part_seed = derive_seed(cfg.seed, {stream::partition});
  const ShardedData sharded = stage("shard", -1, part_seed, [&] { return shard(a.data, cfg.k, part_seed); });
  a.wall_times["data"] = clock.lap();

  // Workers: each touches only its own shard and hands back samples plus a serialized flow.
  a.shard_samples.resize(cfg.k);
  a.fits.resize(cfg.k);
  a.blobs.resize(cfg.k);
  std::vector<double> sample_secs(cfg.k), fit_secs(cfg.k);
  parallel_for(cfg.k, cfg.threads, [&](std::size_t k) {
    Stopwatch w;
    McmcConfig mc = cfg.mcmc;
    mc.n_samples = cfg.s;
    mc.seed = derive_seed(cfg.seed, {stream::subposterior_mcmc, k});
    mc.threads = 1;
    const int shard_id = static_cast<int>(k);
    a.shard_samples[k] = stage("subposterior_mcmc", shard_id, mc.seed, [&] {
      SampleSet s = mcmc_sample(subposterior(cfg.model, sharded.shards[k], cfg.k), mc);
      s.shard = shard_id;
      return s;
    });
    sample_secs[k] = w.lap();
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, {stream::flow_fit, k});
    a.fits[k] = stage("flow_fit", shard_id, tc.seed,
                      [&] { return fit_flow(a.shard_samples[k].values, cfg.flow, tc); });
    a.blobs[k] = serialize(a.fits[k].model);
    fit_secs[k] = w.lap();
  });
  a.wall_times["worker_sampling_max"] = *std::max_element(sample_secs.begin(), sample_secs.end());
  a.wall_times["worker_fit_max"] = *std::max_element(fit_secs.begin(), fit_secs.end());
  a.wall_times["workers"] = clock.lap();
  for (std::size_t k = 0; k < cfg.k; ++k)
    for (const auto& w : a.fits[k].warnings) a.warnings.push_back("shard " + std::to_string(k) + ": " + w);

  // Server: only the blobs (for NAP) or the raw draws (for the sample-shipping baselines).
  std::vector<Matrix> shard_values;
  for (const auto& s : a.shard_samples) shard_values.push_back(s.values);
  const std::uint64_t agg_seed = derive_seed(cfg.seed, {stream::aggregation});
  const std::uint64_t base_seed = derive_seed(cfg.seed, {stream::baseline});
  for (Method m : cfg.methods) {
    MethodResult res;
    res.method = m;
    Stopwatch w;
    switch (m) {
      case Method::nap: {
        auto nap = stage("aggregate_nap", -1, agg_seed, [&] {
          const auto ensemble = SubposteriorEnsemble::from_blobs(a.blobs);
          res.metrics.bytes_communicated = ensemble.bytes_ingested;
          return nap_sir(ensemble, cfg.t, cfg.r, agg_seed, cfg.nap_mode, cfg.threads);
        });
        res.samples = std::move(nap.samples);
        res.metrics.weight_ess = nap.min_weight_ess();
        res.metrics.warnings = nap.warnings;
        break;
      }
      case Method::param: {
        auto merged = stage("aggregate_param", -1, base_seed,
                            [&] { return parametric_merge(shard_values, cfg.r, base_seed); });
        res.samples = std::move(merged.samples);
        res.metrics.warnings = merged.warnings;
        break;
      }
      case Method::consensus: {
        auto merged = stage("aggregate_consensus", -1, base_seed, [&] { return consensus_merge(shard_values); });
        res.samples = take_rows(merged.samples, cfg.r, base_seed);
        res.metrics.warnings = merged.warnings;
        break;
      }
    }
    if (m != Method::nap) res.metrics.bytes_communicated = cfg.s * cfg.k * cfg.model.param_dim() * sizeof(double);
    res.metrics.wall_times["aggregate"] = w.lap();
    a.results.push_back(std::move(res));
  }
  a.wall_times["aggregation"] = clock.lap();

  McmcConfig gt = cfg.mcmc;
  gt.n_samples = cfg.s;
  gt.seed = derive_seed(cfg.seed, {stream::ground_truth});
  gt.threads = cfg.threads;
  a.ground_truth = stage("ground_truth", -1, gt.seed, [&] { return mcmc_sample(posterior(cfg.model, a.data), gt); });
  a.ground_truth.label = "ground_truth";
  a.wall_times["ground_truth"] = clock.lap();

  for (auto& res : a.results) {
    MetricsReport full = stage("metrics", -1, cfg.seed, [&] {
      return compare(to_string(res.method), res.samples, a.ground_truth.values);
    });
    full.weight_ess = res.metrics.weight_ess;
    full.bytes_communicated = res.metrics.bytes_communicated;
    full.wall_times = res.metrics.wall_times;
    full.warnings.insert(full.warnings.begin(), res.metrics.warnings.begin(), res.metrics.warnings.end());
    res.metrics = std::move(full);
    for (const auto& w : res.metrics.warnings) a.warnings.push_back(to_string(res.method) + ": " + w);
  }
  a.communication = communication_report(a.blobs, cfg.s, cfg.model.param_dim());
  a.wall_times["metrics"] = clock.lap();
  return a;
}

// ---------------------------------------------------------------------------------------
// Output

std::string metrics_csv_header() {
  return "config_hash,model,method,N,K,S,T,R,seed,rmse_per_dim,concentration_ratio,kl_divergence,"
         "weight_ess,bytes_communicated,bytes_sample_shipping";
}

std::string metrics_csv_row(const RunArtifacts& a, const MethodResult& m) {
  const auto& c = a.config;
  std::ostringstream os;
  os << a.config_hash << ',' << to_string(c.model.kind) << ',' << to_string(m.method) << ',' << c.n << ','
     << c.k << ',' << c.s << ',' << c.t << ',' << c.r << ',' << c.seed << ',' << fmt17(m.metrics.rmse) << ','
     << fmt17(m.metrics.concentration_ratio) << ',' << fmt17(m.metrics.kl_divergence) << ','
     << (m.metrics.weight_ess ? fmt17(*m.metrics.weight_ess) : std::string()) << ','
     << m.metrics.bytes_communicated << ',' << a.communication.sample_shipping_bytes;
  return os.str();
}

std::string scatter_svg(const Matrix& truth, const Matrix& approx, const std::string& title,
                        const std::string& config_hash) {
  require_shape(truth.cols() == 2 && approx.cols() == 2, "scatter plots need two-dimensional samples");
  constexpr double size = 480.0, pad = 30.0;
  Eigen::RowVector2d lo = truth.colwise().minCoeff().cwiseMin(approx.colwise().minCoeff());
  Eigen::RowVector2d hi = truth.colwise().maxCoeff().cwiseMax(approx.colwise().maxCoeff());
  for (int j = 0; j < 2; ++j)
    if (!(hi(j) > lo(j))) {
      lo(j) -= 1.0;
      hi(j) += 1.0;
    }
  auto px = [&](double v, int j) {
    const double f = (v - lo(j)) / (hi(j) - lo(j));
    return j == 0 ? pad + f * (size - 2 * pad) : size - pad - f * (size - 2 * pad);
  };
  std::ostringstream os;
  os.precision(5);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
     << "\" viewBox=\"0 0 " << size << ' ' << size << "\">\n"
     << "<!-- config_hash=" << config_hash << " -->\n"
     << "<style>.truth{fill:#1f4fd1;fill-opacity:0.35}.approx{fill:#1a9641;fill-opacity:0.35}</style>\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << pad << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">" << title << "</text>\n";
  auto group = [&](const Matrix& m, const char* cls) {
    os << "<g class=\"" << cls << "\">\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      os << "<circle cx=\"" << px(m(i, 0), 0) << "\" cy=\"" << px(m(i, 1), 1) << "\" r=\"1.5\"/>\n";
    os << "</g>\n";
  };
  group(truth, "truth");
  group(approx, "approx");
  os << "</svg>\n";
  return os.str();
}

void emit_results(const RunArtifacts& a, const std::string& dir) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "blobs", ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
  const auto names = a.config.model.param_names();
  const bool plot = a.config.model.param_dim() == 2;
  if (plot) fs::create_directories(root / "plots");

  std::string metrics = metrics_csv_header() + "\n";
  for (const auto& m : a.results) {
    metrics += metrics_csv_row(a, m) + "\n";
    write_text(root / ("samples_" + to_string(m.method) + ".csv"), samples_csv(m.samples, names, a.config_hash));
    if (plot)
      write_text(root / "plots" / (to_string(m.method) + ".svg"),
                 scatter_svg(a.ground_truth.values, m.samples,
                             to_string(a.config.model.kind) + ": ground truth vs " + to_string(m.method),
                             a.config_hash));
  }
  write_text(root / "metrics.csv", metrics);
  write_text(root / "ground_truth.csv", samples_csv(a.ground_truth.values, names, a.config_hash));
  write_text(root / "config.json", a.config.to_json().dump(2) + "\n");
  for (std::size_t k = 0; k < a.blobs.size(); ++k) {
    const auto& b = a.blobs[k];
    write_text(root / "blobs" / ("shard" + std::to_string(k) + ".nvp"),
               std::string(reinterpret_cast<const char*>(b.data()), b.size()));
  }
  std::string timings = "config_hash,stage,seconds\n";
  for (const auto& [stage, secs] : a.wall_times) timings += a.config_hash + "," + stage + "," + fmt17(secs) + "\n";
  write_text(root / "timings.csv", timings);
}

// ---------------------------------------------------------------------------------------
// Sweeps

SweepAxis SweepAxis::parse(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
    throw std::invalid_argument("axis must look like name=v1,v2,...");
  SweepAxis axis;
  axis.name = text.substr(0, eq);
  std::stringstream ss(text.substr(eq + 1));
  std::string v;
  while (std::getline(ss, v, ','))
    if (!v.empty()) axis.values.push_back(v);
  if (axis.values.empty()) throw std::invalid_argument("axis has no values");
  return axis;
}

namespace {

json with_axis_value(json cfg, const std::string& key, const std::string& value) {
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;
  }
  json* node = &cfg;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  (*node)[parts.back()] = parsed;
  return cfg;
}

}  // namespace

std::vector<SweepRow> sweep(const json& config_template, const SweepAxis& axis, std::size_t repeats,
                            const std::string& out_dir) {
  if (axis.values.empty()) throw std::invalid_argument("sweep axis is empty");
  if (repeats == 0) throw std::invalid_argument("repeats must be positive");
  std::vector<SweepRow> rows;
  for (const auto& value : axis.values) {
    std::map<std::string, std::vector<SweepRow>> per_method;
    for (std::size_t rep = 0; rep < repeats; ++rep) {
      try {
        json j = with_axis_value(config_template, axis.name, value);
        ExperimentConfig cfg = ExperimentConfig::from_json(j);
        if (rep > 0) cfg.seed = derive_seed(cfg.seed, {stream::repeat, rep});
        const RunArtifacts a = run_experiment(cfg);
        if (!out_dir.empty())
          emit_results(a, (fs::path(out_dir) / (axis.name + "=" + value) / ("rep" + std::to_string(rep))).string());
        for (const auto& m : a.results) {
          SweepRow row;
          row.axis_value = value;
          row.repeat = std::to_string(rep);
          row.method = to_string(m.method);
          row.rmse = m.metrics.rmse;
          row.concentration_ratio = m.metrics.concentration_ratio;
          row.kl_divergence = m.metrics.kl_divergence;
          row.weight_ess = m.metrics.weight_ess.value_or(0.0);
          row.bytes_communicated = static_cast<double>(m.metrics.bytes_communicated);
          rows.push_back(row);
          per_method[row.method].push_back(row);
        }
      } catch (const std::exception& e) {
        SweepRow row;
        row.axis_value = value;
        row.repeat = std::to_string(rep);
        row.method = "-";
        row.status = std::string("error: ") + e.what();
        rows.push_back(row);
      }
    }
    for (const auto& [method, runs] : per_method) {
      SweepRow mean;
      mean.axis_value = value;
      mean.repeat = "mean";
      mean.method = method;
      const double n = static_cast<double>(runs.size());
      for (const auto& r : runs) {
        mean.rmse += r.rmse / n;
        mean.concentration_ratio += r.concentration_ratio / n;
        mean.kl_divergence += r.kl_divergence / n;
        mean.weight_ess += r.weight_ess / n;
        mean.bytes_communicated += r.bytes_communicated / n;
      }
      if (runs.size() < repeats) mean.status = "partial:" + std::to_string(runs.size()) + "/" + std::to_string(repeats);
      rows.push_back(mean);
    }
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "sweep.csv", sweep_csv(axis.name, rows));
  }
  return rows;
}

std::string sweep_csv(const std::string& axis_name, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "axis,value,repeat,method,rmse_per_dim,concentration_ratio,kl_divergence,weight_ess,bytes_communicated,status\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    for (auto& ch : status)
      if (ch == ',' || ch == '\n') ch = ';';
    os << axis_name << ',' << r.axis_value << ',' << r.repeat << ',' << r.method << ',' << fmt17(r.rmse) << ','
       << fmt17(r.concentration_ratio) << ',' << fmt17(r.kl_divergence) << ',' << fmt17(r.weight_ess) << ','
       << fmt17(r.bytes_communicated) << ',' << status << '\n';
  }
  return os.str();
}

}  // namespace nap
