#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "nap/aggregate.hpp"
#include "nap/flow.hpp"
#include "nap/metrics.hpp"
#include "nap/models.hpp"
#include "nap/sampler.hpp"

namespace nap {

enum class Method { nap, param, consensus };
std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct ExperimentConfig {
  ModelSpec model = ModelSpec::warped_gaussian();
  std::size_t n = 2000;  // observations
  std::size_t k = 5;     // shards
  std::size_t s = 1000;  // draws per subposterior
  std::size_t t = 4000;  // NAP candidates
  std::size_t r = 1000;  // final draws per method
  FlowArch flow{3, {64, 64}};
  TrainConfig train;
  McmcConfig mcmc;
  std::vector<Method> methods{Method::nap, Method::param, Method::consensus};
  NapSirMode nap_mode = NapSirMode::installments();
  std::uint64_t seed = 1;
  std::string out_dir = "results";
  std::size_t threads = 1;

  void validate() const;

  /// Keys mirror the field names; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// FNV-1a of the canonical JSON (output directory and thread count excluded).
  std::string hash() const;
};

ExperimentConfig load_config(const std::string& path);

/// Raised when a pipeline stage fails; carries enough to replay it.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, int shard, std::uint64_t seed, const std::string& cause);
  const std::string& stage() const { return stage_; }
  int shard() const { return shard_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::string stage_;
  int shard_;
  std::uint64_t seed_;
};

struct MethodResult {
  Method method = Method::nap;
  Matrix samples;  // R x D, unconstrained
  MetricsReport metrics;
};

struct RunArtifacts {
  ExperimentConfig config;
  std::string config_hash;
  Dataset data;
  std::vector<SampleSet> shard_samples;
  std::vector<std::vector<std::uint8_t>> blobs;
  std::vector<FitReport> fits;
  SampleSet ground_truth;
  std::vector<MethodResult> results;
  CommunicationReport communication;
  std::map<std::string, double> wall_times;
  std::vector<std::string> warnings;

  const MethodResult& result(Method m) const;
};

/// generate -> shard -> per-shard MCMC and flow fit (parallel) -> serialize -> aggregate
/// per method -> centralized ground truth -> metrics. Deterministic given the config.
RunArtifacts run_experiment(const ExperimentConfig& cfg);

/// metrics.csv, samples_<method>.csv, ground_truth.csv, timings.csv, config.json,
/// blobs/shard<k>.nvp and, for D = 2, plots/<method>.svg.
void emit_results(const RunArtifacts& artifacts, const std::string& dir);

std::string metrics_csv_header();
std::string metrics_csv_row(const RunArtifacts& a, const MethodResult& m);
std::string scatter_svg(const Matrix& truth, const Matrix& approx, const std::string& title,
                        const std::string& config_hash);

struct SweepAxis {
  std::string name;  // config key, dotted for nested keys (e.g. "train.learning_rate")
  std::vector<std::string> values;

  /// Parses "name=v1,v2,...".
  static SweepAxis parse(const std::string& text);
};

struct SweepRow {
  std::string axis_value;
  std::string repeat;  // index, or "mean"
  std::string method;
  double rmse = 0.0;
  double concentration_ratio = 0.0;
  double kl_divergence = 0.0;
  double weight_ess = 0.0;
  double bytes_communicated = 0.0;
  std::string status = "ok";
};

/// Runs the template once per (axis value, repeat); repeat 0 keeps the template seed.
/// Failed cells are recorded and the sweep continues. Writes sweep.csv (and per-run
/// outputs under <value>/rep<r>/) when `out_dir` is nonempty.
std::vector<SweepRow> sweep(const nlohmann::json& config_template, const SweepAxis& axis,
                            std::size_t repeats, const std::string& out_dir);

std::string sweep_csv(const std::string& axis_name, const std::vector<SweepRow>& rows);

}  // namespace nap
