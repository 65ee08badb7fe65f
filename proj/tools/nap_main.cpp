#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "nap/experiment.hpp"

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  return nlohmann::json::parse(in);
}

void apply_overrides(nlohmann::json& j, const std::optional<std::uint64_t>& seed,
                     const std::optional<std::string>& out, const std::optional<std::size_t>& threads) {
  if (seed) j["seed"] = *seed;
  if (out) j["out"] = *out;
  if (threads) j["threads"] = *threads;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parallel MCMC aggregation with normalizing-flow subposterior approximations"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;

  auto* run = app.add_subcommand("run", "Run one experiment and write results");
  run->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the master seed");
  run->add_option("--out", out, "Override the output directory");
  run->add_option("--threads", threads, "Worker threads");

  std::string axis_text;
  std::size_t repeats = 1;
  auto* sweep = app.add_subcommand("sweep", "Run a config over one varying key");
  sweep->add_option("--config", config_path, "JSON config template")->required()->check(CLI::ExistingFile);
  sweep->add_option("--axis", axis_text, "name=v1,v2,... (dotted names reach nested keys)")->required();
  sweep->add_option("--repeats", repeats, "Runs per axis value")->check(CLI::PositiveNumber);
  sweep->add_option("--seed", seed, "Override the master seed");
  sweep->add_option("--out", out, "Override the output directory");
  sweep->add_option("--threads", threads, "Worker threads");

  CLI11_PARSE(app, argc, argv);

  try {
    nlohmann::json j = read_json(config_path);
    apply_overrides(j, seed, out, threads);
    if (*run) {
      const nap::ExperimentConfig cfg = nap::ExperimentConfig::from_json(j);
      const nap::RunArtifacts a = nap::run_experiment(cfg);
      nap::emit_results(a, cfg.out_dir);
      for (const auto& w : a.warnings) std::cerr << "warning: " << w << '\n';
      std::cout << nap::metrics_csv_header() << '\n';
      for (const auto& m : a.results) std::cout << nap::metrics_csv_row(a, m) << '\n';
      std::cout << "results written to " << cfg.out_dir << '\n';
    } else {
      const nap::SweepAxis axis = nap::SweepAxis::parse(axis_text);
      const std::string dir = j.value("out", std::string("results"));
      j.erase("out");
      const auto rows = nap::sweep(j, axis, repeats, dir);
      std::cout << nap::sweep_csv(axis.name, rows);
      for (const auto& r : rows)
        if (r.status.rfind("error", 0) == 0) return 1;
    }
  } catch (const nap::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
