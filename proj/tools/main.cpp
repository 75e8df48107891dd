// cashomon command line: run experiments, solve capacity problems, compute
// variable importance clouds, and generate synthetic datasets.
//
// Exit codes: 0 success, 1 I/O failure, 2 validation failure. Errors go to
// stderr as a small JSON object so scripts can parse them.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cashomon/bench.hpp"
#include "cashomon/capacity.hpp"
#include "cashomon/importance.hpp"
#include "cashomon/io.hpp"
#include "cashomon/space.hpp"

namespace {

using cashomon::io::format_double;
using cashomon::io::read_file;
using cashomon::io::write_file;

int report_error(const std::string& message, int code) {
  nlohmann::json doc;
  doc["error"] = message;
  doc["exit_code"] = code;
  std::cerr << doc.dump(2) << "\n";
  return code;
}

// Validation problems arrive as invalid_argument and exit 2; everything else
// (unreadable files, unwritable paths) is treated as I/O and exits 1.
template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    return report_error(e.what(), 2);
  } catch (const std::exception& e) {
    return report_error(e.what(), 1);
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

int resolve_jobs(bool flag_given, int flag_value) {
  if (flag_given) {
    require(flag_value >= 1, "jobs: must be at least 1");
    return flag_value;
  }
  const char* env = std::getenv("CASHOMON_JOBS");
  if (env == nullptr || *env == '\0') return 1;
  int value = 0;
  bool ok = false;
  try {
    std::size_t pos = 0;
    value = std::stoi(env, &pos);
    ok = pos == std::string(env).size();
  } catch (const std::exception&) {
  }
  require(ok && value >= 1, "CASHOMON_JOBS: must be a positive integer");
  return value;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, bool seed_given,
            std::uint64_t seed, bool jobs_given, int jobs_value, bool verbose) {
  namespace bench = cashomon::bench;
  const int jobs = resolve_jobs(jobs_given, jobs_value);
  bench::ExperimentConfig config = bench::experiment_config_from_json_text(read_file(config_path));
  if (seed_given) config.seeds = {seed};

  bench::ExperimentResult result = bench::run_experiment(config, jobs);
  const std::vector<std::string> written = bench::write_experiment_files(result, out_dir);

  std::size_t failed = 0;
  for (const bench::RunCell& cell : result.cells) {
    if (cell.failed) ++failed;
    if (verbose) {
      std::cout << "cell " << cashomon::lse::to_string(cell.algo) << " seed " << cell.seed << " "
                << (cell.failed ? "failed: " + cell.error : "ok") << "\n";
    }
  }
  std::cout << "config_hash " << result.config_hash << "\n";
  std::cout << "candidates " << result.candidates.size() << "\n";
  std::cout << "truth_size " << result.truth.size() << "\n";
  std::cout << "cells " << result.cells.size() << "\n";
  std::cout << "failed_cells " << failed << "\n";
  for (const std::string& path : written) std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_capacity(const std::string& input_path, const std::string& task, double tol, int max_iter,
                 const std::string& out_path) {
  namespace capacity = cashomon::capacity;
  require(task == "regression" || task == "classification",
          "task: must be 'regression' or 'classification'");
  require(tol > 0.0, "tol: must be positive");
  require(max_iter >= 1, "max-iter: must be at least 1");

  const std::string text = read_file(input_path);
  const capacity::PredictionMatrix preds = task == "regression"
                                               ? capacity::regression_from_csv(text)
                                               : capacity::classification_from_json_text(text);
  const capacity::CapacityResult result = capacity::solve_capacity(preds, tol, max_iter);

  std::cout << "value " << format_double(result.value) << "\n";
  std::cout << "weights";
  for (Eigen::Index i = 0; i < result.w.size(); ++i) {
    std::cout << " " << format_double(result.w(i));
  }
  std::cout << "\n";
  std::cout << "duality_gap " << format_double(result.gap) << "\n";
  std::cout << "iterations " << result.iterations << "\n";
  std::cout << "converged " << (result.converged ? "true" : "false") << "\n";
  if (!out_path.empty()) write_file(out_path, capacity::capacity_result_to_json(result));
  return 0;
}

// Models config: {"schema_version": 1, "task": ..., "repeats": ..., "seed":
// ..., "models": [{"class": "ridge", "hpc": 0.001}, ...]}. The dataset CSV
// must carry the target in its last column. Learners fit on the train split;
// importances are measured on the held out third.
int cmd_vic(const std::string& models_path, const std::string& data_path,
            const std::string& out_path, bool seed_given, std::uint64_t seed_override) {
  namespace importance = cashomon::importance;

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(models_path));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("invalid models JSON: ") + e.what());
  }
  require(doc.is_object(), "models config must be a JSON object");
  require(doc.contains("schema_version") && doc["schema_version"].is_number_integer(),
          "schema_version: missing or not an integer");
  require(doc["schema_version"].get<int>() == 1, "schema_version: only version 1 is supported");

  importance::TaskKind task = importance::TaskKind::kRegression;
  if (doc.contains("task")) {
    require(doc["task"].is_string(), "task: not a string");
    const std::string name = doc["task"].get<std::string>();
    if (name == "classification") {
      task = importance::TaskKind::kClassification;
    } else {
      require(name == "regression", "task: must be 'regression' or 'classification'");
    }
  }
  int repeats = 10;
  if (doc.contains("repeats")) {
    require(doc["repeats"].is_number_integer() && doc["repeats"].get<int>() >= 1,
            "repeats: must be a positive integer");
    repeats = doc["repeats"].get<int>();
  }
  std::uint64_t seed = 0;
  if (doc.contains("seed")) {
    require(doc["seed"].is_number(), "seed: not a number");
    seed = doc["seed"].get<std::uint64_t>();
  }
  if (seed_given) seed = seed_override;

  require(doc.contains("models") && doc["models"].is_array() && !doc["models"].empty(),
          "models: missing or empty");

  const importance::Dataset data = importance::dataset_from_csv(read_file(data_path), task);
  const auto [train, test] = importance::split_dataset(data, seed);

  std::vector<importance::Predictor> fitted;
  for (std::size_t i = 0; i < doc["models"].size(); ++i) {
    const std::string where = "models[" + std::to_string(i) + "]";
    const auto& entry = doc["models"][i];
    require(entry.is_object(), where + ": not an object");
    require(entry.contains("class") && entry["class"].is_string(), where + ".class: missing");
    require(entry.contains("hpc") && entry["hpc"].is_number(), where + ".hpc: missing");
    importance::LearnerClass cls;
    try {
      cls = importance::learner_from_string(entry["class"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + ".class: " + e.what());
    }
    try {
      fitted.push_back(importance::fit_learner(cls, entry["hpc"].get<double>(), train));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + ".hpc: " + e.what());
    }
  }

  const importance::VicTable table =
      importance::vic(fitted, test, importance::default_loss(task), repeats, seed);
  write_file(out_path, importance::vic_to_csv(table));
  std::cout << "wrote " << out_path << " (" << fitted.size() * data.p() << " rows)\n";
  return 0;
}

int cmd_gen_data(const std::string& kind, std::size_t n, std::uint64_t seed,
                 const std::string& out_path) {
  namespace importance = cashomon::importance;
  require(kind == "st", "kind: only 'st' is available");
  require(n >= 1, "n: must be at least 1");
  const importance::Dataset data = importance::generate_st(n, seed);
  write_file(out_path, importance::dataset_to_csv(data));
  std::cout << "wrote " << out_path << " (" << n << " rows)\n";
  return 0;
}

// Resolves the ground truth implied by a run config without running any
// algorithm: candidate pool, noiseless values, threshold, target set.
int cmd_truth(const std::string& config_path, const std::string& out_path) {
  namespace bench = cashomon::bench;
  bench::ExperimentConfig config = bench::experiment_config_from_json_text(read_file(config_path));

  const cashomon::CandidateSet candidates =
      cashomon::sample_candidates(config.space, config.per_class_candidates, config.candidate_seed);
  const bench::Landscape landscape =
      bench::make_landscape(config.space, config.landscape, config.landscape_seed, config.noise_sd);
  const std::vector<double> values = bench::landscape_values(landscape, config.space, candidates);
  const std::vector<std::size_t> truth = cashomon::ground_truth_set(values, config.run.threshold);

  const double min_value = *std::min_element(values.begin(), values.end());
  std::vector<double> class_min(config.space.num_classes(),
                                std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const std::size_t m = candidates.points[i].class_index;
    class_min[m] = std::min(class_min[m], values[i]);
  }

  nlohmann::json doc;
  doc["config_hash"] = bench::config_hash(config);
  doc["candidates"] = candidates.size();
  doc["min_value"] = min_value;
  doc["threshold"] = cashomon::threshold_from_min(min_value, config.run.threshold);
  doc["per_class_min"] = class_min;
  doc["truth_size"] = truth.size();
  doc["truth"] = truth;
  const std::string text = doc.dump(2) + "\n";
  std::cout << text;
  if (!out_path.empty()) write_file(out_path, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CASHomon sets: active level set estimation over CASH spaces"};
  app.require_subcommand(1);

  // run
  std::string run_config, run_out = ".";
  std::uint64_t run_seed = 0;
  int run_jobs = 1;
  bool run_verbose = false;
  CLI::App* run = app.add_subcommand("run", "Run a benchmark experiment from a JSON config");
  run->add_option("--config", run_config, "Experiment config JSON path")->required();
  run->add_option("--out", run_out, "Output directory");
  CLI::Option* run_seed_opt =
      run->add_option("--seed", run_seed, "Replace the config seed list with this one seed");
  CLI::Option* run_jobs_opt =
      run->add_option("--jobs", run_jobs, "Worker threads (default CASHOMON_JOBS or 1)");
  run->add_flag("--verbose", run_verbose, "Print one line per cell");

  // capacity
  std::string cap_input, cap_task = "regression", cap_out;
  double cap_tol = 1e-6;
  int cap_max_iter = 10000;
  CLI::App* cap = app.add_subcommand("capacity", "Solve the model spread maximization");
  cap->add_option("--input", cap_input, "Predictions: CSV (regression) or JSON (classification)")
      ->required();
  cap->add_option("--task", cap_task, "regression or classification");
  cap->add_option("--tol", cap_tol, "Duality gap tolerance");
  cap->add_option("--max-iter", cap_max_iter, "Iteration cap");
  cap->add_option("--report", cap_out, "Also write a JSON report here");

  // vic
  std::string vic_models, vic_data, vic_out = "vic.csv";
  std::uint64_t vic_seed = 0;
  CLI::App* vic = app.add_subcommand("vic", "Variable importance cloud for a set of models");
  vic->add_option("--models", vic_models, "Models config JSON path")->required();
  vic->add_option("--data", vic_data, "Dataset CSV path, target in the last column")->required();
  vic->add_option("--out", vic_out, "Output CSV path");
  CLI::Option* vic_seed_opt = vic->add_option("--seed", vic_seed, "Override the config seed");

  // gen-data
  std::string gen_kind = "st", gen_out;
  std::size_t gen_n = 0;
  std::uint64_t gen_seed = 0;
  CLI::App* gen = app.add_subcommand("gen-data", "Write a synthetic dataset CSV");
  gen->add_option("--kind", gen_kind, "Dataset family (st)");
  gen->add_option("--n", gen_n, "Number of rows")->required();
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output CSV path")->required();

  // truth
  std::string truth_config, truth_out;
  CLI::App* truth = app.add_subcommand("truth", "Resolve the ground truth set for a run config");
  truth->add_option("--config", truth_config, "Experiment config JSON path")->required();
  truth->add_option("--out", truth_out, "Also write the JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(e.what(), 2);
  }

  if (run->parsed()) {
    return guarded([&] {
      return cmd_run(run_config, run_out, run_seed_opt->count() > 0, run_seed,
                     run_jobs_opt->count() > 0, run_jobs, run_verbose);
    });
  }
  if (cap->parsed()) {
    return guarded([&] { return cmd_capacity(cap_input, cap_task, cap_tol, cap_max_iter, cap_out); });
  }
  if (vic->parsed()) {
    return guarded(
        [&] { return cmd_vic(vic_models, vic_data, vic_out, vic_seed_opt->count() > 0, vic_seed); });
  }
  if (gen->parsed()) {
    return guarded([&] { return cmd_gen_data(gen_kind, gen_n, gen_seed, gen_out); });
  }
  return guarded([&] { return cmd_truth(truth_config, truth_out); });
}
