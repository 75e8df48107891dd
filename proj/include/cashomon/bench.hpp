#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cashomon/lse.hpp"
#include "cashomon/space.hpp"

namespace cashomon::bench {

enum class LandscapeKind { kGpSample, kParametric };
LandscapeKind landscape_from_string(const std::string& name);
std::string to_string(LandscapeKind kind);

// A synthetic per-class objective surface. Parametric surfaces are closed-form
// sums of Gaussian wells; gp_sample surfaces are joint draws materialized over
// whatever candidate set is presented (deterministic per seed and set).
struct Landscape {
  LandscapeKind kind = LandscapeKind::kParametric;
  std::uint64_t seed = 0;
  double noise_sd = 0.0;

  struct Bump {
    Eigen::VectorXd center;
    double width = 0.1;
    double amplitude = 1.0;
  };
  struct ClassSurface {
    std::vector<Bump> bumps;
    double offset = 0.0;    // class-specific, keeps per-class minima apart
    double amp_total = 0.0;
  };
  std::vector<ClassSurface> surfaces;           // parametric only
  std::vector<Eigen::VectorXd> lengthscales;    // gp_sample only, one per class
};

Landscape make_landscape(const CashSpace& space, LandscapeKind kind, std::uint64_t seed,
                         double noise_sd = 0.0);

// Noiseless true values at the candidate points. Parametric values are always
// >= 1; gp_sample draws are shifted per class so the class minimum is 1.
std::vector<double> landscape_values(const Landscape& landscape, const CashSpace& space,
                                     const CandidateSet& candidates);

// Harmonic mean of precision and recall of set membership. Empty predicted
// set scores 0; empty truth is an error.
double f1(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth,
          std::size_t universe);

struct ExperimentConfig {
  CashSpace space;
  LandscapeKind landscape = LandscapeKind::kGpSample;
  std::uint64_t landscape_seed = 1;
  double noise_sd = 0.0;
  std::size_t per_class_candidates = 500;
  std::uint64_t candidate_seed = 1;
  std::vector<lse::Algorithm> algorithms;
  std::vector<std::uint64_t> seeds;
  lse::RunConfig run;  // algo and seed fields are overridden per cell

  void validate() const;  // throws std::invalid_argument
};

// 3 one-parameter classes x 500 candidates, all algorithms, seeds 0..9.
ExperimentConfig default_experiment_config();

struct RunCell {
  lse::Algorithm algo = lse::Algorithm::kTruVarImp;
  std::uint64_t seed = 0;
  std::vector<lse::RunRecord> records;
  std::vector<std::size_t> predicted;
  bool failed = false;
  std::string error;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::string config_hash;
  CandidateSet candidates;  // values = noiseless truth
  std::vector<std::size_t> truth;
  std::vector<RunCell> cells;
};

// Runs every (algorithm, seed) cell, scoring the predicted set against the
// ground truth each iteration. Cells are independent; jobs > 1 runs them on
// worker threads with identical results. A cell that throws is recorded as
// failed and the rest continue.
ExperimentResult run_experiment(const ExperimentConfig& config, int jobs = 1);

std::string experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json_text(const std::string& text);
std::string config_hash(const ExperimentConfig& config);

// Long format over all cells: algorithm,seed,iteration,f1,incumbent,size_L,
// size_H,size_U,size_M. One row per iteration per cell.
std::string experiment_table_csv(const ExperimentResult& result);

// Per-algorithm mean/sd F1 curves plus a config echo and the eta schedule.
std::string summary_to_json(const ExperimentResult& result);

// Writes {hash}_{algorithm}_{seed}.csv and .jsonl per cell, {hash}_table.csv
// and {hash}_summary.json. Returns the written paths.
std::vector<std::string> write_experiment_files(const ExperimentResult& result,
                                                const std::string& out_dir);

}  // namespace cashomon::bench
