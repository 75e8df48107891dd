#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cashomon/gp.hpp"
#include "cashomon/space.hpp"

namespace cashomon::lse {

enum class Algorithm { kTruVarImp, kTruVar, kLse, kLseImp, kStraddle, kRandom, kOptimize };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& name);  // throws on unknown name
const std::vector<Algorithm>& all_algorithms();

// L: confidently inside the target set, H: confidently outside, U: undecided.
// M tracks potential minimizers and stays within U union L.
struct Partition {
  std::vector<std::size_t> L, H, U, M;

  void validate(std::size_t n) const;  // throws std::logic_error on violation
};

Partition initial_partition(std::size_t n);

struct EpochState {
  int i = 1;
  double eta = 1.0;
  double beta = 9.0;  // the squared confidence multiplier
  double r = 0.1;
  double slack = 0.0;
  double eta1 = 1.0;
};

// Per-candidate confidence intervals on the raw objective scale plus the
// implicit-threshold quantities of the current step. m_was_empty flags the
// defensive recovery path where the minimizer set had to be rebuilt.
struct Bounds {
  Eigen::VectorXd l, u;
  double c_min_pes = std::numeric_limits<double>::quiet_NaN();
  double h_opt = std::numeric_limits<double>::quiet_NaN();
  double h_pes = std::numeric_limits<double>::quiet_NaN();
  bool m_was_empty = false;
};

struct RunRecord {
  int iteration = 0;
  std::size_t chosen_index = 0;
  double value = 0.0;
  double cum_cost = 0.0;
  std::size_t size_L = 0, size_H = 0, size_U = 0, size_M = 0;
  double incumbent = 0.0;
  double f1 = std::numeric_limits<double>::quiet_NaN();
  int epoch = 1;
  bool failed = false;  // objective evaluation failed; value is imputed
};

std::pair<double, double> confidence_bounds(double mean, double variance, double beta);

// Scaled excess variance of a set: sum of max{p^2 * beta * var - eta^2, 0}.
double delta(const std::vector<std::size_t>& indices, const Eigen::VectorXd& variances, double p,
             const EpochState& epoch);

// Shared per-iteration posterior over the whole candidate set, one batch per
// class plus flattened views indexed by global candidate position.
struct PosteriorTable {
  std::vector<gp::Surrogate::ClassBatch> batches;
  std::vector<std::size_t> cls;
  std::vector<int> local;
  std::vector<std::vector<int>> class_members;  // global index per class, candidate order
  Eigen::VectorXd mean_raw, var_raw, var_latent;
};

PosteriorTable build_posterior_table(const gp::Surrogate& gp, const CandidateSet& candidates);

struct Selection {
  std::size_t index = 0;
  double score = 0.0;
  bool fallback = false;  // all acquisition scores were zero
};

// Cost-normalized truncated-variance-reduction acquisition over M union U,
// with the minimizer set weighted by (1 + eps_rel). eligible masks candidates
// that may still be chosen; ties break toward the lowest index.
Selection truvarimp_select(const gp::Surrogate& gp, const PosteriorTable& table,
                           const Partition& part, const EpochState& epoch,
                           const std::vector<double>& costs, double eps_rel,
                           const std::vector<char>& eligible);

// Explicit-threshold variant: reduction target is U only, search is over U.
Selection truvar_select(const gp::Surrogate& gp, const PosteriorTable& table,
                        const Partition& part, const EpochState& epoch,
                        const std::vector<double>& costs, const std::vector<char>& eligible);

// Reclassifies against thresholds computed from the previous minimizer set
// using the new bounds; fills c_min_pes/h_opt/h_pes into bounds. Monotonic
// mode only moves points out of U and shrinks M, and treats an emptied M as
// an error; non-monotonic mode reclassifies every candidate.
Partition update_partition(Bounds& bounds, const Partition& prev, bool nonmonotonic,
                           const ThresholdSpec& spec);

// Classification against a fixed threshold h; M is left empty.
Partition update_partition_explicit(const Bounds& bounds, const Partition& prev, double h,
                                    bool nonmonotonic);

// Advances while both U and M are certain enough at the current eta; empty
// sets pass their check. Latent-scale variances. Capped at max_epoch.
EpochState advance_epoch(const Partition& part, const Eigen::VectorXd& var_latent,
                         EpochState epoch, double eps_rel, int max_epoch = 50);

double straddle_score(double mean, double variance, double h, double kappa = 1.96);
double lse_ambiguity(double l, double u, double h_lo, double h_hi);
double ei_score(double mean, double variance, double incumbent);

// Indices with posterior mean within the implicit threshold of the best
// observed value.
std::vector<std::size_t> predicted_set(const Eigen::VectorXd& means_raw, double best_observed,
                                       const ThresholdSpec& spec);

// True iff L members are truly at or below h, H members above, and U members
// within eps/2 of h (inclusive).
bool epsilon_accurate(const Partition& part, const std::vector<double>& true_values, double h,
                      double eps);

struct RunConfig {
  Algorithm algo = Algorithm::kTruVarImp;
  std::size_t budget = 290;  // total evaluations including the initial design
  std::size_t init_per_class = 30;
  ThresholdSpec threshold;
  double beta_sqrt = 3.0;
  double eta1 = 1.0;
  double r = 0.1;
  double slack = 0.0;
  bool monotonic = false;
  bool refit = true;
  int max_epoch = 50;
  double straddle_kappa = 1.96;
  gp::SurrogateConfig gp_config;
  std::optional<gp::KernelParams> kernel;  // initial kernel; class defaults otherwise
  std::uint64_t seed = 0;
};

std::string run_config_to_json(const RunConfig& config);

struct IterationView {
  int iteration;
  std::size_t chosen;
  double value;
  double incumbent;
  const Partition& part;
  const Bounds& bounds;
  const EpochState& epoch;
  const Eigen::VectorXd& mean_raw;
  const Eigen::VectorXd& var_raw;
  const Eigen::VectorXd& var_latent;
  double value_scale;
  double h_explicit;  // NaN for implicit-threshold algorithms
};

using IterationObserver = std::function<void(const IterationView&)>;
using Objective = std::function<double(std::size_t)>;  // non-finite return = failure
using SetScore = std::function<double(const std::vector<std::size_t>&)>;

struct RunResult {
  std::vector<RunRecord> records;
  Partition partition;
  Bounds bounds;
  EpochState epoch;
  std::vector<std::size_t> predicted;
  double incumbent = std::numeric_limits<double>::infinity();
  std::size_t incumbent_index = 0;
  std::vector<std::size_t> eval_order;  // initial design first, then one per iteration
  std::size_t init_count = 0;
  double value_scale = 1.0;
  gp::KernelParams kernel;
  bool had_failures = false;
};

// Runs one seeded algorithm over a finite candidate set: initial design of
// init_per_class random points per class, then select / evaluate / update /
// reclassify until the budget is spent. No candidate is evaluated twice.
// set_score, when given, maps a predicted set to the f1 column.
RunResult run_algorithm(const CashSpace& space, const CandidateSet& candidates,
                        const Objective& objective, const RunConfig& config,
                        const SetScore& set_score = nullptr,
                        const IterationObserver& observer = nullptr);

// Stable 11-column record table; JSONL carries the failure flag as well.
std::string records_to_csv(const std::vector<RunRecord>& records);
std::string records_to_jsonl(const std::vector<RunRecord>& records);

}  // namespace cashomon::lse
