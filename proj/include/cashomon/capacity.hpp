#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace cashomon::capacity {

enum class Task { kRegression, kClassification };

// Per-model predictions over a fixed dataset. Regression holds an n x M value
// matrix; classification holds one M x g probability matrix per observation,
// rows summing to one.
struct PredictionMatrix {
  Task task = Task::kRegression;
  Eigen::MatrixXd regression;
  std::vector<Eigen::MatrixXd> classification;

  std::size_t n() const;
  std::size_t models() const;
  std::size_t classes() const;  // 0 for regression
  void validate() const;        // throws std::invalid_argument
  // Classification rows clipped to [1e-12, 1] and renormalized; regression
  // returned unchanged.
  PredictionMatrix normalized() const;
};

struct WeightVector {
  Eigen::VectorXd w;

  void validate() const;  // nonnegative, entries within [0,1], sums to 1
};

// Prediction spread under a model weighting: mean per-observation variance
// for regression, mean mixture-entropy gain (natural log) for classification.
double capacity_objective(const PredictionMatrix& preds, const WeightVector& weights);

struct CapacityResult {
  double value = 0.0;
  Eigen::VectorXd w;
  double gap = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Concave maximization of the spread over the weight simplex by Frank-Wolfe
// with exact line search, started from uniform weights. Stops when the
// duality gap reaches tol; past max_iter the best iterate is returned with
// converged = false.
CapacityResult solve_capacity(const PredictionMatrix& preds, double tol = 1e-6,
                              int max_iter = 10000);

// Exhaustive simplex-grid maximum; only tractable for a handful of models.
double brute_force_capacity(const PredictionMatrix& preds, double grid_step);

// Headerless numeric CSV, rows = observations, columns = models.
PredictionMatrix regression_from_csv(const std::string& text);
// Nested JSON array, outer = observations, middle = models, inner = class
// probabilities.
PredictionMatrix classification_from_json_text(const std::string& text);

std::string capacity_result_to_json(const CapacityResult& result);

}  // namespace cashomon::capacity
