#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace cashomon::importance {

enum class TaskKind { kRegression, kClassification };

struct Dataset {
  Eigen::MatrixXd x;  // n x p
  Eigen::VectorXd y;  // regression targets, or integral class labels >= 0
  std::vector<std::string> feature_names;
  std::string target_name = "Y";
  TaskKind task = TaskKind::kRegression;
  int num_classes = 0;  // classification only

  std::size_t n() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(x.cols()); }
  void validate() const;  // throws std::invalid_argument
};

// A fitted model. predict returns one column of values for regression and a
// row-stochastic n x g matrix of class probabilities for classification.
struct Predictor {
  std::string class_label;
  std::string hpc;
  TaskKind task = TaskKind::kRegression;
  int num_classes = 0;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> predict;
};

// Mean loss over rows: lower is better for both tasks.
using LossFn = std::function<double(const Eigen::MatrixXd& predictions, const Eigen::VectorXd& y)>;

double squared_error_loss(const Eigen::MatrixXd& predictions, const Eigen::VectorXd& y);
// Mean over rows of sum_k (p_k - [y == k])^2.
double brier_loss(const Eigen::MatrixXd& probabilities, const Eigen::VectorXd& labels);
LossFn default_loss(TaskKind task);

struct FIVector {
  Eigen::VectorXd values;
  bool scaled = false;
};

// Divides by the max element when it is positive; otherwise the values pass
// through unchanged (scaling by a non-positive max would break the ranking).
// The scaled flag is set either way.
FIVector scale_fi(const FIVector& v);

// Mean over `repeats` of loss(column j permuted) - loss(intact). Permutations
// depend only on (seed, feature, repeat), never on the model, so importance
// values are comparable across models.
double pfi(const Predictor& model, const Dataset& data, const LossFn& loss, Eigen::Index feature,
           int repeats, std::uint64_t seed);

FIVector pfi_all(const Predictor& model, const Dataset& data, const LossFn& loss, int repeats,
                 std::uint64_t seed);

struct VicTable {
  std::vector<std::string> model_ids;
  std::vector<std::string> class_labels;
  std::vector<std::string> feature_names;
  Eigen::MatrixXd raw;     // rows = models, cols = features
  Eigen::MatrixXd scaled;  // same shape, each row scale_fi'd
};

VicTable vic(const std::vector<Predictor>& models, const Dataset& data, const LossFn& loss,
             int repeats, std::uint64_t seed);

// Long format: model_id,class,feature,pfi_raw,pfi_scaled.
std::string vic_to_csv(const VicTable& table);

// Five correlated Gaussian features; the target depends only on the last two
// and their product.
Dataset generate_st(std::size_t n, std::uint64_t seed);

enum class LearnerClass { kRidge, kKnn };
LearnerClass learner_from_string(const std::string& name);
std::string to_string(LearnerClass cls);

// hpc is the single hyperparameter: ridge penalty in [1e-6, 1e3] or neighbor
// count in [1, 64] (rounded to an integer).
Predictor fit_learner(LearnerClass cls, double hpc, const Dataset& data);

// Deterministic shuffled holdout: 1/3 of rows to test, the rest to train.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::uint64_t seed);

// Header row required; the last column is the target.
Dataset dataset_from_csv(const std::string& text, TaskKind task);
std::string dataset_to_csv(const Dataset& data);

}  // namespace cashomon::importance
