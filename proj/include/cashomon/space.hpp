#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace cashomon {

enum class ParamKind { kContinuous, kInteger, kCategorical };

// One hyperparameter of one model class. Numeric kinds use [lo, hi]; when
// log_scaled is set the affine encoding runs on the log of the value, so lo
// must be positive. Categorical kinds ignore lo/hi and use levels.
struct ParamSpec {
  std::string name;
  ParamKind kind = ParamKind::kContinuous;
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::string> levels;
  bool log_scaled = false;

  void validate() const;               // throws std::invalid_argument
  int encoded_width() const;           // 1 for numeric, levels.size() for categorical
};

struct ModelClass {
  std::string name;
  std::vector<ParamSpec> params;

  int encoded_dim() const;
};

// A combined space: one block of hyperparameters per model class. A full
// configuration is a (class, hyperparameter vector) pair; encodings of
// different classes live in disjoint blocks and are never compared directly.
struct CashSpace {
  std::vector<ModelClass> classes;

  void validate() const;
  std::size_t num_classes() const { return classes.size(); }
};

using RawValue = std::variant<double, std::string>;

struct ConfigPoint {
  std::size_t class_index = 0;
  std::vector<RawValue> raw_values;
  Eigen::VectorXd encoded;
};

// Finite candidate pool the algorithms operate on. values is either empty or
// one noiseless objective value per point (precomputed-table setting); costs
// are strictly positive, default 1. Integer rounding can map distinct raw
// draws to the same encoding; such collisions are kept and counted in
// duplicate_encoded_count rather than rejected.
struct CandidateSet {
  std::vector<ConfigPoint> points;
  std::vector<double> values;
  std::vector<double> costs;
  std::size_t duplicate_encoded_count = 0;

  std::size_t size() const { return points.size(); }
  bool has_values() const { return !values.empty(); }
  void validate(const CashSpace& space) const;  // throws std::invalid_argument
};

// Near-optimality tolerance defining the target set
// {λ : c(λ) <= min c · (1 + eps_rel) + eps_abs}.
struct ThresholdSpec {
  double eps_rel = 0.05;
  double eps_abs = 0.0;

  void validate() const;
};

inline double threshold_from_min(double min_value, const ThresholdSpec& spec) {
  return min_value * (1.0 + spec.eps_rel) + spec.eps_abs;
}

// Maps raw values to [0,1]^k per numeric parameter (log scale first when
// log_scaled) and one-hot blocks per categorical parameter. Throws if a value
// is outside its range or not a listed level.
Eigen::VectorXd encode(const std::vector<RawValue>& raw, const std::vector<ParamSpec>& params);

// Inverse of encode up to integer rounding; one-hot blocks decode by argmax.
std::vector<RawValue> decode(const Eigen::VectorXd& encoded, const std::vector<ParamSpec>& params);

// Uniform sampling in encoded space (hence uniform in log space for
// log-scaled parameters), per_class_count points per class, class-major
// order. Deterministic for a fixed seed.
CandidateSet sample_candidates(const CashSpace& space, std::size_t per_class_count,
                               std::uint64_t seed);

// Indices of values within the threshold of the minimum, boundary inclusive.
// Requires nonempty values; nonnegative values when eps_rel > 0.
std::vector<std::size_t> ground_truth_set(const std::vector<double>& values,
                                          const ThresholdSpec& spec);

// --- serialization ---

CashSpace space_from_json_text(const std::string& text);
std::string space_to_json_text(const CashSpace& space);

// CSV with columns: class, union of parameter names in first-appearance
// order, optional value, cost.
std::string candidates_to_csv(const CashSpace& space, const CandidateSet& set);
CandidateSet candidates_from_csv(const CashSpace& space, const std::string& csv_text);

}  // namespace cashomon
