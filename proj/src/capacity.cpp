#include "cashomon/capacity.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "cashomon/io.hpp"

namespace cashomon::capacity {

namespace {

constexpr double kProbClip = 1e-12;
constexpr double kRowSumTol = 1e-9;
constexpr double kWeightSumTol = 1e-9;

// x log x with the 0 log 0 = 0 convention.
double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

double entropy(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) h -= xlogx(p(k));
  return h;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw std::invalid_argument(std::string(what) + " contains a non-finite entry");
  }
}

// Precomputed pieces shared by the objective, gradient and line search.
struct RegressionWork {
  Eigen::VectorXd q;  // per-model mean squared prediction
  Eigen::MatrixXd s;  // (1/n) Y^T Y

  explicit RegressionWork(const Eigen::MatrixXd& y) {
    const double n = static_cast<double>(y.rows());
    q = y.array().square().matrix().colwise().mean().transpose();
    s = (y.transpose() * y) / n;
  }

  double value(const Eigen::VectorXd& w) const {
    return q.dot(w) - w.dot(s * w);
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const {
    return q - 2.0 * (s * w);
  }
};

struct ClassificationWork {
  const std::vector<Eigen::MatrixXd>* rows;  // normalized, n entries of M x g
  Eigen::VectorXd mean_model_entropy;        // per model, weight independent

  explicit ClassificationWork(const std::vector<Eigen::MatrixXd>& normalized)
      : rows(&normalized) {
    const std::size_t n = normalized.size();
    const Eigen::Index m = normalized.front().rows();
    mean_model_entropy = Eigen::VectorXd::Zero(m);
    for (const auto& p : normalized) {
      for (Eigen::Index j = 0; j < m; ++j) {
        mean_model_entropy(j) += entropy(p.row(j).transpose());
      }
    }
    mean_model_entropy /= static_cast<double>(n);
  }

  double value(const Eigen::VectorXd& w) const {
    double mix_entropy = 0.0;
    for (const auto& p : *rows) {
      mix_entropy += entropy(p.transpose() * w);
    }
    mix_entropy /= static_cast<double>(rows->size());
    return mix_entropy - mean_model_entropy.dot(w);
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const {
    const Eigen::Index m = w.size();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(m);
    for (const auto& p : *rows) {
      const Eigen::VectorXd mix = p.transpose() * w;
      // d/dw_j H(mix) = -sum_k p_jk (log mix_k + 1)
      for (Eigen::Index j = 0; j < m; ++j) {
        double acc = 0.0;
        for (Eigen::Index k = 0; k < mix.size(); ++k) {
          acc -= p(j, k) * (std::log(mix(k)) + 1.0);
        }
        g(j) += acc;
      }
    }
    g /= static_cast<double>(rows->size());
    return g - mean_model_entropy;
  }
};

// Step length maximizing f(w + t d) over [0, 1]. Regression is an exact
// quadratic; classification bisects the (monotone) directional derivative.
template <typename Work>
double line_search(const Work& work, const Eigen::VectorXd& w, const Eigen::VectorXd& d);

template <>
double line_search(const RegressionWork& work, const Eigen::VectorXd& w,
                   const Eigen::VectorXd& d) {
  const double curvature = d.dot(work.s * d);
  const double slope0 = work.gradient(w).dot(d);
  if (curvature <= 0.0) return slope0 > 0.0 ? 1.0 : 0.0;
  return std::clamp(slope0 / (2.0 * curvature), 0.0, 1.0);
}

template <>
double line_search(const ClassificationWork& work, const Eigen::VectorXd& w,
                   const Eigen::VectorXd& d) {
  auto slope = [&](double t) { return work.gradient(w + t * d).dot(d); };
  if (slope(0.0) <= 0.0) return 0.0;
  if (slope(1.0) >= 0.0) return 1.0;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (slope(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

template <typename Work>
CapacityResult frank_wolfe(const Work& work, Eigen::Index m, double tol, int max_iter) {
  CapacityResult res;
  Eigen::VectorXd w = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  double best_value = work.value(w);
  Eigen::VectorXd best_w = w;
  double last_gap = std::numeric_limits<double>::infinity();

  int it = 0;
  for (; it < max_iter; ++it) {
    const Eigen::VectorXd g = work.gradient(w);
    Eigen::Index vertex = 0;
    g.maxCoeff(&vertex);  // Eigen reports the first maximizer, so ties go low
    last_gap = g(vertex) - g.dot(w);
    if (last_gap <= tol) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd d = -w;
    d(vertex) += 1.0;
    const double t = line_search(work, w, d);
    w *= (1.0 - t);
    w(vertex) += t;
    const double v = work.value(w);
    if (v > best_value) {
      best_value = v;
      best_w = w;
    }
  }

  res.value = best_value;
  res.w = best_w;
  res.gap = last_gap;
  res.iterations = it;
  return res;
}

template <typename Work>
double grid_max(const Work& work, Eigen::Index m, long ticks) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
  double best = -std::numeric_limits<double>::infinity();
  // Depth-first over compositions of `ticks` into m nonnegative parts.
  auto recurse = [&](auto&& self, Eigen::Index j, long remaining) -> void {
    if (j == m - 1) {
      w(j) = static_cast<double>(remaining) / static_cast<double>(ticks);
      best = std::max(best, work.value(w));
      return;
    }
    for (long k = 0; k <= remaining; ++k) {
      w(j) = static_cast<double>(k) / static_cast<double>(ticks);
      self(self, j + 1, remaining - k);
    }
  };
  recurse(recurse, 0, ticks);
  return best;
}

}  // namespace

std::size_t PredictionMatrix::n() const {
  return task == Task::kRegression ? static_cast<std::size_t>(regression.rows())
                                   : classification.size();
}

std::size_t PredictionMatrix::models() const {
  if (task == Task::kRegression) return static_cast<std::size_t>(regression.cols());
  return classification.empty() ? 0 : static_cast<std::size_t>(classification.front().rows());
}

std::size_t PredictionMatrix::classes() const {
  if (task == Task::kRegression || classification.empty()) return 0;
  return static_cast<std::size_t>(classification.front().cols());
}

void PredictionMatrix::validate() const {
  if (task == Task::kRegression) {
    if (regression.rows() < 1 || regression.cols() < 1) {
      throw std::invalid_argument("regression predictions need at least one row and one model");
    }
    if (!regression.allFinite()) {
      throw std::invalid_argument("regression predictions contain a non-finite entry");
    }
    return;
  }
  if (classification.empty()) {
    throw std::invalid_argument("classification predictions need at least one observation");
  }
  const Eigen::Index m = classification.front().rows();
  const Eigen::Index g = classification.front().cols();
  if (m < 1 || g < 2) {
    throw std::invalid_argument("classification predictions need >=1 model and >=2 classes");
  }
  for (const auto& p : classification) {
    if (p.rows() != m || p.cols() != g) {
      throw std::invalid_argument("classification observations have inconsistent shapes");
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      double sum = 0.0;
      for (Eigen::Index k = 0; k < g; ++k) {
        const double v = p(j, k);
        check_finite(v, "classification predictions");
        if (v < 0.0 || v > 1.0) {
          throw std::invalid_argument("class probabilities must lie in [0, 1]");
        }
        sum += v;
      }
      if (std::abs(sum - 1.0) > kRowSumTol) {
        throw std::invalid_argument("class probability rows must sum to 1");
      }
    }
  }
}

PredictionMatrix PredictionMatrix::normalized() const {
  if (task == Task::kRegression) return *this;
  PredictionMatrix out = *this;
  for (auto& p : out.classification) {
    for (Eigen::Index j = 0; j < p.rows(); ++j) {
      for (Eigen::Index k = 0; k < p.cols(); ++k) {
        p(j, k) = std::clamp(p(j, k), kProbClip, 1.0);
      }
      p.row(j) /= p.row(j).sum();
    }
  }
  return out;
}

void WeightVector::validate() const {
  if (w.size() < 1) throw std::invalid_argument("weight vector is empty");
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    check_finite(w(j), "weights");
    if (w(j) < 0.0 || w(j) > 1.0) {
      throw std::invalid_argument("weights must lie in [0, 1]");
    }
  }
  if (std::abs(w.sum() - 1.0) > kWeightSumTol) {
    throw std::invalid_argument("weights must sum to 1");
  }
}

double capacity_objective(const PredictionMatrix& preds, const WeightVector& weights) {
  preds.validate();
  weights.validate();
  if (static_cast<std::size_t>(weights.w.size()) != preds.models()) {
    throw std::invalid_argument("weight length does not match the number of models");
  }
  if (preds.task == Task::kRegression) {
    return RegressionWork(preds.regression).value(weights.w);
  }
  const PredictionMatrix norm = preds.normalized();
  return ClassificationWork(norm.classification).value(weights.w);
}

CapacityResult solve_capacity(const PredictionMatrix& preds, double tol, int max_iter) {
  preds.validate();
  if (tol <= 0.0) throw std::invalid_argument("tol must be positive");
  if (max_iter < 1) throw std::invalid_argument("max_iter must be positive");
  const Eigen::Index m = static_cast<Eigen::Index>(preds.models());
  if (m == 1) {
    CapacityResult res;
    res.value = 0.0;
    res.w = Eigen::VectorXd::Ones(1);
    res.gap = 0.0;
    res.iterations = 0;
    res.converged = true;
    return res;
  }
  if (preds.task == Task::kRegression) {
    return frank_wolfe(RegressionWork(preds.regression), m, tol, max_iter);
  }
  const PredictionMatrix norm = preds.normalized();
  return frank_wolfe(ClassificationWork(norm.classification), m, tol, max_iter);
}

double brute_force_capacity(const PredictionMatrix& preds, double grid_step) {
  preds.validate();
  if (!(grid_step > 0.0) || grid_step > 1.0) {
    throw std::invalid_argument("grid_step must lie in (0, 1]");
  }
  const Eigen::Index m = static_cast<Eigen::Index>(preds.models());
  if (m > 4) {
    throw std::invalid_argument("brute force is limited to at most 4 models");
  }
  const long ticks = std::lround(1.0 / grid_step);
  if (preds.task == Task::kRegression) {
    return grid_max(RegressionWork(preds.regression), m, ticks);
  }
  const PredictionMatrix norm = preds.normalized();
  return grid_max(ClassificationWork(norm.classification), m, ticks);
}

PredictionMatrix regression_from_csv(const std::string& text) {
  PredictionMatrix out;
  out.task = Task::kRegression;
  const std::vector<std::string> lines = io::split_lines(text);
  if (lines.empty()) throw std::invalid_argument("empty prediction CSV");
  std::vector<std::vector<double>> rows;
  std::vector<std::string> fields;
  for (const std::string& line : lines) {
    if (line.empty()) continue;
    if (!io::parse_csv_row(line, fields)) {
      throw std::invalid_argument("malformed CSV record: " + line);
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (const std::string& f : fields) {
      try {
        std::size_t pos = 0;
        row.push_back(std::stod(f, &pos));
        if (pos != f.size()) throw std::invalid_argument(f);
      } catch (const std::exception&) {
        throw std::invalid_argument("non-numeric CSV field: " + f);
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::invalid_argument("ragged CSV rows");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().empty()) {
    throw std::invalid_argument("empty prediction CSV");
  }
  out.regression.resize(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      out.regression(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  out.validate();
  return out;
}

PredictionMatrix classification_from_json_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_array() || doc.empty()) {
    throw std::invalid_argument("expected a non-empty array of observations");
  }
  PredictionMatrix out;
  out.task = Task::kClassification;
  for (const auto& obs : doc) {
    if (!obs.is_array() || obs.empty()) {
      throw std::invalid_argument("each observation must be an array of model rows");
    }
    const std::size_t m = obs.size();
    const std::size_t g = obs.front().is_array() ? obs.front().size() : 0;
    if (g == 0) throw std::invalid_argument("each model row must be an array of probabilities");
    Eigen::MatrixXd p(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(g));
    for (std::size_t j = 0; j < m; ++j) {
      const auto& row = obs[j];
      if (!row.is_array() || row.size() != g) {
        throw std::invalid_argument("model rows have inconsistent class counts");
      }
      for (std::size_t k = 0; k < g; ++k) {
        if (!row[k].is_number()) {
          throw std::invalid_argument("probabilities must be numbers");
        }
        p(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = row[k].get<double>();
      }
    }
    out.classification.push_back(std::move(p));
  }
  out.validate();
  return out;
}

std::string capacity_result_to_json(const CapacityResult& result) {
  nlohmann::json doc;
  doc["value"] = result.value;
  doc["weights"] = nlohmann::json::array();
  for (Eigen::Index j = 0; j < result.w.size(); ++j) doc["weights"].push_back(result.w(j));
  doc["duality_gap"] = result.gap;
  doc["iterations"] = result.iterations;
  doc["converged"] = result.converged;
  return doc.dump(2) + "\n";
}

}  // namespace cashomon::capacity
