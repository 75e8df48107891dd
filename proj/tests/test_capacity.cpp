#include "cashomon/capacity.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"

#include "cashomon/rng.hpp"

using namespace cashomon;
using capacity::CapacityResult;
using capacity::PredictionMatrix;
using capacity::Task;
using capacity::WeightVector;

namespace {

WeightVector weights(std::initializer_list<double> vals) {
  WeightVector wv;
  wv.w.resize(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index j = 0;
  for (double v : vals) wv.w(j++) = v;
  return wv;
}

// Straight-line reimplementation of both objectives, kept independent of the
// library code paths on purpose.
double objective_by_hand(const PredictionMatrix& preds, const Eigen::VectorXd& w) {
  if (preds.task == Task::kRegression) {
    const auto& y = preds.regression;
    double total = 0.0;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      double second = 0.0, first = 0.0;
      for (Eigen::Index j = 0; j < y.cols(); ++j) {
        second += w(j) * y(i, j) * y(i, j);
        first += w(j) * y(i, j);
      }
      total += second - first * first;
    }
    return total / static_cast<double>(y.rows());
  }
  auto ent = [](const Eigen::VectorXd& p) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      if (p(k) > 0.0) h -= p(k) * std::log(p(k));
    }
    return h;
  };
  const PredictionMatrix norm = preds.normalized();
  double total = 0.0;
  for (const auto& p : norm.classification) {
    Eigen::VectorXd mix = Eigen::VectorXd::Zero(p.cols());
    double mean_h = 0.0;
    for (Eigen::Index j = 0; j < p.rows(); ++j) {
      mix += w(j) * p.row(j).transpose();
      mean_h += w(j) * ent(p.row(j).transpose());
    }
    total += ent(mix) - mean_h;
  }
  return total / static_cast<double>(norm.classification.size());
}

PredictionMatrix random_regression(std::mt19937_64& eng, int n, int m) {
  // Values kept inside [0, 0.4] so a 0.01 simplex grid brackets the optimum
  // value to well under 1e-4 (quadratic drop-off of the objective).
  std::uniform_real_distribution<double> unif(0.0, 0.4);
  PredictionMatrix preds;
  preds.task = Task::kRegression;
  preds.regression.resize(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) preds.regression(i, j) = unif(eng);
  }
  return preds;
}

PredictionMatrix random_classification(std::mt19937_64& eng, int n, int m, int g) {
  // Rows are small perturbations of a shared base distribution with a floor,
  // which keeps the mixture-entropy curvature low enough for the same 1e-4
  // grid bracketing argument to go through.
  std::uniform_real_distribution<double> base_u(0.2, 0.8);
  std::uniform_real_distribution<double> tweak(-0.08, 0.08);
  PredictionMatrix preds;
  preds.task = Task::kClassification;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd base(g);
    for (int k = 0; k < g; ++k) base(k) = base_u(eng);
    base /= base.sum();
    Eigen::MatrixXd p(m, g);
    for (int j = 0; j < m; ++j) {
      for (int k = 0; k < g; ++k) {
        p(j, k) = std::clamp(base(k) + tweak(eng), 0.05, 0.95);
      }
      p.row(j) /= p.row(j).sum();
    }
    preds.classification.push_back(std::move(p));
  }
  return preds;
}

void check_simplex(const Eigen::VectorXd& w) {
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    CHECK(w(j) >= 0.0);
    CHECK(w(j) <= 1.0);
  }
  CHECK(std::abs(w.sum() - 1.0) <= 1e-12);
}

}  // namespace

TEST_CASE("two regression models at 0 and 1 have capacity 1/4") {
  PredictionMatrix preds;
  preds.task = Task::kRegression;
  preds.regression.resize(3, 2);
  preds.regression.col(0).setZero();
  preds.regression.col(1).setOnes();

  CHECK(capacity_objective(preds, weights({0.5, 0.5})) == doctest::Approx(0.25).epsilon(1e-12));

  const CapacityResult res = capacity::solve_capacity(preds);
  CHECK(res.converged);
  CHECK(std::abs(res.value - 0.25) <= 1e-9);
  CHECK(res.w(0) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(res.w(1) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(res.gap <= 1e-6);
  check_simplex(res.w);
}

TEST_CASE("two disagreeing one-hot classifiers have capacity ln 2") {
  PredictionMatrix preds;
  preds.task = Task::kClassification;
  Eigen::MatrixXd p(2, 2);
  p << 1.0, 0.0,
       0.0, 1.0;
  preds.classification.push_back(p);

  const double ln2 = 0.6931471805599453;
  CHECK(std::abs(capacity_objective(preds, weights({0.5, 0.5})) - ln2) <= 1e-9);

  const CapacityResult res = capacity::solve_capacity(preds);
  CHECK(res.converged);
  CHECK(std::abs(res.value - ln2) <= 1e-6);
  check_simplex(res.w);
}

TEST_CASE("single model always has zero capacity") {
  PredictionMatrix preds;
  preds.task = Task::kRegression;
  preds.regression.resize(4, 1);
  preds.regression << 1.0, -2.0, 0.5, 3.0;

  const CapacityResult res = capacity::solve_capacity(preds);
  CHECK(res.converged);
  CHECK(res.value == 0.0);
  CHECK(res.w.size() == 1);
  CHECK(res.w(0) == 1.0);
  CHECK(capacity_objective(preds, weights({1.0})) == doctest::Approx(0.0));
}

TEST_CASE("identical models have zero capacity for any weighting") {
  PredictionMatrix preds;
  preds.task = Task::kRegression;
  preds.regression.resize(5, 3);
  for (int i = 0; i < 5; ++i) {
    preds.regression.row(i).setConstant(0.3 * i - 0.7);
  }
  CHECK(capacity_objective(preds, weights({0.2, 0.5, 0.3})) == doctest::Approx(0.0).epsilon(1e-12));
  const CapacityResult res = capacity::solve_capacity(preds);
  CHECK(res.converged);
  CHECK(std::abs(res.value) <= 1e-12);
}

TEST_CASE("objective matches a by-hand evaluation on random inputs") {
  auto eng = make_engine(301, {0x71});
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    PredictionMatrix reg = random_regression(eng, 6, 4);
    Eigen::VectorXd w(4);
    for (int j = 0; j < 4; ++j) w(j) = unif(eng) + 0.01;
    w /= w.sum();
    WeightVector wv;
    wv.w = w;
    CHECK(capacity_objective(reg, wv) ==
          doctest::Approx(objective_by_hand(reg, w)).epsilon(1e-12));

    PredictionMatrix cls = random_classification(eng, 5, 4, 3);
    CHECK(capacity_objective(cls, wv) ==
          doctest::Approx(objective_by_hand(cls, w)).epsilon(1e-12));
  }
}

TEST_CASE("solver matches the grid brute force within 1e-4") {
  auto eng = make_engine(302, {0x72});
  for (int rep = 0; rep < 25; ++rep) {
    const int m = 2 + static_cast<int>(rep % 2);
    PredictionMatrix reg = random_regression(eng, 5, m);
    const CapacityResult r1 = capacity::solve_capacity(reg);
    const double b1 = capacity::brute_force_capacity(reg, 0.01);
    CHECK(std::abs(r1.value - b1) <= 1e-4);
    check_simplex(r1.w);

    PredictionMatrix cls = random_classification(eng, 5, m, 3);
    const CapacityResult r2 = capacity::solve_capacity(cls);
    const double b2 = capacity::brute_force_capacity(cls, 0.01);
    CHECK(std::abs(r2.value - b2) <= 1e-4);
    check_simplex(r2.w);
  }
}

TEST_CASE("brute force rejects too many models and bad steps") {
  auto eng = make_engine(303, {0x73});
  PredictionMatrix big = random_regression(eng, 3, 5);
  CHECK_THROWS_AS(capacity::brute_force_capacity(big, 0.01), std::invalid_argument);
  PredictionMatrix ok = random_regression(eng, 3, 2);
  CHECK_THROWS_AS(capacity::brute_force_capacity(ok, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(capacity::brute_force_capacity(ok, 1.5), std::invalid_argument);
  CHECK(capacity::brute_force_capacity(ok, 1.0) >= 0.0);
}

TEST_CASE("objective is concave along random segments") {
  auto eng = make_engine(304, {0x74});
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto random_weight = [&](int m) {
    Eigen::VectorXd w(m);
    for (int j = 0; j < m; ++j) w(j) = unif(eng) + 1e-3;
    w /= w.sum();
    return w;
  };
  PredictionMatrix reg = random_regression(eng, 6, 4);
  PredictionMatrix cls = random_classification(eng, 4, 4, 3);
  for (int rep = 0; rep < 300; ++rep) {
    const PredictionMatrix& preds = (rep % 2 == 0) ? reg : cls;
    const Eigen::VectorXd a = random_weight(4);
    const Eigen::VectorXd b = random_weight(4);
    const double alpha = unif(eng);
    WeightVector wa, wb, wm;
    wa.w = a;
    wb.w = b;
    wm.w = alpha * a + (1.0 - alpha) * b;
    const double lhs = capacity_objective(preds, wm);
    const double rhs = alpha * capacity_objective(preds, wa) +
                       (1.0 - alpha) * capacity_objective(preds, wb);
    CHECK(lhs >= rhs - 1e-10);
  }
}

TEST_CASE("objective is nonnegative and zero only without disagreement") {
  auto eng = make_engine(305, {0x75});
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    PredictionMatrix reg = random_regression(eng, 4, 3);
    PredictionMatrix cls = random_classification(eng, 3, 3, 4);
    Eigen::VectorXd w(3);
    for (int j = 0; j < 3; ++j) w(j) = unif(eng) + 1e-3;
    w /= w.sum();
    WeightVector wv;
    wv.w = w;
    CHECK(capacity_objective(reg, wv) >= 0.0);
    CHECK(capacity_objective(cls, wv) >= -1e-12);
  }
}

TEST_CASE("capacity is invariant to model order and duplication") {
  auto eng = make_engine(306, {0x76});
  PredictionMatrix reg = random_regression(eng, 5, 3);

  PredictionMatrix shuffled = reg;
  shuffled.regression.col(0) = reg.regression.col(2);
  shuffled.regression.col(2) = reg.regression.col(0);

  PredictionMatrix doubled = reg;
  doubled.regression.conservativeResize(Eigen::NoChange, 4);
  doubled.regression.col(3) = reg.regression.col(1);

  const double v = capacity::solve_capacity(reg).value;
  CHECK(std::abs(capacity::solve_capacity(shuffled).value - v) <= 1e-5);
  CHECK(std::abs(capacity::solve_capacity(doubled).value - v) <= 1e-5);

  PredictionMatrix cls = random_classification(eng, 4, 3, 3);
  PredictionMatrix cls_shuffled = cls;
  for (auto& p : cls_shuffled.classification) {
    Eigen::MatrixXd q = p;
    p.row(0) = q.row(1);
    p.row(1) = q.row(0);
  }
  const double vc = capacity::solve_capacity(cls).value;
  CHECK(std::abs(capacity::solve_capacity(cls_shuffled).value - vc) <= 1e-5);
}

TEST_CASE("prediction matrix validation rejects malformed inputs") {
  PredictionMatrix empty;
  empty.task = Task::kRegression;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);

  PredictionMatrix nonfinite;
  nonfinite.task = Task::kRegression;
  nonfinite.regression.resize(2, 2);
  nonfinite.regression << 1.0, 2.0, std::nan(""), 0.0;
  CHECK_THROWS_AS(nonfinite.validate(), std::invalid_argument);

  PredictionMatrix bad_rows;
  bad_rows.task = Task::kClassification;
  Eigen::MatrixXd p(2, 2);
  p << 0.7, 0.2,  // sums to 0.9
       0.5, 0.5;
  bad_rows.classification.push_back(p);
  CHECK_THROWS_AS(bad_rows.validate(), std::invalid_argument);

  PredictionMatrix ragged;
  ragged.task = Task::kClassification;
  Eigen::MatrixXd a(2, 2), b(2, 3);
  a << 0.5, 0.5, 0.5, 0.5;
  b << 0.4, 0.3, 0.3, 0.4, 0.3, 0.3;
  ragged.classification.push_back(a);
  ragged.classification.push_back(b);
  CHECK_THROWS_AS(ragged.validate(), std::invalid_argument);

  WeightVector negative = weights({-0.1, 1.1});
  CHECK_THROWS_AS(negative.validate(), std::invalid_argument);
  WeightVector off_sum = weights({0.6, 0.6});
  CHECK_THROWS_AS(off_sum.validate(), std::invalid_argument);
  WeightVector fine = weights({0.25, 0.75});
  CHECK_NOTHROW(fine.validate());
}

TEST_CASE("solver validates tolerances and mismatched weights") {
  auto eng = make_engine(307, {0x77});
  PredictionMatrix reg = random_regression(eng, 3, 2);
  CHECK_THROWS_AS(capacity::solve_capacity(reg, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(capacity::solve_capacity(reg, 1e-6, 0), std::invalid_argument);
  WeightVector wrong = weights({0.2, 0.3, 0.5});
  CHECK_THROWS_AS(capacity_objective(reg, wrong), std::invalid_argument);
}

TEST_CASE("regression CSV and classification JSON round into matrices") {
  const PredictionMatrix reg =
      capacity::regression_from_csv("1.5,2\n-0.25,4\n0,1\n");
  CHECK(reg.task == Task::kRegression);
  CHECK(reg.n() == 3);
  CHECK(reg.models() == 2);
  CHECK(reg.regression(1, 0) == doctest::Approx(-0.25));

  CHECK_THROWS_AS(capacity::regression_from_csv(""), std::invalid_argument);
  CHECK_THROWS_AS(capacity::regression_from_csv("1,2\n3\n"), std::invalid_argument);
  CHECK_THROWS_AS(capacity::regression_from_csv("1,abc\n"), std::invalid_argument);

  const PredictionMatrix cls = capacity::classification_from_json_text(
      "[[[0.9,0.1],[0.2,0.8]],[[0.5,0.5],[0.4,0.6]]]");
  CHECK(cls.task == Task::kClassification);
  CHECK(cls.n() == 2);
  CHECK(cls.models() == 2);
  CHECK(cls.classes() == 2);
  CHECK(cls.classification[1](0, 1) == doctest::Approx(0.5));

  CHECK_THROWS_AS(capacity::classification_from_json_text("not json"), std::invalid_argument);
  CHECK_THROWS_AS(capacity::classification_from_json_text("[]"), std::invalid_argument);
  CHECK_THROWS_AS(capacity::classification_from_json_text("[[[0.9,0.2],[0.2,0.8]]]"),
                  std::invalid_argument);

  const CapacityResult res = capacity::solve_capacity(cls);
  const std::string json = capacity::capacity_result_to_json(res);
  CHECK(json.find("\"value\"") != std::string::npos);
  CHECK(json.find("\"duality_gap\"") != std::string::npos);
  CHECK(json.find("\"iterations\"") != std::string::npos);
}
