#include "cashomon/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "cashomon/io.hpp"
#include "cashomon/rng.hpp"

namespace cashomon::importance {

namespace {

constexpr std::uint64_t kTagSt = 0x51;
constexpr std::uint64_t kTagSplit = 0x52;
constexpr std::uint64_t kTagPerm = 0x53;

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

Eigen::VectorXd column_mean(const Eigen::MatrixXd& x) { return x.colwise().mean(); }

// Population sd with constant columns mapped to 1 so standardization is a
// no-op for them.
Eigen::VectorXd column_sd(const Eigen::MatrixXd& x, const Eigen::VectorXd& mean) {
  const double n = static_cast<double>(x.rows());
  Eigen::VectorXd sd(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - mean(j)).square().sum() / n;
    sd(j) = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return sd;
}

struct RidgeModel {
  Eigen::MatrixXd beta;       // p x g (g = 1 for regression)
  Eigen::RowVectorXd intercept;
  TaskKind task;

  Eigen::MatrixXd operator()(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd scores = (x * beta).rowwise() + intercept;
    if (task == TaskKind::kRegression) return scores;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      for (Eigen::Index k = 0; k < scores.cols(); ++k) {
        scores(i, k) = std::max(scores(i, k), 0.0);
      }
      const double sum = scores.row(i).sum();
      if (sum > 0.0) {
        scores.row(i) /= sum;
      } else {
        scores.row(i).setConstant(1.0 / static_cast<double>(scores.cols()));
      }
    }
    return scores;
  }
};

struct KnnModel {
  Eigen::MatrixXd train_x;  // standardized
  Eigen::VectorXd train_y;
  Eigen::VectorXd mean, sd;
  int k;
  TaskKind task;
  int num_classes;

  Eigen::MatrixXd operator()(const Eigen::MatrixXd& x) const {
    const Eigen::Index n_train = train_x.rows();
    const int use_k = std::min<int>(k, static_cast<int>(n_train));
    const Eigen::Index g = task == TaskKind::kRegression ? 1 : num_classes;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), g);
    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n_train));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Eigen::RowVectorXd q = (x.row(i) - mean.transpose()).cwiseQuotient(sd.transpose());
      for (Eigen::Index t = 0; t < n_train; ++t) {
        dist[static_cast<std::size_t>(t)] = {(train_x.row(t) - q).squaredNorm(), t};
      }
      std::partial_sort(dist.begin(), dist.begin() + use_k, dist.end());
      if (task == TaskKind::kRegression) {
        double acc = 0.0;
        for (int s = 0; s < use_k; ++s) acc += train_y(dist[static_cast<std::size_t>(s)].second);
        out(i, 0) = acc / use_k;
      } else {
        for (int s = 0; s < use_k; ++s) {
          const int label = static_cast<int>(train_y(dist[static_cast<std::size_t>(s)].second));
          out(i, label) += 1.0 / use_k;
        }
      }
    }
    return out;
  }
};

Dataset take_rows(const Dataset& data, const std::vector<Eigen::Index>& rows) {
  Dataset out = data;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), data.x.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = data.x.row(rows[i]);
    out.y(static_cast<Eigen::Index>(i)) = data.y(rows[i]);
  }
  return out;
}

}  // namespace

void Dataset::validate() const {
  require(x.rows() >= 2, "dataset needs at least 2 rows");
  require(x.cols() >= 1, "dataset needs at least 1 feature");
  require(x.allFinite() && y.allFinite(), "dataset contains non-finite entries");
  require(y.size() == x.rows(), "target length does not match the feature matrix");
  require(feature_names.size() == static_cast<std::size_t>(x.cols()),
          "feature name count does not match the feature matrix");
  if (task == TaskKind::kClassification) {
    require(num_classes >= 2, "classification needs at least 2 classes");
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double v = y(i);
      require(v == std::floor(v) && v >= 0.0 && v < num_classes,
              "classification targets must be integral labels in [0, num_classes)");
    }
  }
}

double squared_error_loss(const Eigen::MatrixXd& predictions, const Eigen::VectorXd& y) {
  require(predictions.cols() == 1, "regression predictions must be a single column");
  require(predictions.rows() == y.size(), "prediction count does not match targets");
  return (predictions.col(0) - y).squaredNorm() / static_cast<double>(y.size());
}

double brier_loss(const Eigen::MatrixXd& probabilities, const Eigen::VectorXd& labels) {
  require(probabilities.rows() == labels.size(), "prediction count does not match targets");
  require(probabilities.cols() >= 2, "classification predictions need >= 2 columns");
  double total = 0.0;
  for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
    const int label = static_cast<int>(labels(i));
    for (Eigen::Index k = 0; k < probabilities.cols(); ++k) {
      const double target = (k == label) ? 1.0 : 0.0;
      const double d = probabilities(i, k) - target;
      total += d * d;
    }
  }
  return total / static_cast<double>(probabilities.rows());
}

LossFn default_loss(TaskKind task) {
  if (task == TaskKind::kRegression) return squared_error_loss;
  return brier_loss;
}

FIVector scale_fi(const FIVector& v) {
  FIVector out = v;
  out.scaled = true;
  if (out.values.size() == 0) return out;
  const double mx = out.values.maxCoeff();
  if (mx > 0.0) out.values /= mx;
  return out;
}

double pfi(const Predictor& model, const Dataset& data, const LossFn& loss, Eigen::Index feature,
           int repeats, std::uint64_t seed) {
  data.validate();
  require(static_cast<bool>(model.predict), "predictor has no prediction function");
  require(static_cast<bool>(loss), "loss function is empty");
  require(repeats >= 1, "repeats must be >= 1");
  require(feature >= 0 && feature < data.x.cols(), "feature index out of range");

  const double intact = loss(model.predict(data.x), data.y);
  const Eigen::Index n = data.x.rows();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  Eigen::MatrixXd permuted = data.x;
  double total = 0.0;
  for (int rep = 0; rep < repeats; ++rep) {
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    auto eng = make_engine(seed, {kTagPerm, static_cast<std::uint64_t>(feature),
                                  static_cast<std::uint64_t>(rep)});
    std::shuffle(perm.begin(), perm.end(), eng);
    for (Eigen::Index i = 0; i < n; ++i) {
      permuted(i, feature) = data.x(perm[static_cast<std::size_t>(i)], feature);
    }
    total += loss(model.predict(permuted), data.y) - intact;
  }
  return total / repeats;
}

FIVector pfi_all(const Predictor& model, const Dataset& data, const LossFn& loss, int repeats,
                 std::uint64_t seed) {
  FIVector out;
  out.values.resize(data.x.cols());
  for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
    out.values(j) = pfi(model, data, loss, j, repeats, seed);
  }
  return out;
}

VicTable vic(const std::vector<Predictor>& models, const Dataset& data, const LossFn& loss,
             int repeats, std::uint64_t seed) {
  require(!models.empty(), "vic needs at least one model");
  data.validate();
  VicTable table;
  table.feature_names = data.feature_names;
  table.raw.resize(static_cast<Eigen::Index>(models.size()), data.x.cols());
  table.scaled.resize(static_cast<Eigen::Index>(models.size()), data.x.cols());
  for (std::size_t m = 0; m < models.size(); ++m) {
    const FIVector raw = pfi_all(models[m], data, loss, repeats, seed);
    const FIVector scaled = scale_fi(raw);
    table.raw.row(static_cast<Eigen::Index>(m)) = raw.values.transpose();
    table.scaled.row(static_cast<Eigen::Index>(m)) = scaled.values.transpose();
    table.model_ids.push_back(std::to_string(m));
    table.class_labels.push_back(models[m].class_label);
  }
  return table;
}

std::string vic_to_csv(const VicTable& table) {
  std::string out = "model_id,class,feature,pfi_raw,pfi_scaled\n";
  for (Eigen::Index m = 0; m < table.raw.rows(); ++m) {
    for (Eigen::Index j = 0; j < table.raw.cols(); ++j) {
      out += io::csv_row({table.model_ids[static_cast<std::size_t>(m)],
                          table.class_labels[static_cast<std::size_t>(m)],
                          table.feature_names[static_cast<std::size_t>(j)],
                          io::format_double(table.raw(m, j)),
                          io::format_double(table.scaled(m, j))});
      out += "\n";
    }
  }
  return out;
}

Dataset generate_st(std::size_t n, std::uint64_t seed) {
  require(n >= 1, "n must be >= 1");
  Dataset out;
  out.task = TaskKind::kRegression;
  out.feature_names = {"X1", "X2", "X3", "X4", "X5"};
  out.x.resize(static_cast<Eigen::Index>(n), 5);
  out.y.resize(static_cast<Eigen::Index>(n));
  auto eng = make_engine(seed, {kTagSt});
  std::normal_distribution<double> unit(0.0, 1.0);
  const double sd_copy = std::sqrt(0.001);
  const double sd_wide = std::sqrt(0.1);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    const double x1 = unit(eng);
    const double x3 = unit(eng);
    const double x5 = unit(eng);
    const double x2 = x1 + sd_copy * unit(eng);
    const double x4 = x3 + sd_wide * unit(eng);
    out.x(i, 0) = x1;
    out.x(i, 1) = x2;
    out.x(i, 2) = x3;
    out.x(i, 3) = x4;
    out.x(i, 4) = x5;
    out.y(i) = x4 + x5 + x4 * x5 + sd_wide * unit(eng);
  }
  return out;
}

LearnerClass learner_from_string(const std::string& name) {
  if (name == "ridge") return LearnerClass::kRidge;
  if (name == "knn") return LearnerClass::kKnn;
  throw std::invalid_argument("unknown learner class: " + name);
}

std::string to_string(LearnerClass cls) {
  return cls == LearnerClass::kRidge ? "ridge" : "knn";
}

Predictor fit_learner(LearnerClass cls, double hpc, const Dataset& data) {
  data.validate();
  Predictor out;
  out.class_label = to_string(cls);
  out.task = data.task;
  out.num_classes = data.num_classes;

  if (cls == LearnerClass::kRidge) {
    require(hpc >= 1e-6 && hpc <= 1e3, "ridge penalty must lie in [1e-6, 1e3]");
    out.hpc = "lambda=" + io::format_double(hpc);
    const Eigen::Index g =
        data.task == TaskKind::kRegression ? 1 : static_cast<Eigen::Index>(data.num_classes);
    const Eigen::RowVectorXd x_mean = data.x.colwise().mean();
    const Eigen::MatrixXd xc = data.x.rowwise() - x_mean;
    Eigen::MatrixXd targets(data.x.rows(), g);
    if (data.task == TaskKind::kRegression) {
      targets.col(0) = data.y;
    } else {
      targets.setZero();
      for (Eigen::Index i = 0; i < data.y.size(); ++i) {
        targets(i, static_cast<Eigen::Index>(data.y(i))) = 1.0;
      }
    }
    const Eigen::RowVectorXd t_mean = targets.colwise().mean();
    const Eigen::MatrixXd tc = targets.rowwise() - t_mean;
    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += hpc;
    RidgeModel model;
    model.beta = gram.ldlt().solve(xc.transpose() * tc);
    model.intercept = t_mean - x_mean * model.beta;
    model.task = data.task;
    out.predict = model;
    return out;
  }

  require(hpc >= 1.0 && hpc <= 64.0, "neighbor count must lie in [1, 64]");
  const int k = static_cast<int>(std::lround(hpc));
  out.hpc = "k=" + std::to_string(k);
  KnnModel model;
  model.mean = column_mean(data.x);
  model.sd = column_sd(data.x, model.mean);
  model.train_x = ((data.x.rowwise() - model.mean.transpose()).array().rowwise() /
                   model.sd.transpose().array())
                      .matrix();
  model.train_y = data.y;
  model.k = k;
  model.task = data.task;
  model.num_classes = data.num_classes;
  out.predict = model;
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::uint64_t seed) {
  data.validate();
  const Eigen::Index n = data.x.rows();
  require(n >= 3, "splitting needs at least 3 rows");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto eng = make_engine(seed, {kTagSplit});
  std::shuffle(order.begin(), order.end(), eng);
  const std::size_t n_test = static_cast<std::size_t>(n) / 3;
  std::vector<Eigen::Index> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<Eigen::Index> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {take_rows(data, train), take_rows(data, test)};
}

Dataset dataset_from_csv(const std::string& text, TaskKind task) {
  const std::vector<std::string> lines = io::split_lines(text);
  require(lines.size() >= 3, "dataset CSV needs a header and at least 2 rows");
  std::vector<std::string> header;
  require(io::parse_csv_row(lines[0], header), "malformed CSV header");
  require(header.size() >= 2, "dataset CSV needs at least one feature and a target");

  Dataset out;
  out.task = task;
  out.feature_names.assign(header.begin(), header.end() - 1);
  out.target_name = header.back();
  const std::size_t cols = header.size();
  const std::size_t rows = lines.size() - 1;
  out.x.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols - 1));
  out.y.resize(static_cast<Eigen::Index>(rows));
  std::vector<std::string> fields;
  for (std::size_t i = 0; i < rows; ++i) {
    require(io::parse_csv_row(lines[i + 1], fields), "malformed CSV record");
    require(fields.size() == cols, "ragged CSV rows");
    for (std::size_t j = 0; j < cols; ++j) {
      double v = 0.0;
      std::size_t pos = 0;
      try {
        v = std::stod(fields[j], &pos);
      } catch (const std::exception&) {
        throw std::invalid_argument("non-numeric CSV field: " + fields[j]);
      }
      require(pos == fields[j].size(), "non-numeric CSV field");
      if (j + 1 == cols) {
        out.y(static_cast<Eigen::Index>(i)) = v;
      } else {
        out.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      }
    }
  }
  if (task == TaskKind::kClassification) {
    out.num_classes = static_cast<int>(out.y.maxCoeff()) + 1;
  }
  out.validate();
  return out;
}

std::string dataset_to_csv(const Dataset& data) {
  std::vector<std::string> header = data.feature_names;
  header.push_back(data.target_name);
  std::string out = io::csv_row(header) + "\n";
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    std::vector<std::string> fields;
    fields.reserve(static_cast<std::size_t>(data.x.cols()) + 1);
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
      fields.push_back(io::format_double(data.x(i, j)));
    }
    fields.push_back(io::format_double(data.y(i)));
    out += io::csv_row(fields);
    out += "\n";
  }
  return out;
}

}  // namespace cashomon::importance
