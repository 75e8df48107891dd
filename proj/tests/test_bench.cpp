#include "cashomon/bench.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "json.hpp"

#include "cashomon/io.hpp"
#include "cashomon/rng.hpp"

using namespace cashomon;
using bench::ExperimentConfig;
using bench::ExperimentResult;
using bench::Landscape;
using bench::LandscapeKind;

namespace {

CashSpace one_param_space(int n_classes) {
  CashSpace space;
  for (int m = 0; m < n_classes; ++m) {
    ModelClass cls;
    cls.name = "class" + std::to_string(m);
    ParamSpec p;
    p.name = "x";
    p.lo = 0.0;
    p.hi = 1.0;
    cls.params.push_back(p);
    space.classes.push_back(cls);
  }
  return space;
}

ExperimentConfig small_config(LandscapeKind kind) {
  ExperimentConfig config;
  config.space = one_param_space(2);
  config.landscape = kind;
  config.landscape_seed = 5;
  config.per_class_candidates = 15;
  config.candidate_seed = 3;
  config.algorithms = {lse::Algorithm::kTruVarImp, lse::Algorithm::kRandom};
  config.seeds = {0, 1};
  config.run.budget = 22;
  config.run.init_per_class = 5;
  config.run.gp_config.fit_restarts = 2;
  config.run.gp_config.fit_max_evals = 40;
  return config;
}

}  // namespace

TEST_CASE("f1 matches the membership formula") {
  CHECK(bench::f1({0, 1, 2}, {0, 1, 2}, 10) == 1.0);
  CHECK(bench::f1({}, {0, 1}, 10) == 0.0);
  CHECK(bench::f1({1, 2}, {0, 1}, 10) == doctest::Approx(0.5));
  CHECK(bench::f1({5}, {0, 1}, 10) == 0.0);
  // precision 1/3, recall 1/2
  CHECK(bench::f1({0, 3, 4}, {0, 1}, 10) == doctest::Approx(0.4));

  CHECK_THROWS_AS(bench::f1({0}, {}, 10), std::invalid_argument);
  CHECK_THROWS_AS(bench::f1({10}, {0}, 10), std::invalid_argument);
  CHECK_THROWS_AS(bench::f1({0}, {10}, 10), std::invalid_argument);
}

TEST_CASE("f1 stays in range and survives index relabeling") {
  auto eng = make_engine(611, {0x90});
  std::uniform_int_distribution<std::size_t> pick(0, 19);
  std::vector<std::size_t> relabel(20);
  std::iota(relabel.begin(), relabel.end(), std::size_t{0});
  std::shuffle(relabel.begin(), relabel.end(), eng);

  for (int rep = 0; rep < 50; ++rep) {
    std::set<std::size_t> pred_set, truth_set;
    const int np = 1 + static_cast<int>(eng() % 6);
    const int nt = 1 + static_cast<int>(eng() % 6);
    for (int i = 0; i < np; ++i) pred_set.insert(pick(eng));
    for (int i = 0; i < nt; ++i) truth_set.insert(pick(eng));
    const std::vector<std::size_t> pred(pred_set.begin(), pred_set.end());
    const std::vector<std::size_t> truth(truth_set.begin(), truth_set.end());

    const double score = bench::f1(pred, truth, 20);
    CHECK(score >= 0.0);
    CHECK(score <= 1.0);

    std::vector<std::size_t> pred2, truth2;
    for (std::size_t i : pred) pred2.push_back(relabel[i]);
    for (std::size_t i : truth) truth2.push_back(relabel[i]);
    CHECK(bench::f1(pred2, truth2, 20) == score);
  }
}

TEST_CASE("parametric landscapes are deterministic with distinct class minima") {
  const CashSpace space = one_param_space(3);
  const CandidateSet cands = sample_candidates(space, 200, 17);
  const Landscape a = bench::make_landscape(space, LandscapeKind::kParametric, 7);
  const Landscape b = bench::make_landscape(space, LandscapeKind::kParametric, 7);

  const std::vector<double> va = bench::landscape_values(a, space, cands);
  const std::vector<double> vb = bench::landscape_values(b, space, cands);
  CHECK(va == vb);

  const Landscape c = bench::make_landscape(space, LandscapeKind::kParametric, 8);
  CHECK(bench::landscape_values(c, space, cands) != va);

  std::vector<double> class_min(3, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < cands.size(); ++i) {
    CHECK(std::isfinite(va[i]));
    CHECK(va[i] >= 1.0);
    auto& mn = class_min[cands.points[i].class_index];
    mn = std::min(mn, va[i]);
  }
  for (int m = 0; m < 3; ++m) {
    for (int m2 = m + 1; m2 < 3; ++m2) {
      CHECK(std::abs(class_min[m] - class_min[m2]) > 1e-9);
    }
  }
}

TEST_CASE("gp sample landscapes correlate at nearby points") {
  CashSpace space = one_param_space(1);
  CandidateSet cands;
  // 1000 pairs of points 0.004 apart, interleaved
  for (int i = 0; i < 1000; ++i) {
    const double base = static_cast<double>(i) / 1000.0 * 0.98;
    for (int side = 0; side < 2; ++side) {
      ConfigPoint pt;
      pt.class_index = 0;
      pt.raw_values = {RawValue{base + 0.004 * side}};
      pt.encoded = encode(pt.raw_values, space.classes[0].params);
      cands.points.push_back(pt);
      cands.costs.push_back(1.0);
    }
  }
  const Landscape l = bench::make_landscape(space, LandscapeKind::kGpSample, 21);
  const std::vector<double> v = bench::landscape_values(l, space, cands);

  Eigen::VectorXd left(1000), right(1000);
  for (int i = 0; i < 1000; ++i) {
    left(i) = v[static_cast<std::size_t>(2 * i)];
    right(i) = v[static_cast<std::size_t>(2 * i + 1)];
  }
  const Eigen::VectorXd dl = left.array() - left.mean();
  const Eigen::VectorXd dr = right.array() - right.mean();
  const double corr = dl.dot(dr) / std::sqrt(dl.squaredNorm() * dr.squaredNorm());
  CHECK(corr > 0.0);
  CHECK(corr > 0.9);  // 0.004 apart at lengthscales >= 0.1

  const double mn = *std::min_element(v.begin(), v.end());
  CHECK(mn == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bench::landscape_values(l, space, cands) == v);
}

TEST_CASE("run_experiment fills every cell deterministically") {
  const ExperimentConfig config = small_config(LandscapeKind::kParametric);
  const ExperimentResult result = bench::run_experiment(config);

  CHECK(result.cells.size() == 4);
  CHECK(result.truth.size() >= 1);
  CHECK(result.candidates.size() == 30);
  CHECK(result.config_hash.size() > 0);

  for (const auto& cell : result.cells) {
    CHECK_FALSE(cell.failed);
    CHECK(cell.records.size() == config.run.budget - 10);
    for (const auto& rec : cell.records) {
      CHECK(rec.f1 >= 0.0);
      CHECK(rec.f1 <= 1.0);
    }
  }

  // table rows = |algorithms| x |seeds| x iterations (+ header)
  const std::string table = bench::experiment_table_csv(result);
  const auto lines = io::split_lines(table);
  CHECK(lines.size() == 1 + 4 * (config.run.budget - 10));
  CHECK(lines[0] == "algorithm,seed,iteration,f1,incumbent,size_L,size_H,size_U,size_M");
  CHECK(lines[1].rfind("TRUVARIMP,0,1,", 0) == 0);

  const ExperimentResult again = bench::run_experiment(config);
  CHECK(bench::experiment_table_csv(again) == table);
  CHECK(bench::summary_to_json(again) == bench::summary_to_json(result));

  // same cells in parallel
  const ExperimentResult parallel = bench::run_experiment(config, 3);
  CHECK(bench::experiment_table_csv(parallel) == table);
}

TEST_CASE("full noiseless budget drives every algorithm to f1 = 1") {
  ExperimentConfig config = small_config(LandscapeKind::kParametric);
  config.algorithms = lse::all_algorithms();
  config.seeds = {4};
  config.run.budget = 30;  // the whole pool
  const ExperimentResult result = bench::run_experiment(config);

  CHECK(result.cells.size() == 7);
  for (const auto& cell : result.cells) {
    CHECK_FALSE(cell.failed);
    CHECK(cell.records.back().f1 == 1.0);
    std::vector<std::size_t> predicted = cell.predicted;
    std::sort(predicted.begin(), predicted.end());
    CHECK(predicted == result.truth);
  }
}

TEST_CASE("epsilon accuracy is monotone over the eps grid") {
  const CashSpace space = one_param_space(1);
  const CandidateSet base_cands = sample_candidates(space, 60, 9);
  const Landscape landscape = bench::make_landscape(space, LandscapeKind::kGpSample, 31);
  std::vector<double> truth_values = bench::landscape_values(landscape, space, base_cands);
  const double range = *std::max_element(truth_values.begin(), truth_values.end()) -
                       *std::min_element(truth_values.begin(), truth_values.end());

  ThresholdSpec spec;
  const double h =
      threshold_from_min(*std::min_element(truth_values.begin(), truth_values.end()), spec);

  for (double noise_scale : {0.0, 0.01}) {
    const double noise_sd = noise_scale * range;
    std::array<int, 3> passes{0, 0, 0};  // eps = 0.5, 0.25, 0.1 of the range
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      lse::RunConfig rc;
      rc.algo = lse::Algorithm::kTruVarImp;
      rc.budget = 45;
      rc.init_per_class = 15;
      rc.seed = seed;
      rc.refit = false;
      rc.gp_config.standardize = false;
      gp::KernelParams kernel = gp::KernelParams::defaults(space);
      kernel.classes[0].lengthscales.setConstant(0.3);
      kernel.classes[0].output_variance = 1.0;
      kernel.classes[0].noise_variance = std::max(noise_sd * noise_sd, 1e-6);
      rc.kernel = kernel;

      CandidateSet cands = base_cands;
      lse::Objective objective = [&](std::size_t i) {
        double v = truth_values[i];
        if (noise_sd > 0.0) {
          auto eng = make_engine(seed, {0x99, i});
          std::normal_distribution<double> unit(0.0, 1.0);
          v += noise_sd * unit(eng);
        }
        return v;
      };
      const lse::RunResult run = lse::run_algorithm(space, cands, objective, rc);

      const std::array<double, 3> eps_grid{0.5 * range, 0.25 * range, 0.1 * range};
      std::array<bool, 3> ok{};
      for (int e = 0; e < 3; ++e) {
        ok[static_cast<std::size_t>(e)] =
            lse::epsilon_accurate(run.partition, truth_values, h, eps_grid[static_cast<std::size_t>(e)]);
        passes[static_cast<std::size_t>(e)] += ok[static_cast<std::size_t>(e)] ? 1 : 0;
      }
      // per-run implication: passing a tighter eps implies passing a looser one
      CHECK((!ok[2] || ok[1]));
      CHECK((!ok[1] || ok[0]));
    }
    CHECK(passes[0] >= passes[1]);
    CHECK(passes[1] >= passes[2]);
  }
}

TEST_CASE("experiment files land on disk and reruns are byte identical") {
  const ExperimentConfig config = small_config(LandscapeKind::kGpSample);
  const ExperimentResult result = bench::run_experiment(config);

  const std::string dir1 = "bench_out_a";
  const std::string dir2 = "bench_out_b";
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
  const auto files1 = bench::write_experiment_files(result, dir1);
  CHECK(files1.size() == 4 * 2 + 2);

  const std::string expect = dir1 + "/" + result.config_hash + "_TRUVARIMP_0.csv";
  CHECK(std::filesystem::exists(expect));
  CHECK(std::filesystem::exists(dir1 + "/" + result.config_hash + "_summary.json"));

  const ExperimentResult rerun = bench::run_experiment(config);
  const auto files2 = bench::write_experiment_files(rerun, dir2);
  REQUIRE(files1.size() == files2.size());
  for (std::size_t i = 0; i < files1.size(); ++i) {
    CHECK(io::read_file(files1[i]) == io::read_file(files2[i]));
  }
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("summary json carries curves, the config echo and the eta schedule") {
  ExperimentConfig config = small_config(LandscapeKind::kParametric);
  config.run.gp_config.standardize = false;
  const ExperimentResult result = bench::run_experiment(config);
  const std::string summary = bench::summary_to_json(result);

  CHECK(summary.find("\"mean_f1\"") != std::string::npos);
  CHECK(summary.find("\"sd_f1\"") != std::string::npos);
  CHECK(summary.find("\"TRUVARIMP\"") != std::string::npos);
  CHECK(summary.find("\"RANDOM\"") != std::string::npos);
  CHECK(summary.find("\"eta_schedule\"") != std::string::npos);
  CHECK(summary.find("\"beta_sqrt\": 3") != std::string::npos);
  CHECK(summary.find("\"eta1\": 1") != std::string::npos);
  CHECK(summary.find("\"r\": 0.1") != std::string::npos);
  CHECK(summary.find("\"eps_rel\": 0.05") != std::string::npos);
  CHECK(summary.find("\"config_hash\"") != std::string::npos);
}

TEST_CASE("experiment config json round trips and names bad fields") {
  const ExperimentConfig config = bench::default_experiment_config();
  CHECK(config.space.num_classes() == 3);
  CHECK(config.per_class_candidates == 500);
  CHECK(config.seeds.size() == 10);
  CHECK(config.algorithms.size() == 7);
  CHECK(config.run.budget == 290);
  config.validate();

  const std::string text = bench::experiment_config_to_json(config);
  const ExperimentConfig back = bench::experiment_config_from_json_text(text);
  CHECK(bench::experiment_config_to_json(back) == text);
  CHECK(bench::config_hash(back) == bench::config_hash(config));

  CHECK_THROWS_WITH_AS(
      bench::experiment_config_from_json_text("{\"schema_version\":1}"),
      "space: missing", std::invalid_argument);
  CHECK_THROWS_AS(bench::experiment_config_from_json_text("{}"), std::invalid_argument);
  CHECK_THROWS_AS(bench::experiment_config_from_json_text("nope"), std::invalid_argument);

  nlohmann::json doc = nlohmann::json::parse(text);
  doc["schema_version"] = 2;
  CHECK_THROWS_AS(bench::experiment_config_from_json_text(doc.dump()), std::invalid_argument);

  doc["schema_version"] = 1;
  doc["algorithms"] = {"TRUVARIMP", "NOPE"};
  try {
    bench::experiment_config_from_json_text(doc.dump());
    CHECK(false);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("algorithms[1]") != std::string::npos);
  }

  doc["algorithms"] = {"TRUVARIMP"};
  doc["seeds"] = {1, 1};
  CHECK_THROWS_AS(bench::experiment_config_from_json_text(doc.dump()), std::invalid_argument);

  doc["seeds"] = {1};
  doc["per_class_candidates"] = 10;  // budget 290 over a 30-point pool
  CHECK_THROWS_AS(bench::experiment_config_from_json_text(doc.dump()), std::invalid_argument);
}

TEST_CASE("experiment validation rejects budgets beyond the pool") {
  ExperimentConfig config = small_config(LandscapeKind::kParametric);
  config.run.budget = 40;  // 30-point pool
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  CHECK_THROWS_AS(bench::run_experiment(config), std::invalid_argument);
}

TEST_CASE("a failing cell is recorded while the rest continue") {
  ExperimentConfig config = small_config(LandscapeKind::kParametric);
  // r = 1 only trips the per-run validation inside each cell
  config.run.r = 1.0;
  const ExperimentResult result = bench::run_experiment(config);
  CHECK(result.cells.size() == 4);
  for (const auto& cell : result.cells) {
    CHECK(cell.failed);
    CHECK(cell.error.size() > 0);
    CHECK(cell.records.empty());
  }
  const std::string summary = bench::summary_to_json(result);
  CHECK(summary.find("\"failed_runs\": 2") != std::string::npos);
}
