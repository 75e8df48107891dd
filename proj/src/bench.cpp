#include "cashomon/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "cashomon/gp.hpp"
#include "cashomon/io.hpp"
#include "cashomon/rng.hpp"

namespace cashomon::bench {

namespace {

constexpr std::uint64_t kTagLengthscale = 0x61;
constexpr std::uint64_t kTagDraw = 0x62;
constexpr std::uint64_t kTagBumps = 0x63;
constexpr std::uint64_t kTagNoise = 0x64;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

double parametric_value(const Landscape::ClassSurface& surface, const Eigen::VectorXd& x) {
  double wells = 0.0;
  for (const auto& bump : surface.bumps) {
    const double d2 = (x - bump.center).squaredNorm();
    wells += bump.amplitude * std::exp(-d2 / (2.0 * bump.width * bump.width));
  }
  // 1 + offset + sum(A) - wells >= 1, so values stay positive for any eps_rel
  return 1.0 + surface.offset + surface.amp_total - wells;
}

nlohmann::json config_to_json_object(const ExperimentConfig& config) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["space"] = nlohmann::json::parse(space_to_json_text(config.space));
  doc["landscape"] = to_string(config.landscape);
  doc["landscape_seed"] = config.landscape_seed;
  doc["noise_sd"] = config.noise_sd;
  doc["per_class_candidates"] = config.per_class_candidates;
  doc["candidate_seed"] = config.candidate_seed;
  doc["algorithms"] = nlohmann::json::array();
  for (lse::Algorithm a : config.algorithms) doc["algorithms"].push_back(lse::to_string(a));
  doc["seeds"] = config.seeds;
  doc["run"] = nlohmann::json::parse(lse::run_config_to_json(config.run));
  return doc;
}

}  // namespace

LandscapeKind landscape_from_string(const std::string& name) {
  if (name == "gp_sample") return LandscapeKind::kGpSample;
  if (name == "parametric") return LandscapeKind::kParametric;
  throw std::invalid_argument("unknown landscape kind: " + name);
}

std::string to_string(LandscapeKind kind) {
  return kind == LandscapeKind::kGpSample ? "gp_sample" : "parametric";
}

Landscape make_landscape(const CashSpace& space, LandscapeKind kind, std::uint64_t seed,
                         double noise_sd) {
  space.validate();
  require(noise_sd >= 0.0, "noise_sd must be nonnegative");
  Landscape out;
  out.kind = kind;
  out.seed = seed;
  out.noise_sd = noise_sd;

  if (kind == LandscapeKind::kGpSample) {
    for (std::size_t m = 0; m < space.num_classes(); ++m) {
      auto eng = make_engine(seed, {kTagLengthscale, m});
      std::uniform_real_distribution<double> unif(0.1, 0.5);
      Eigen::VectorXd ls(space.classes[m].encoded_dim());
      for (Eigen::Index d = 0; d < ls.size(); ++d) ls(d) = unif(eng);
      out.lengthscales.push_back(std::move(ls));
    }
    return out;
  }

  for (std::size_t m = 0; m < space.num_classes(); ++m) {
    auto eng = make_engine(seed, {kTagBumps, m});
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Landscape::ClassSurface surface;
    surface.offset = 0.25 * static_cast<double>(m);
    const int n_bumps = 2 + static_cast<int>(eng() % 4);  // 2..5 wells
    const int dim = space.classes[m].encoded_dim();
    // Mild per-class amplitude scaling keeps class minima from colliding.
    const double amp_scale = 1.0 + 0.13 * static_cast<double>(m);
    for (int b = 0; b < n_bumps; ++b) {
      Landscape::Bump bump;
      bump.center.resize(dim);
      for (int d = 0; d < dim; ++d) bump.center(d) = unif(eng);
      bump.width = 0.08 + 0.17 * unif(eng);
      bump.amplitude = (0.5 + unif(eng)) * amp_scale;
      surface.amp_total += bump.amplitude;
      surface.bumps.push_back(std::move(bump));
    }
    out.surfaces.push_back(std::move(surface));
  }
  return out;
}

std::vector<double> landscape_values(const Landscape& landscape, const CashSpace& space,
                                     const CandidateSet& candidates) {
  candidates.validate(space);
  std::vector<double> values(candidates.size(), 0.0);

  if (landscape.kind == LandscapeKind::kParametric) {
    require(landscape.surfaces.size() == space.num_classes(),
            "landscape does not match the space");
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const ConfigPoint& pt = candidates.points[i];
      values[i] = parametric_value(landscape.surfaces[pt.class_index], pt.encoded);
    }
    return values;
  }

  require(landscape.lengthscales.size() == space.num_classes(),
          "landscape does not match the space");
  for (std::size_t m = 0; m < space.num_classes(); ++m) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (candidates.points[i].class_index == m) members.push_back(i);
    }
    if (members.empty()) continue;
    gp::ClassKernelParams kp;
    kp.output_variance = 1.0;
    kp.lengthscales = landscape.lengthscales[m];
    const Eigen::Index n = static_cast<Eigen::Index>(members.size());
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
      for (Eigen::Index b = 0; b <= a; ++b) {
        const double v = gp::matern52(candidates.points[members[static_cast<std::size_t>(a)]].encoded,
                                      candidates.points[members[static_cast<std::size_t>(b)]].encoded,
                                      kp);
        k(a, b) = v;
        k(b, a) = v;
      }
    }
    k.diagonal().array() += 1e-10;
    const Eigen::LLT<Eigen::MatrixXd> llt(k);
    require(llt.info() == Eigen::Success, "landscape kernel factorization failed");
    auto eng = make_engine(landscape.seed, {kTagDraw, m});
    std::normal_distribution<double> unit(0.0, 1.0);
    Eigen::VectorXd z(n);
    for (Eigen::Index a = 0; a < n; ++a) z(a) = unit(eng);
    const Eigen::VectorXd draw = llt.matrixL() * z;
    const double shift = 1.0 - draw.minCoeff();  // class minimum lands at 1
    for (Eigen::Index a = 0; a < n; ++a) {
      values[members[static_cast<std::size_t>(a)]] = draw(a) + shift;
    }
  }
  return values;
}

double f1(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth,
          std::size_t universe) {
  require(!truth.empty(), "ground truth set is empty");
  for (std::size_t i : predicted) require(i < universe, "predicted index out of range");
  for (std::size_t i : truth) require(i < universe, "truth index out of range");
  if (predicted.empty()) return 0.0;
  const std::set<std::size_t> truth_set(truth.begin(), truth.end());
  std::size_t tp = 0;
  for (std::size_t i : predicted) tp += truth_set.count(i);
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(predicted.size());
  const double recall = static_cast<double>(tp) / static_cast<double>(truth_set.size());
  return 2.0 * precision * recall / (precision + recall);
}

void ExperimentConfig::validate() const {
  space.validate();
  run.threshold.validate();
  require(per_class_candidates >= 1, "per_class_candidates must be >= 1");
  require(!algorithms.empty(), "algorithms list is empty");
  require(!seeds.empty(), "seeds list is empty");
  std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
  require(uniq.size() == seeds.size(), "seeds must be distinct");
  require(noise_sd >= 0.0, "noise_sd must be nonnegative");
  const std::size_t total = per_class_candidates * space.num_classes();
  require(run.budget <= total, "budget exceeds the candidate pool");
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig config;
  for (int m = 0; m < 3; ++m) {
    ModelClass cls;
    cls.name = "class" + std::to_string(m);
    ParamSpec p;
    p.name = "x";
    p.kind = ParamKind::kContinuous;
    p.lo = 0.0;
    p.hi = 1.0;
    cls.params.push_back(p);
    config.space.classes.push_back(cls);
  }
  config.landscape = LandscapeKind::kGpSample;
  config.landscape_seed = 1;
  config.per_class_candidates = 500;
  config.candidate_seed = 1;
  config.algorithms = lse::all_algorithms();
  for (std::uint64_t s = 0; s < 10; ++s) config.seeds.push_back(s);
  return config;
}

ExperimentResult run_experiment(const ExperimentConfig& config, int jobs) {
  config.validate();
  require(jobs >= 1, "jobs must be >= 1");

  ExperimentResult result;
  result.config = config;
  result.config_hash = config_hash(config);
  result.candidates =
      sample_candidates(config.space, config.per_class_candidates, config.candidate_seed);

  const Landscape landscape =
      make_landscape(config.space, config.landscape, config.landscape_seed, config.noise_sd);
  result.candidates.values = landscape_values(landscape, config.space, result.candidates);
  result.truth = ground_truth_set(result.candidates.values, config.run.threshold);

  const std::vector<double>& true_values = result.candidates.values;
  const std::vector<std::size_t>& truth = result.truth;
  const std::size_t universe = result.candidates.size();

  result.cells.resize(config.algorithms.size() * config.seeds.size());
  for (std::size_t a = 0; a < config.algorithms.size(); ++a) {
    for (std::size_t s = 0; s < config.seeds.size(); ++s) {
      RunCell& cell = result.cells[a * config.seeds.size() + s];
      cell.algo = config.algorithms[a];
      cell.seed = config.seeds[s];
    }
  }

  auto run_cell = [&](RunCell& cell) {
    lse::RunConfig rc = config.run;
    rc.algo = cell.algo;
    rc.seed = cell.seed;
    const double noise_sd = config.noise_sd;
    const std::uint64_t seed = cell.seed;
    lse::Objective objective = [&true_values, noise_sd, seed](std::size_t index) {
      double v = true_values[index];
      if (noise_sd > 0.0) {
        auto eng = make_engine(seed, {kTagNoise, index});
        std::normal_distribution<double> unit(0.0, 1.0);
        v += noise_sd * unit(eng);
      }
      return v;
    };
    lse::SetScore score = [&truth, universe](const std::vector<std::size_t>& predicted) {
      return f1(predicted, truth, universe);
    };
    try {
      lse::RunResult run =
          lse::run_algorithm(config.space, result.candidates, objective, rc, score);
      cell.records = std::move(run.records);
      cell.predicted = std::move(run.predicted);
    } catch (const std::exception& e) {
      cell.failed = true;
      cell.error = e.what();
    }
  };

  if (jobs == 1 || result.cells.size() <= 1) {
    for (RunCell& cell : result.cells) run_cell(cell);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= result.cells.size()) return;
        run_cell(result.cells[i]);
      }
    };
    std::vector<std::thread> pool;
    const std::size_t n_threads =
        std::min<std::size_t>(static_cast<std::size_t>(jobs), result.cells.size());
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  return result;
}

std::string experiment_config_to_json(const ExperimentConfig& config) {
  return config_to_json_object(config).dump(2) + "\n";
}

ExperimentConfig experiment_config_from_json_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("invalid config JSON: ") + e.what());
  }
  require(doc.is_object(), "config must be a JSON object");
  require(doc.contains("schema_version") && doc["schema_version"].is_number_integer(),
          "schema_version: missing or not an integer");
  require(doc["schema_version"].get<int>() == 1, "schema_version: only version 1 is supported");

  ExperimentConfig config;
  require(doc.contains("space"), "space: missing");
  config.space = space_from_json_text(doc["space"].dump());

  auto get_num = [&doc](const char* key, double fallback) {
    if (!doc.contains(key)) return fallback;
    require(doc[key].is_number(), std::string(key) + ": not a number");
    return doc[key].get<double>();
  };
  if (doc.contains("landscape")) {
    require(doc["landscape"].is_string(), "landscape: not a string");
    try {
      config.landscape = landscape_from_string(doc["landscape"].get<std::string>());
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("landscape: unknown kind '" +
                                  doc["landscape"].get<std::string>() + "'");
    }
  }
  config.landscape_seed = static_cast<std::uint64_t>(get_num("landscape_seed", 1));
  config.noise_sd = get_num("noise_sd", 0.0);
  config.per_class_candidates =
      static_cast<std::size_t>(get_num("per_class_candidates", 500));
  config.candidate_seed = static_cast<std::uint64_t>(get_num("candidate_seed", 1));

  if (doc.contains("algorithms")) {
    require(doc["algorithms"].is_array(), "algorithms: not an array");
    for (std::size_t i = 0; i < doc["algorithms"].size(); ++i) {
      const auto& entry = doc["algorithms"][i];
      require(entry.is_string(), "algorithms[" + std::to_string(i) + "]: not a string");
      try {
        config.algorithms.push_back(lse::algorithm_from_string(entry.get<std::string>()));
      } catch (const std::invalid_argument&) {
        throw std::invalid_argument("algorithms[" + std::to_string(i) + "]: unknown algorithm '" +
                                    entry.get<std::string>() + "'");
      }
    }
  } else {
    config.algorithms = lse::all_algorithms();
  }

  if (doc.contains("seeds")) {
    require(doc["seeds"].is_array(), "seeds: not an array");
    for (const auto& s : doc["seeds"]) {
      require(s.is_number(), "seeds: entries must be numbers");
      config.seeds.push_back(s.get<std::uint64_t>());
    }
  } else {
    for (std::uint64_t s = 0; s < 10; ++s) config.seeds.push_back(s);
  }

  if (doc.contains("run")) {
    const auto& run = doc["run"];
    require(run.is_object(), "run: not an object");
    auto num = [&run](const char* key, double fallback) {
      if (!run.contains(key)) return fallback;
      require(run[key].is_number(), std::string("run.") + key + ": not a number");
      return run[key].get<double>();
    };
    auto flag = [&run](const char* key, bool fallback) {
      if (!run.contains(key)) return fallback;
      require(run[key].is_boolean(), std::string("run.") + key + ": not a boolean");
      return run[key].get<bool>();
    };
    config.run.budget = static_cast<std::size_t>(num("budget", 290));
    config.run.init_per_class = static_cast<std::size_t>(num("init_per_class", 30));
    config.run.threshold.eps_rel = num("eps_rel", 0.05);
    config.run.threshold.eps_abs = num("eps_abs", 0.0);
    config.run.beta_sqrt = num("beta_sqrt", 3.0);
    config.run.eta1 = num("eta1", 1.0);
    config.run.r = num("r", 0.1);
    config.run.slack = num("slack", 0.0);
    config.run.monotonic = flag("monotonic", false);
    config.run.refit = flag("refit", true);
    config.run.max_epoch = static_cast<int>(num("max_epoch", 50));
    config.run.straddle_kappa = num("straddle_kappa", 1.96);
    config.run.gp_config.standardize = flag("standardize", true);
  }
  config.validate();
  return config;
}

std::string config_hash(const ExperimentConfig& config) {
  // The hash names the problem instance: space, landscape, candidates, run
  // parameters. Algorithm list and seed list are deliberately excluded since
  // both already appear in the output filenames and table columns, so a seed
  // override relocates nothing.
  nlohmann::json doc = config_to_json_object(config);
  doc.erase("algorithms");
  doc.erase("seeds");
  return io::hash_hex(doc.dump());
}

std::string experiment_table_csv(const ExperimentResult& result) {
  std::string out = "algorithm,seed,iteration,f1,incumbent,size_L,size_H,size_U,size_M\n";
  for (const RunCell& cell : result.cells) {
    const std::string head = lse::to_string(cell.algo) + "," + std::to_string(cell.seed) + ",";
    for (const lse::RunRecord& rec : cell.records) {
      out += head;
      out += std::to_string(rec.iteration);
      out += ",";
      out += io::format_double(rec.f1);
      out += ",";
      out += io::format_double(rec.incumbent);
      out += ",";
      out += std::to_string(rec.size_L);
      out += ",";
      out += std::to_string(rec.size_H);
      out += ",";
      out += std::to_string(rec.size_U);
      out += ",";
      out += std::to_string(rec.size_M);
      out += "\n";
    }
  }
  return out;
}

std::string summary_to_json(const ExperimentResult& result) {
  nlohmann::json doc;
  doc["config"] = config_to_json_object(result.config);
  doc["config_hash"] = result.config_hash;
  doc["candidates"] = result.candidates.size();
  doc["truth_size"] = result.truth.size();

  int max_epoch_seen = 1;
  nlohmann::json algos = nlohmann::json::object();
  for (const RunCell& cell : result.cells) {
    for (const lse::RunRecord& rec : cell.records) {
      max_epoch_seen = std::max(max_epoch_seen, rec.epoch);
    }
  }
  // Group cells by algorithm, preserving the configured order.
  for (lse::Algorithm algo : result.config.algorithms) {
    std::vector<const RunCell*> members;
    for (const RunCell& cell : result.cells) {
      if (cell.algo == algo) members.push_back(&cell);
    }
    std::size_t iterations = 0;
    int failed = 0;
    for (const RunCell* cell : members) {
      if (cell->failed) {
        ++failed;
      } else {
        iterations = std::max(iterations, cell->records.size());
      }
    }
    nlohmann::json entry;
    entry["runs"] = members.size();
    entry["failed_runs"] = failed;
    std::vector<double> mean_curve, sd_curve;
    for (std::size_t t = 0; t < iterations; ++t) {
      std::vector<double> vals;
      for (const RunCell* cell : members) {
        if (!cell->failed && t < cell->records.size() && std::isfinite(cell->records[t].f1)) {
          vals.push_back(cell->records[t].f1);
        }
      }
      if (vals.empty()) {
        mean_curve.push_back(0.0);
        sd_curve.push_back(0.0);
        continue;
      }
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      var = vals.size() > 1 ? var / static_cast<double>(vals.size() - 1) : 0.0;
      mean_curve.push_back(mean);
      sd_curve.push_back(std::sqrt(var));
    }
    entry["mean_f1"] = mean_curve;
    entry["sd_f1"] = sd_curve;
    entry["final_mean_f1"] = mean_curve.empty() ? 0.0 : mean_curve.back();
    algos[lse::to_string(algo)] = entry;
  }
  doc["algorithms"] = algos;

  // The exact eta sequence the epoch loop walks: eta_i = eta1 * r^(i-1).
  nlohmann::json etas = nlohmann::json::array();
  for (int i = 1; i <= max_epoch_seen; ++i) {
    etas.push_back(result.config.run.eta1 *
                   std::pow(result.config.run.r, static_cast<double>(i - 1)));
  }
  doc["eta_schedule"] = etas;
  return doc.dump(2) + "\n";
}

std::vector<std::string> write_experiment_files(const ExperimentResult& result,
                                                const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  for (const RunCell& cell : result.cells) {
    const std::string stem = out_dir + "/" + result.config_hash + "_" + lse::to_string(cell.algo) +
                             "_" + std::to_string(cell.seed);
    io::write_file(stem + ".csv", lse::records_to_csv(cell.records));
    written.push_back(stem + ".csv");
    io::write_file(stem + ".jsonl", lse::records_to_jsonl(cell.records));
    written.push_back(stem + ".jsonl");
  }
  const std::string table_path = out_dir + "/" + result.config_hash + "_table.csv";
  io::write_file(table_path, experiment_table_csv(result));
  written.push_back(table_path);
  const std::string summary_path = out_dir + "/" + result.config_hash + "_summary.json";
  io::write_file(summary_path, summary_to_json(result));
  written.push_back(summary_path);
  return written;
}

}  // namespace cashomon::bench
