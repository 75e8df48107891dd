#include "cashomon/lse.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "cashomon/io.hpp"
#include "cashomon/rng.hpp"
#include "json.hpp"

namespace cashomon::lse {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;
constexpr std::uint64_t kTagInit = 0x11;
constexpr std::uint64_t kTagPerm = 0x22;
constexpr std::uint64_t kTagFit = 0x33;

double excess(double beta, double p, double variance, double eta) {
  return std::max(p * p * beta * variance - eta * eta, 0.0);
}

std::vector<std::size_t> merge_sorted(const std::vector<std::size_t>& a,
                                      const std::vector<std::size_t>& b) {
  std::vector<std::size_t> out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<std::size_t> filter_eligible(const std::vector<std::size_t>& set,
                                         const std::vector<char>& eligible) {
  std::vector<std::size_t> out;
  out.reserve(set.size());
  for (auto idx : set)
    if (eligible[idx]) out.push_back(idx);
  return out;
}

void check_sorted_unique(const std::vector<std::size_t>& v, const char* what) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i - 1] >= v[i]) throw std::logic_error(std::string(what) + " not sorted unique");
}

// Acquisition scores for every index in search: truncated excess variance
// removed from set_u (weight 1) and set_m (weight p_m) by a hypothetical
// evaluation, divided by cost. Cross-class targets contribute exactly zero.
std::vector<double> tv_scores(const gp::Surrogate& gpr, const PosteriorTable& table,
                              const std::vector<std::size_t>& search,
                              const std::vector<std::size_t>& set_u,
                              const std::vector<std::size_t>& set_m, double p_m,
                              const EpochState& epoch, const std::vector<double>& costs) {
  const std::size_t n_classes = table.batches.size();
  std::vector<std::vector<int>> search_loc(n_classes), u_loc(n_classes), m_loc(n_classes);
  std::vector<std::vector<std::size_t>> search_pos(n_classes);
  for (std::size_t si = 0; si < search.size(); ++si) {
    std::size_t g = search[si];
    search_loc[table.cls[g]].push_back(table.local[g]);
    search_pos[table.cls[g]].push_back(si);
  }
  for (auto g : set_u) u_loc[table.cls[g]].push_back(table.local[g]);
  for (auto g : set_m) m_loc[table.cls[g]].push_back(table.local[g]);

  std::vector<double> scores(search.size(), 0.0);
  for (std::size_t m = 0; m < n_classes; ++m) {
    if (search_loc[m].empty()) continue;
    if (u_loc[m].empty() && m_loc[m].empty()) continue;
    const auto& batch = table.batches[m];
    std::vector<int> tgt = u_loc[m];
    tgt.insert(tgt.end(), m_loc[m].begin(), m_loc[m].end());
    Eigen::MatrixXd cov = gpr.cross_cov_latent(m, batch, search_loc[m], tgt);
    const std::size_t nu = u_loc[m].size();
    for (std::size_t a = 0; a < search_loc[m].size(); ++a) {
      double denom = gpr.lookahead_denom_latent(batch, search_loc[m][a]);
      bool floored = denom <= 1e-12 * batch.output_variance;
      double acc = 0.0;
      for (std::size_t b = 0; b < tgt.size(); ++b) {
        double p = b < nu ? 1.0 : p_m;
        double vj = batch.var_latent[tgt[b]];
        double c = cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        double la = floored ? vj : std::max(vj - c * c / denom, 0.0);
        acc += excess(epoch.beta, p, vj, epoch.eta) - excess(epoch.beta, p, la, epoch.eta);
      }
      scores[search_pos[m][a]] = acc;
    }
  }
  for (std::size_t si = 0; si < search.size(); ++si) scores[si] /= costs[search[si]];
  return scores;
}

Selection pick_scored(const PosteriorTable& table, const std::vector<std::size_t>& search,
                      const std::vector<double>& scores) {
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t si = 0; si < search.size(); ++si) {
    if (scores[si] > best_score) {
      best_score = scores[si];
      best = si;
    }
  }
  if (best_score > 0.0) return {search[best], best_score, false};
  // every score is zero: most uncertain searched point instead
  std::size_t fb = search[0];
  double fb_var = table.var_latent[static_cast<Eigen::Index>(fb)];
  for (auto idx : search) {
    double v = table.var_latent[static_cast<Eigen::Index>(idx)];
    if (v > fb_var) {
      fb_var = v;
      fb = idx;
    }
  }
  return {fb, 0.0, true};
}

void compute_thresholds(Bounds& bounds, const std::vector<std::size_t>& m_set,
                        const ThresholdSpec& spec) {
  double c_min_pes = std::numeric_limits<double>::infinity();
  double l_min = std::numeric_limits<double>::infinity();
  for (auto idx : m_set) {
    c_min_pes = std::min(c_min_pes, bounds.u[static_cast<Eigen::Index>(idx)]);
    l_min = std::min(l_min, bounds.l[static_cast<Eigen::Index>(idx)]);
  }
  bounds.c_min_pes = c_min_pes;
  bounds.h_pes = threshold_from_min(c_min_pes, spec);
  bounds.h_opt = threshold_from_min(l_min, spec);
}

}  // namespace

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kTruVarImp: return "TRUVARIMP";
    case Algorithm::kTruVar: return "TRUVAR";
    case Algorithm::kLse: return "LSE";
    case Algorithm::kLseImp: return "LSE_IMP";
    case Algorithm::kStraddle: return "STRADDLE";
    case Algorithm::kRandom: return "RANDOM";
    case Algorithm::kOptimize: return "OPTIMIZE";
  }
  throw std::logic_error("unknown algorithm enum value");
}

Algorithm algorithm_from_string(const std::string& name) {
  for (Algorithm a : all_algorithms())
    if (to_string(a) == name) return a;
  throw std::invalid_argument("unknown algorithm: " + name);
}

const std::vector<Algorithm>& all_algorithms() {
  static const std::vector<Algorithm> kAll = {
      Algorithm::kTruVarImp, Algorithm::kTruVar,  Algorithm::kLse,     Algorithm::kLseImp,
      Algorithm::kStraddle,  Algorithm::kRandom, Algorithm::kOptimize};
  return kAll;
}

void Partition::validate(std::size_t n) const {
  check_sorted_unique(L, "L");
  check_sorted_unique(H, "H");
  check_sorted_unique(U, "U");
  check_sorted_unique(M, "M");
  std::vector<char> seen(n, 0);
  auto mark = [&](const std::vector<std::size_t>& set, const char* what) {
    for (auto idx : set) {
      if (idx >= n) throw std::logic_error(std::string(what) + " index out of range");
      if (seen[idx]) throw std::logic_error("partition sets overlap");
      seen[idx] = 1;
    }
  };
  mark(L, "L");
  mark(H, "H");
  mark(U, "U");
  if (L.size() + H.size() + U.size() != n) throw std::logic_error("partition not exhaustive");
  std::vector<std::size_t> lu = merge_sorted(L, U);
  if (!std::includes(lu.begin(), lu.end(), M.begin(), M.end()))
    throw std::logic_error("minimizer set escapes L and U");
}

Partition initial_partition(std::size_t n) {
  Partition p;
  p.U.resize(n);
  p.M.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    p.U[i] = i;
    p.M[i] = i;
  }
  return p;
}

std::pair<double, double> confidence_bounds(double mean, double variance, double beta) {
  if (variance < 0.0 || beta <= 0.0)
    throw std::invalid_argument("confidence_bounds needs variance >= 0 and beta > 0");
  double half = std::sqrt(beta) * std::sqrt(variance);
  return {mean - half, mean + half};
}

double delta(const std::vector<std::size_t>& indices, const Eigen::VectorXd& variances, double p,
             const EpochState& epoch) {
  if (p < 1.0) throw std::invalid_argument("delta needs p >= 1");
  double sum = 0.0;
  for (auto idx : indices)
    sum += excess(epoch.beta, p, variances[static_cast<Eigen::Index>(idx)], epoch.eta);
  return sum;
}

PosteriorTable build_posterior_table(const gp::Surrogate& gp, const CandidateSet& candidates) {
  const std::size_t n = candidates.size();
  PosteriorTable t;
  t.cls.resize(n);
  t.local.resize(n);
  std::size_t n_classes = 0;
  for (const auto& p : candidates.points) n_classes = std::max(n_classes, p.class_index + 1);
  t.class_members.resize(n_classes);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = candidates.points[i].class_index;
    t.cls[i] = m;
    t.local[i] = static_cast<int>(t.class_members[m].size());
    t.class_members[m].push_back(static_cast<int>(i));
  }
  t.batches.reserve(n_classes);
  t.mean_raw.resize(static_cast<Eigen::Index>(n));
  t.var_raw.resize(static_cast<Eigen::Index>(n));
  t.var_latent.resize(static_cast<Eigen::Index>(n));
  for (std::size_t m = 0; m < n_classes; ++m) {
    const auto& members = t.class_members[m];
    Eigen::Index dim = members.empty()
                           ? 0
                           : candidates.points[static_cast<std::size_t>(members[0])].encoded.size();
    Eigen::MatrixXd enc(dim, static_cast<Eigen::Index>(members.size()));
    for (std::size_t j = 0; j < members.size(); ++j)
      enc.col(static_cast<Eigen::Index>(j)) =
          candidates.points[static_cast<std::size_t>(members[j])].encoded;
    t.batches.push_back(gp.batch_posterior(m, enc));
    const auto& b = t.batches.back();
    for (std::size_t j = 0; j < members.size(); ++j) {
      Eigen::Index g = members[j];
      t.mean_raw[g] = b.mean_raw[static_cast<Eigen::Index>(j)];
      t.var_raw[g] = b.var_raw[static_cast<Eigen::Index>(j)];
      t.var_latent[g] = b.var_latent[static_cast<Eigen::Index>(j)];
    }
  }
  return t;
}

Selection truvarimp_select(const gp::Surrogate& gp, const PosteriorTable& table,
                           const Partition& part, const EpochState& epoch,
                           const std::vector<double>& costs, double eps_rel,
                           const std::vector<char>& eligible) {
  std::vector<std::size_t> search = filter_eligible(merge_sorted(part.M, part.U), eligible);
  if (search.empty()) throw std::invalid_argument("no searchable candidate in M or U");
  auto scores = tv_scores(gp, table, search, part.U, part.M, 1.0 + eps_rel, epoch, costs);
  return pick_scored(table, search, scores);
}

Selection truvar_select(const gp::Surrogate& gp, const PosteriorTable& table,
                        const Partition& part, const EpochState& epoch,
                        const std::vector<double>& costs, const std::vector<char>& eligible) {
  std::vector<std::size_t> search = filter_eligible(part.U, eligible);
  if (search.empty()) throw std::invalid_argument("no searchable candidate in U");
  auto scores = tv_scores(gp, table, search, part.U, {}, 1.0, epoch, costs);
  return pick_scored(table, search, scores);
}

Partition update_partition(Bounds& bounds, const Partition& prev, bool nonmonotonic,
                           const ThresholdSpec& spec) {
  const std::size_t n = static_cast<std::size_t>(bounds.l.size());
  bounds.m_was_empty = prev.M.empty();
  if (prev.M.empty()) {
    if (!nonmonotonic)
      throw std::runtime_error("minimizer set emptied in monotonic mode (confidence failure)");
    // recovery path: rebuild the reference thresholds over everything
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    compute_thresholds(bounds, all, spec);
  } else {
    compute_thresholds(bounds, prev.M, spec);
  }

  Partition next;
  std::vector<char> in_h(n, 0);
  if (nonmonotonic) {
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Index e = static_cast<Eigen::Index>(i);
      if (bounds.u[e] <= bounds.h_opt) {
        next.L.push_back(i);
      } else if (bounds.l[e] > bounds.h_pes) {
        next.H.push_back(i);
        in_h[i] = 1;
      } else {
        next.U.push_back(i);
      }
    }
  } else {
    next.L = prev.L;
    next.H = prev.H;
    for (auto idx : prev.U) {
      Eigen::Index e = static_cast<Eigen::Index>(idx);
      if (bounds.u[e] <= bounds.h_opt) {
        next.L.push_back(idx);
      } else if (bounds.l[e] > bounds.h_pes) {
        next.H.push_back(idx);
      } else {
        next.U.push_back(idx);
      }
    }
    std::sort(next.L.begin(), next.L.end());
    std::sort(next.H.begin(), next.H.end());
    for (auto idx : next.H) in_h[idx] = 1;
  }

  if (nonmonotonic) {
    for (std::size_t i = 0; i < n; ++i)
      if (!in_h[i] && bounds.l[static_cast<Eigen::Index>(i)] <= bounds.c_min_pes)
        next.M.push_back(i);
  } else {
    for (auto idx : prev.M)
      if (!in_h[idx] && bounds.l[static_cast<Eigen::Index>(idx)] <= bounds.c_min_pes)
        next.M.push_back(idx);
    if (next.M.empty())
      throw std::runtime_error("minimizer set emptied in monotonic mode (confidence failure)");
  }
  return next;
}

Partition update_partition_explicit(const Bounds& bounds, const Partition& prev, double h,
                                    bool nonmonotonic) {
  Partition next;
  auto classify = [&](std::size_t idx) {
    Eigen::Index e = static_cast<Eigen::Index>(idx);
    if (bounds.u[e] <= h) {
      next.L.push_back(idx);
    } else if (bounds.l[e] > h) {
      next.H.push_back(idx);
    } else {
      next.U.push_back(idx);
    }
  };
  if (nonmonotonic) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(bounds.l.size()); ++i) classify(i);
  } else {
    next.L = prev.L;
    next.H = prev.H;
    for (auto idx : prev.U) classify(idx);
    std::sort(next.L.begin(), next.L.end());
    std::sort(next.H.begin(), next.H.end());
  }
  return next;
}

EpochState advance_epoch(const Partition& part, const Eigen::VectorXd& var_latent,
                         EpochState epoch, double eps_rel, int max_epoch) {
  double sqrt_beta = std::sqrt(epoch.beta);
  double width_u = 0.0, width_m = 0.0;
  for (auto idx : part.U)
    width_u = std::max(width_u,
                       sqrt_beta * std::sqrt(var_latent[static_cast<Eigen::Index>(idx)]));
  for (auto idx : part.M)
    width_m = std::max(width_m,
                       sqrt_beta * std::sqrt(var_latent[static_cast<Eigen::Index>(idx)]));
  while (epoch.i < max_epoch && width_u <= (1.0 + epoch.slack) * epoch.eta &&
         width_m <= (1.0 + epoch.slack) / (1.0 + eps_rel) * epoch.eta) {
    epoch.i += 1;
    epoch.eta = epoch.eta1 * std::pow(epoch.r, epoch.i - 1);
  }
  return epoch;
}

double straddle_score(double mean, double variance, double h, double kappa) {
  if (variance < 0.0) throw std::invalid_argument("straddle_score needs variance >= 0");
  return kappa * std::sqrt(variance) - std::abs(mean - h);
}

double lse_ambiguity(double l, double u, double h_lo, double h_hi) {
  if (l > u) throw std::invalid_argument("lse_ambiguity needs l <= u");
  return std::min(u - h_lo, h_hi - l);
}

double ei_score(double mean, double variance, double incumbent) {
  if (variance < 0.0) throw std::invalid_argument("ei_score needs variance >= 0");
  if (variance == 0.0) return 0.0;
  double sd = std::sqrt(variance);
  double z = (incumbent - mean) / sd;
  double cdf = 0.5 * std::erfc(-z * M_SQRT1_2);
  double pdf = kInvSqrt2Pi * std::exp(-0.5 * z * z);
  return std::max((incumbent - mean) * cdf + sd * pdf, 0.0);
}

std::vector<std::size_t> predicted_set(const Eigen::VectorXd& means_raw, double best_observed,
                                       const ThresholdSpec& spec) {
  double h = threshold_from_min(best_observed, spec);
  std::vector<std::size_t> out;
  for (Eigen::Index i = 0; i < means_raw.size(); ++i)
    if (means_raw[i] <= h) out.push_back(static_cast<std::size_t>(i));
  return out;
}

bool epsilon_accurate(const Partition& part, const std::vector<double>& true_values, double h,
                      double eps) {
  for (auto idx : part.L)
    if (!(true_values[idx] <= h)) return false;
  for (auto idx : part.H)
    if (!(true_values[idx] > h)) return false;
  for (auto idx : part.U)
    if (!(std::abs(h - true_values[idx]) <= eps / 2.0)) return false;
  return true;
}

std::string run_config_to_json(const RunConfig& config) {
  nlohmann::json j;
  j["algorithm"] = to_string(config.algo);
  j["budget"] = config.budget;
  j["seed"] = config.seed;
  j["init_per_class"] = config.init_per_class;
  j["beta_sqrt"] = config.beta_sqrt;
  j["eta1"] = config.eta1;
  j["r"] = config.r;
  j["slack"] = config.slack;
  j["eps_rel"] = config.threshold.eps_rel;
  j["eps_abs"] = config.threshold.eps_abs;
  j["monotonic"] = config.monotonic;
  j["refit"] = config.refit;
  j["standardize"] = config.gp_config.standardize;
  j["straddle_kappa"] = config.straddle_kappa;
  j["max_epoch"] = config.max_epoch;
  return j.dump(2);
}

RunResult run_algorithm(const CashSpace& space, const CandidateSet& candidates,
                        const Objective& objective, const RunConfig& config,
                        const SetScore& set_score, const IterationObserver& observer) {
  candidates.validate(space);
  config.threshold.validate();
  if (!objective) throw std::invalid_argument("objective is required");
  if (config.beta_sqrt <= 0.0 || config.eta1 <= 0.0 || config.slack < 0.0)
    throw std::invalid_argument("beta_sqrt and eta1 must be positive, slack nonnegative");
  if (config.r <= 0.0 || config.r >= 1.0) throw std::invalid_argument("r must be in (0,1)");
  if (config.max_epoch < 1 || config.init_per_class < 1 || config.straddle_kappa <= 0.0)
    throw std::invalid_argument("bad run configuration");

  const std::size_t n = candidates.size();
  const std::size_t n_classes = space.num_classes();
  if (config.budget > n)
    throw std::invalid_argument("budget exceeds candidate count; points are never re-evaluated");

  std::vector<std::vector<std::size_t>> per_class(n_classes);
  for (std::size_t i = 0; i < n; ++i) per_class[candidates.points[i].class_index].push_back(i);

  // initial design: up to init_per_class uniform draws per class, no repeats
  std::vector<std::size_t> init_order;
  for (std::size_t m = 0; m < n_classes; ++m) {
    auto pool = per_class[m];
    auto eng = make_engine(config.seed, {kTagInit, m});
    std::shuffle(pool.begin(), pool.end(), eng);
    std::size_t k = std::min<std::size_t>(config.init_per_class, pool.size());
    init_order.insert(init_order.end(), pool.begin(), pool.begin() + k);
  }
  if (config.budget <= init_order.size())
    throw std::invalid_argument("budget must exceed the initial design size");

  gp::KernelParams kernel =
      config.kernel ? *config.kernel : gp::KernelParams::defaults(space);
  gp::Surrogate gp(space, std::move(kernel), config.gp_config);

  RunResult result;
  result.init_count = init_order.size();
  std::vector<char> evaluated(n, 0);
  std::vector<double> seen_values;
  double cum_cost = 0.0;
  bool algo_explicit = config.algo != Algorithm::kTruVarImp && config.algo != Algorithm::kLseImp;
  bool uses_epochs =
      config.algo == Algorithm::kTruVarImp || config.algo == Algorithm::kTruVar;

  auto evaluate = [&](std::size_t idx) -> std::pair<double, bool> {
    double v = objective(idx);
    if (std::isfinite(v)) return {v, false};
    double worst = 0.0, sd = 0.0;
    if (!seen_values.empty()) {
      worst = *std::max_element(seen_values.begin(), seen_values.end());
      double mean = 0.0;
      for (double s : seen_values) mean += s;
      mean /= static_cast<double>(seen_values.size());
      double var = 0.0;
      for (double s : seen_values) var += (s - mean) * (s - mean);
      var /= static_cast<double>(seen_values.size());
      sd = std::sqrt(var);
    }
    return {worst + sd, true};
  };

  auto record_value = [&](std::size_t idx, double value) {
    seen_values.push_back(value);
    evaluated[idx] = 1;
    result.eval_order.push_back(idx);
    gp.update(candidates.points[idx], value);
    cum_cost += candidates.costs[idx];
    if (value < result.incumbent) {
      result.incumbent = value;
      result.incumbent_index = idx;
    }
  };

  for (auto idx : init_order) {
    auto [value, failed] = evaluate(idx);
    result.had_failures = result.had_failures || failed;
    record_value(idx, value);
  }

  auto can_fit = [&]() {
    for (std::size_t m = 0; m < n_classes; ++m)
      if (gp.class_observations(m) >= 2) return true;
    return false;
  };
  if (config.refit && can_fit()) gp.fit_hyperparams(derive_seed(config.seed, {kTagFit, 0}));

  PosteriorTable table = build_posterior_table(gp, candidates);
  Partition part = initial_partition(n);
  if (algo_explicit) part.M.clear();
  EpochState epoch;
  epoch.beta = config.beta_sqrt * config.beta_sqrt;
  epoch.eta = config.eta1;
  epoch.eta1 = config.eta1;
  epoch.r = config.r;
  epoch.slack = config.slack;

  Bounds bounds;
  auto refresh_bounds = [&]() {
    bounds.l.resize(static_cast<Eigen::Index>(n));
    bounds.u.resize(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
      auto [lo, hi] = confidence_bounds(table.mean_raw[i], table.var_raw[i], epoch.beta);
      bounds.l[i] = lo;
      bounds.u[i] = hi;
    }
    bounds.c_min_pes = std::numeric_limits<double>::quiet_NaN();
    bounds.h_opt = std::numeric_limits<double>::quiet_NaN();
    bounds.h_pes = std::numeric_limits<double>::quiet_NaN();
    bounds.m_was_empty = false;
  };
  refresh_bounds();
  if (!algo_explicit) compute_thresholds(bounds, part.M, config.threshold);

  std::vector<std::size_t> perm;
  std::size_t perm_pos = 0;
  if (config.algo == Algorithm::kRandom) {
    perm.resize(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    auto eng = make_engine(config.seed, {kTagPerm});
    std::shuffle(perm.begin(), perm.end(), eng);
  }

  auto fallback_any = [&]() -> std::size_t {
    std::size_t best = n;
    double best_var = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (evaluated[i]) continue;
      double v = table.var_latent[static_cast<Eigen::Index>(i)];
      if (v > best_var) {
        best_var = v;
        best = i;
      }
    }
    return best;
  };

  auto argmax_over = [&](const std::vector<std::size_t>& set,
                         const std::function<double(std::size_t)>& score) -> std::size_t {
    std::size_t best = n;
    double best_score = -std::numeric_limits<double>::infinity();
    for (auto idx : set) {
      double s = score(idx);
      if (s > best_score) {
        best_score = s;
        best = idx;
      }
    }
    return best;
  };

  const double eps_rel = config.threshold.eps_rel;
  const std::size_t steps = config.budget - init_order.size();
  result.records.reserve(steps);

  for (std::size_t t = 1; t <= steps; ++t) {
    // selection on the state fitted after the previous observation
    std::vector<char> open(n);
    for (std::size_t i = 0; i < n; ++i) open[i] = !evaluated[i];
    double h_run = threshold_from_min(result.incumbent, config.threshold);
    std::size_t chosen = n;
    switch (config.algo) {
      case Algorithm::kTruVarImp: {
        auto search = filter_eligible(merge_sorted(part.M, part.U), open);
        chosen = search.empty()
                     ? fallback_any()
                     : truvarimp_select(gp, table, part, epoch, candidates.costs, eps_rel, open)
                           .index;
        break;
      }
      case Algorithm::kTruVar: {
        auto search = filter_eligible(part.U, open);
        chosen = search.empty()
                     ? fallback_any()
                     : truvar_select(gp, table, part, epoch, candidates.costs, open).index;
        break;
      }
      case Algorithm::kLse: {
        auto search = filter_eligible(part.U, open);
        chosen = search.empty() ? fallback_any()
                                : argmax_over(search, [&](std::size_t i) {
                                    Eigen::Index e = static_cast<Eigen::Index>(i);
                                    return lse_ambiguity(bounds.l[e], bounds.u[e], h_run, h_run);
                                  });
        break;
      }
      case Algorithm::kLseImp: {
        auto search = filter_eligible(part.U, open);
        chosen = search.empty()
                     ? fallback_any()
                     : argmax_over(search, [&](std::size_t i) {
                         Eigen::Index e = static_cast<Eigen::Index>(i);
                         return lse_ambiguity(bounds.l[e], bounds.u[e], bounds.h_opt,
                                              bounds.h_pes);
                       });
        break;
      }
      case Algorithm::kStraddle: {
        std::vector<std::size_t> search;
        for (std::size_t i = 0; i < n; ++i)
          if (open[i]) search.push_back(i);
        chosen = argmax_over(search, [&](std::size_t i) {
          Eigen::Index e = static_cast<Eigen::Index>(i);
          return straddle_score(table.mean_raw[e], table.var_raw[e], h_run,
                                config.straddle_kappa);
        });
        break;
      }
      case Algorithm::kRandom: {
        while (perm_pos < n && evaluated[perm[perm_pos]]) ++perm_pos;
        chosen = perm[perm_pos];
        break;
      }
      case Algorithm::kOptimize: {
        std::vector<std::size_t> search;
        for (std::size_t i = 0; i < n; ++i)
          if (open[i]) search.push_back(i);
        chosen = argmax_over(search, [&](std::size_t i) {
          Eigen::Index e = static_cast<Eigen::Index>(i);
          return ei_score(table.mean_raw[e], table.var_raw[e], result.incumbent);
        });
        break;
      }
    }

    auto [value, failed] = evaluate(chosen);
    result.had_failures = result.had_failures || failed;
    record_value(chosen, value);

    if (config.refit && can_fit())
      gp.fit_hyperparams(derive_seed(config.seed, {kTagFit, t}), 2);
    table = build_posterior_table(gp, candidates);
    refresh_bounds();

    if (algo_explicit) {
      h_run = threshold_from_min(result.incumbent, config.threshold);
      part = update_partition_explicit(bounds, part, h_run, !config.monotonic);
    } else {
      part = update_partition(bounds, part, !config.monotonic, config.threshold);
    }
    part.validate(n);
    if (uses_epochs) epoch = advance_epoch(part, table.var_latent, epoch, eps_rel,
                                           config.max_epoch);

    RunRecord rec;
    rec.iteration = static_cast<int>(t);
    rec.chosen_index = chosen;
    rec.value = value;
    rec.cum_cost = cum_cost;
    rec.size_L = part.L.size();
    rec.size_H = part.H.size();
    rec.size_U = part.U.size();
    rec.size_M = part.M.size();
    rec.incumbent = result.incumbent;
    rec.epoch = epoch.i;
    rec.failed = failed;
    if (set_score)
      rec.f1 = set_score(predicted_set(table.mean_raw, result.incumbent, config.threshold));
    result.records.push_back(rec);

    if (observer) {
      IterationView view{rec.iteration,
                         chosen,
                         value,
                         result.incumbent,
                         part,
                         bounds,
                         epoch,
                         table.mean_raw,
                         table.var_raw,
                         table.var_latent,
                         gp.value_scale(),
                         algo_explicit ? h_run
                                       : std::numeric_limits<double>::quiet_NaN()};
      observer(view);
    }
  }

  result.partition = std::move(part);
  result.bounds = std::move(bounds);
  result.epoch = epoch;
  result.predicted = predicted_set(table.mean_raw, result.incumbent, config.threshold);
  result.value_scale = gp.value_scale();
  result.kernel = gp.kernel();
  return result;
}

std::string records_to_csv(const std::vector<RunRecord>& records) {
  std::string out =
      "iteration,chosen_index,value,cum_cost,size_L,size_H,size_U,size_M,incumbent,f1,epoch\n";
  for (const auto& r : records) {
    out += std::to_string(r.iteration);
    out += ',';
    out += std::to_string(r.chosen_index);
    out += ',';
    out += io::format_double(r.value);
    out += ',';
    out += io::format_double(r.cum_cost);
    out += ',';
    out += std::to_string(r.size_L);
    out += ',';
    out += std::to_string(r.size_H);
    out += ',';
    out += std::to_string(r.size_U);
    out += ',';
    out += std::to_string(r.size_M);
    out += ',';
    out += io::format_double(r.incumbent);
    out += ',';
    out += io::format_double(r.f1);
    out += ',';
    out += std::to_string(r.epoch);
    out += '\n';
  }
  return out;
}

std::string records_to_jsonl(const std::vector<RunRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j;
    j["iteration"] = r.iteration;
    j["chosen_index"] = r.chosen_index;
    j["value"] = r.value;
    j["cum_cost"] = r.cum_cost;
    j["size_L"] = r.size_L;
    j["size_H"] = r.size_H;
    j["size_U"] = r.size_U;
    j["size_M"] = r.size_M;
    j["incumbent"] = r.incumbent;
    if (std::isfinite(r.f1))
      j["f1"] = r.f1;
    else
      j["f1"] = nullptr;
    j["epoch"] = r.epoch;
    j["failed"] = r.failed;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace cashomon::lse
