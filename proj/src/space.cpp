#include "cashomon/space.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "cashomon/io.hpp"
#include "cashomon/rng.hpp"
#include "json.hpp"

namespace cashomon {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

double affine_encode(double x, const ParamSpec& p) {
  double lo = p.lo, hi = p.hi;
  if (p.log_scaled) {
    x = std::log(x);
    lo = std::log(p.lo);
    hi = std::log(p.hi);
  }
  return (x - lo) / (hi - lo);
}

double affine_decode(double u, const ParamSpec& p) {
  double lo = p.lo, hi = p.hi;
  if (p.log_scaled) {
    lo = std::log(p.lo);
    hi = std::log(p.hi);
  }
  double x = lo + u * (hi - lo);
  return p.log_scaled ? std::exp(x) : x;
}

std::string encoding_key(std::size_t class_index, const Eigen::VectorXd& enc) {
  std::string key(reinterpret_cast<const char*>(&class_index), sizeof(class_index));
  key.append(reinterpret_cast<const char*>(enc.data()),
             static_cast<std::size_t>(enc.size()) * sizeof(double));
  return key;
}

}  // namespace

void ParamSpec::validate() const {
  if (name.empty()) fail("parameter name must be nonempty");
  if (kind == ParamKind::kCategorical) {
    if (levels.size() < 2) fail("categorical parameter '" + name + "' needs at least 2 levels");
    std::set<std::string> uniq(levels.begin(), levels.end());
    if (uniq.size() != levels.size()) fail("categorical parameter '" + name + "' has duplicate levels");
    if (log_scaled) fail("categorical parameter '" + name + "' cannot be log scaled");
  } else {
    if (!(lo < hi)) fail("parameter '" + name + "' needs lo < hi");
    if (log_scaled && !(lo > 0.0)) fail("log-scaled parameter '" + name + "' needs lo > 0");
    if (kind == ParamKind::kInteger &&
        (std::floor(lo) != lo || std::floor(hi) != hi))
      fail("integer parameter '" + name + "' needs integer bounds");
  }
}

int ParamSpec::encoded_width() const {
  return kind == ParamKind::kCategorical ? static_cast<int>(levels.size()) : 1;
}

int ModelClass::encoded_dim() const {
  int d = 0;
  for (const auto& p : params) d += p.encoded_width();
  return d;
}

void CashSpace::validate() const {
  if (classes.empty()) fail("space needs at least one model class");
  std::set<std::string> class_names;
  for (const auto& c : classes) {
    if (c.name.empty()) fail("model class name must be nonempty");
    if (!class_names.insert(c.name).second) fail("duplicate model class name '" + c.name + "'");
    if (c.params.empty()) fail("model class '" + c.name + "' needs at least one parameter");
    std::set<std::string> param_names;
    for (const auto& p : c.params) {
      p.validate();
      if (!param_names.insert(p.name).second)
        fail("duplicate parameter '" + p.name + "' in class '" + c.name + "'");
    }
  }
}

void CandidateSet::validate(const CashSpace& space) const {
  if (points.empty()) fail("candidate set is empty");
  if (!values.empty() && values.size() != points.size())
    fail("values size does not match point count");
  if (costs.size() != points.size()) fail("costs size does not match point count");
  for (double c : costs)
    if (!(c > 0.0)) fail("candidate costs must be strictly positive");
  std::unordered_set<std::string> seen;
  std::size_t dups = 0;
  for (const auto& pt : points) {
    if (pt.class_index >= space.classes.size()) fail("candidate class index out of range");
    const auto& cls = space.classes[pt.class_index];
    if (pt.encoded.size() != cls.encoded_dim())
      fail("encoded dimension mismatch for class '" + cls.name + "'");
    if (!seen.insert(encoding_key(pt.class_index, pt.encoded)).second) ++dups;
  }
  if (dups > duplicate_encoded_count)
    fail("duplicate (class, encoding) pairs beyond the flagged rounding collisions");
}

void ThresholdSpec::validate() const {
  if (!(eps_rel >= 0.0)) fail("eps_rel must be >= 0");
  if (!(eps_abs >= 0.0)) fail("eps_abs must be >= 0");
}

Eigen::VectorXd encode(const std::vector<RawValue>& raw, const std::vector<ParamSpec>& params) {
  if (raw.size() != params.size()) fail("raw value count does not match parameter count");
  int dim = 0;
  for (const auto& p : params) dim += p.encoded_width();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim);
  int at = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (p.kind == ParamKind::kCategorical) {
      const auto* s = std::get_if<std::string>(&raw[i]);
      if (!s) fail("parameter '" + p.name + "' expects a level name");
      auto it = std::find(p.levels.begin(), p.levels.end(), *s);
      if (it == p.levels.end()) fail("'" + *s + "' is not a level of parameter '" + p.name + "'");
      out[at + static_cast<int>(it - p.levels.begin())] = 1.0;
      at += p.encoded_width();
    } else {
      const auto* v = std::get_if<double>(&raw[i]);
      if (!v) fail("parameter '" + p.name + "' expects a numeric value");
      if (!(*v >= p.lo && *v <= p.hi))
        fail("value " + io::format_double(*v) + " outside range of parameter '" + p.name + "'");
      out[at++] = affine_encode(*v, p);
    }
  }
  return out;
}

std::vector<RawValue> decode(const Eigen::VectorXd& encoded, const std::vector<ParamSpec>& params) {
  int dim = 0;
  for (const auto& p : params) dim += p.encoded_width();
  if (encoded.size() != dim) fail("encoded vector has wrong dimension");
  std::vector<RawValue> out;
  out.reserve(params.size());
  int at = 0;
  for (const auto& p : params) {
    if (p.kind == ParamKind::kCategorical) {
      int w = p.encoded_width();
      int best = 0;
      for (int j = 1; j < w; ++j)
        if (encoded[at + j] > encoded[at + best]) best = j;
      out.emplace_back(p.levels[static_cast<std::size_t>(best)]);
      at += w;
    } else {
      double x = affine_decode(encoded[at++], p);
      if (p.kind == ParamKind::kInteger)
        x = std::clamp(std::round(x), p.lo, p.hi);
      out.emplace_back(x);
    }
  }
  return out;
}

CandidateSet sample_candidates(const CashSpace& space, std::size_t per_class_count,
                               std::uint64_t seed) {
  space.validate();
  if (per_class_count == 0) fail("per_class_count must be positive");
  CandidateSet set;
  set.points.reserve(space.classes.size() * per_class_count);
  std::unordered_set<std::string> seen;
  for (std::size_t m = 0; m < space.classes.size(); ++m) {
    const auto& cls = space.classes[m];
    auto eng = make_engine(seed, {0x5Au, m});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < per_class_count; ++i) {
      std::vector<RawValue> raw;
      raw.reserve(cls.params.size());
      for (const auto& p : cls.params) {
        if (p.kind == ParamKind::kCategorical) {
          std::uniform_int_distribution<std::size_t> pick(0, p.levels.size() - 1);
          raw.emplace_back(p.levels[pick(eng)]);
        } else {
          double x = affine_decode(unit(eng), p);
          if (p.kind == ParamKind::kInteger) x = std::clamp(std::round(x), p.lo, p.hi);
          raw.emplace_back(x);
        }
      }
      ConfigPoint pt;
      pt.class_index = m;
      pt.encoded = encode(raw, cls.params);
      pt.raw_values = std::move(raw);
      if (!seen.insert(encoding_key(m, pt.encoded)).second) ++set.duplicate_encoded_count;
      set.points.push_back(std::move(pt));
    }
  }
  set.costs.assign(set.points.size(), 1.0);
  return set;
}

std::vector<std::size_t> ground_truth_set(const std::vector<double>& values,
                                          const ThresholdSpec& spec) {
  spec.validate();
  if (values.empty()) fail("ground truth needs at least one value");
  double mn = *std::min_element(values.begin(), values.end());
  if (spec.eps_rel > 0.0 && mn < 0.0)
    fail("relative tolerance requires nonnegative objective values");
  double h = threshold_from_min(mn, spec);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] <= h) out.push_back(i);
  return out;
}

// --- serialization ---

namespace {

ParamKind kind_from_string(const std::string& s) {
  if (s == "continuous") return ParamKind::kContinuous;
  if (s == "integer") return ParamKind::kInteger;
  if (s == "categorical") return ParamKind::kCategorical;
  fail("unknown parameter kind '" + s + "'");
}

std::string kind_to_string(ParamKind k) {
  switch (k) {
    case ParamKind::kContinuous: return "continuous";
    case ParamKind::kInteger: return "integer";
    case ParamKind::kCategorical: return "categorical";
  }
  return "continuous";
}

}  // namespace

CashSpace space_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(std::string("space JSON parse error: ") + e.what());
  }
  if (!j.contains("classes") || !j["classes"].is_array())
    fail("space JSON needs a 'classes' array");
  CashSpace space;
  for (const auto& jc : j["classes"]) {
    ModelClass cls;
    if (!jc.contains("name")) fail("model class entry needs a 'name'");
    cls.name = jc["name"].get<std::string>();
    if (!jc.contains("params") || !jc["params"].is_array())
      fail("model class '" + cls.name + "' needs a 'params' array");
    for (const auto& jp : jc["params"]) {
      ParamSpec p;
      if (!jp.contains("name")) fail("parameter entry needs a 'name'");
      p.name = jp["name"].get<std::string>();
      p.kind = kind_from_string(jp.value("kind", std::string("continuous")));
      if (p.kind == ParamKind::kCategorical) {
        if (!jp.contains("levels")) fail("categorical parameter '" + p.name + "' needs 'levels'");
        p.levels = jp["levels"].get<std::vector<std::string>>();
      } else {
        if (!jp.contains("range") || !jp["range"].is_array() || jp["range"].size() != 2)
          fail("parameter '" + p.name + "' needs a 2-element 'range'");
        p.lo = jp["range"][0].get<double>();
        p.hi = jp["range"][1].get<double>();
        p.log_scaled = jp.value("log", false);
      }
      cls.params.push_back(std::move(p));
    }
    space.classes.push_back(std::move(cls));
  }
  space.validate();
  return space;
}

std::string space_to_json_text(const CashSpace& space) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["classes"] = nlohmann::json::array();
  for (const auto& cls : space.classes) {
    nlohmann::json jc;
    jc["name"] = cls.name;
    jc["params"] = nlohmann::json::array();
    for (const auto& p : cls.params) {
      nlohmann::json jp;
      jp["name"] = p.name;
      jp["kind"] = kind_to_string(p.kind);
      if (p.kind == ParamKind::kCategorical) {
        jp["levels"] = p.levels;
      } else {
        jp["range"] = {p.lo, p.hi};
        jp["log"] = p.log_scaled;
      }
      jc["params"].push_back(std::move(jp));
    }
    j["classes"].push_back(std::move(jc));
  }
  return j.dump(2) + "\n";
}

std::string candidates_to_csv(const CashSpace& space, const CandidateSet& set) {
  set.validate(space);
  std::vector<std::string> columns;  // union of parameter names, first-appearance order
  for (const auto& cls : space.classes)
    for (const auto& p : cls.params)
      if (std::find(columns.begin(), columns.end(), p.name) == columns.end())
        columns.push_back(p.name);

  std::vector<std::string> header{"class"};
  header.insert(header.end(), columns.begin(), columns.end());
  if (set.has_values()) header.push_back("value");
  header.push_back("cost");

  std::string out = io::csv_row(header) + "\n";
  for (std::size_t i = 0; i < set.points.size(); ++i) {
    const auto& pt = set.points[i];
    const auto& cls = space.classes[pt.class_index];
    std::vector<std::string> row{cls.name};
    for (const auto& col : columns) {
      std::string cell;
      for (std::size_t k = 0; k < cls.params.size(); ++k) {
        if (cls.params[k].name != col) continue;
        if (const auto* v = std::get_if<double>(&pt.raw_values[k]))
          cell = io::format_double(*v);
        else
          cell = std::get<std::string>(pt.raw_values[k]);
        break;
      }
      row.push_back(std::move(cell));
    }
    if (set.has_values()) row.push_back(io::format_double(set.values[i]));
    row.push_back(io::format_double(set.costs[i]));
    out += io::csv_row(row) + "\n";
  }
  return out;
}

CandidateSet candidates_from_csv(const CashSpace& space, const std::string& csv_text) {
  space.validate();
  auto lines = io::split_lines(csv_text);
  if (lines.empty()) fail("candidate CSV is empty");
  std::vector<std::string> header;
  if (!io::parse_csv_row(lines[0], header)) fail("malformed candidate CSV header");
  if (header.empty() || header[0] != "class") fail("candidate CSV must start with a 'class' column");

  int value_col = -1, cost_col = -1;
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (header[c] == "value") value_col = static_cast<int>(c);
    else if (header[c] == "cost") cost_col = static_cast<int>(c);
  }

  CandidateSet set;
  std::vector<std::string> cells;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    if (!io::parse_csv_row(lines[li], cells)) fail("malformed candidate CSV row");
    if (cells.size() != header.size()) fail("candidate CSV row has wrong field count");
    std::size_t m = space.classes.size();
    for (std::size_t k = 0; k < space.classes.size(); ++k)
      if (space.classes[k].name == cells[0]) { m = k; break; }
    if (m == space.classes.size()) fail("unknown model class '" + cells[0] + "' in candidate CSV");
    const auto& cls = space.classes[m];

    std::vector<RawValue> raw;
    for (const auto& p : cls.params) {
      int col = -1;
      for (std::size_t c = 1; c < header.size(); ++c)
        if (header[c] == p.name) { col = static_cast<int>(c); break; }
      if (col < 0) fail("candidate CSV missing column for parameter '" + p.name + "'");
      const std::string& cell = cells[static_cast<std::size_t>(col)];
      if (cell.empty()) fail("empty cell for parameter '" + p.name + "'");
      if (p.kind == ParamKind::kCategorical) {
        raw.emplace_back(cell);
      } else {
        try {
          raw.emplace_back(std::stod(cell));
        } catch (const std::exception&) {
          fail("non-numeric cell '" + cell + "' for parameter '" + p.name + "'");
        }
      }
    }
    ConfigPoint pt;
    pt.class_index = m;
    pt.encoded = encode(raw, cls.params);
    pt.raw_values = std::move(raw);
    set.points.push_back(std::move(pt));

    if (value_col >= 0) {
      try {
        set.values.push_back(std::stod(cells[static_cast<std::size_t>(value_col)]));
      } catch (const std::exception&) {
        fail("non-numeric value cell");
      }
    }
    if (cost_col >= 0) {
      try {
        set.costs.push_back(std::stod(cells[static_cast<std::size_t>(cost_col)]));
      } catch (const std::exception&) {
        fail("non-numeric cost cell");
      }
    } else {
      set.costs.push_back(1.0);
    }
  }
  // Rows that collide after integer rounding are legitimate; count them so
  // validation accepts the file as written.
  std::unordered_set<std::string> seen;
  for (const auto& pt : set.points)
    if (!seen.insert(encoding_key(pt.class_index, pt.encoded)).second)
      ++set.duplicate_encoded_count;
  set.validate(space);
  return set;
}

}  // namespace cashomon
