#include <algorithm>
#include <cmath>
#include <set>

#include "cashomon/space.hpp"
#include "doctest.h"

using namespace cashomon;

namespace {

CashSpace two_class_space() {
  CashSpace s;
  ModelClass a;
  a.name = "ridge";
  a.params.push_back({"penalty", ParamKind::kContinuous, 1e-4, 1e4, {}, true});
  a.params.push_back({"mix", ParamKind::kContinuous, 0.0, 1.0, {}, false});
  ModelClass b;
  b.name = "knn";
  b.params.push_back({"k", ParamKind::kInteger, 1, 64, {}, true});
  b.params.push_back({"metric", ParamKind::kCategorical, 0, 1, {"euclid", "manhattan", "cosine"}, false});
  s.classes = {a, b};
  return s;
}

}  // namespace

TEST_SUITE("space") {

TEST_CASE("affine encoding hits endpoints and midpoints") {
  std::vector<ParamSpec> ps{{"x", ParamKind::kContinuous, 0.0, 10.0, {}, false}};
  CHECK(encode({RawValue{2.5}}, ps)[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(encode({RawValue{0.0}}, ps)[0] == doctest::Approx(0.0));
  CHECK(encode({RawValue{10.0}}, ps)[0] == doctest::Approx(1.0));
}

TEST_CASE("log-scaled encoding maps the geometric midpoint to one half") {
  std::vector<ParamSpec> ps{{"lam", ParamKind::kContinuous, 1e-4, 1e4, {}, true}};
  CHECK(encode({RawValue{1.0}}, ps)[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(encode({RawValue{1e-4}}, ps)[0] == doctest::Approx(0.0));
  CHECK(encode({RawValue{1e4}}, ps)[0] == doctest::Approx(1.0));
}

TEST_CASE("categorical values encode one-hot") {
  std::vector<ParamSpec> ps{{"m", ParamKind::kCategorical, 0, 1, {"a", "b", "c"}, false}};
  Eigen::VectorXd e = encode({RawValue{std::string("b")}}, ps);
  REQUIRE(e.size() == 3);
  CHECK(e[0] == 0.0);
  CHECK(e[1] == 1.0);
  CHECK(e[2] == 0.0);
}

TEST_CASE("encode rejects out-of-range and unknown inputs") {
  std::vector<ParamSpec> ps{{"x", ParamKind::kContinuous, 0.0, 1.0, {}, false},
                            {"m", ParamKind::kCategorical, 0, 1, {"a", "b"}, false}};
  CHECK_THROWS_AS(encode({RawValue{1.5}, RawValue{std::string("a")}}, ps), std::invalid_argument);
  CHECK_THROWS_AS(encode({RawValue{0.5}, RawValue{std::string("z")}}, ps), std::invalid_argument);
  CHECK_THROWS_AS(encode({RawValue{0.5}}, ps), std::invalid_argument);
}

TEST_CASE("decode inverts encode up to integer rounding") {
  auto space = two_class_space();
  const auto& knn = space.classes[1].params;
  std::vector<RawValue> raw{RawValue{32.0}, RawValue{std::string("cosine")}};
  auto round_trip = decode(encode(raw, knn), knn);
  CHECK(std::get<double>(round_trip[0]) == doctest::Approx(32.0).epsilon(1e-12));
  CHECK(std::get<std::string>(round_trip[1]) == "cosine");

  const auto& ridge = space.classes[0].params;
  std::vector<RawValue> raw2{RawValue{3.7}, RawValue{0.25}};
  auto rt2 = decode(encode(raw2, ridge), ridge);
  CHECK(std::get<double>(rt2[0]) == doctest::Approx(3.7).epsilon(1e-10));
  CHECK(std::get<double>(rt2[1]) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("sampling is deterministic, distinct, class-major, unit cost") {
  CashSpace s;
  ModelClass a;
  a.name = "only";
  a.params.push_back({"x", ParamKind::kContinuous, 0.0, 1.0, {}, false});
  s.classes = {a};

  auto c1 = sample_candidates(s, 3, 7);
  auto c2 = sample_candidates(s, 3, 7);
  REQUIRE(c1.size() == 3);
  std::set<double> vals;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(c1.points[i].encoded[0] == c2.points[i].encoded[0]);
    vals.insert(c1.points[i].encoded[0]);
    CHECK(c1.costs[i] == 1.0);
  }
  CHECK(vals.size() == 3);

  auto c3 = sample_candidates(s, 3, 8);
  bool all_same = true;
  for (std::size_t i = 0; i < 3; ++i)
    if (c3.points[i].encoded[0] != c1.points[i].encoded[0]) all_same = false;
  CHECK_FALSE(all_same);
}

TEST_CASE("six classes at count 8000 yield 48000 candidates") {
  CashSpace s;
  for (int m = 0; m < 6; ++m) {
    ModelClass c;
    c.name = "class" + std::to_string(m);
    c.params.push_back({"x", ParamKind::kContinuous, 0.0, 1.0, {}, false});
    s.classes.push_back(c);
  }
  auto set = sample_candidates(s, 8000, 3);
  CHECK(set.size() == 48000);
  for (std::size_t m = 0; m < 6; ++m)
    CHECK(set.points[m * 8000].class_index == m);
  set.validate(s);
}

TEST_CASE("log-scaled sampling has its median near the geometric midpoint") {
  CashSpace s;
  ModelClass a;
  a.name = "only";
  a.params.push_back({"lam", ParamKind::kContinuous, 1e-4, 1e4, {}, true});
  s.classes = {a};
  auto set = sample_candidates(s, 100000, 11);
  std::vector<double> raw;
  raw.reserve(set.size());
  for (const auto& p : set.points) raw.push_back(std::get<double>(p.raw_values[0]));
  std::nth_element(raw.begin(), raw.begin() + raw.size() / 2, raw.end());
  double median = raw[raw.size() / 2];
  CHECK(median > 0.8);
  CHECK(median < 1.25);
}

TEST_CASE("ground truth set keeps points at or below the tolerance threshold") {
  ThresholdSpec spec{0.05, 0.0};
  auto truth = ground_truth_set({1.0, 1.04, 1.06, 2.0}, spec);
  REQUIRE(truth.size() == 2);
  CHECK(truth[0] == 0);
  CHECK(truth[1] == 1);

  SUBCASE("boundary inclusive") {
    auto t2 = ground_truth_set({1.0, 1.05}, spec);
    CHECK(t2.size() == 2);
  }
  SUBCASE("larger tolerances only add members") {
    ThresholdSpec wide{0.5, 0.0};
    auto t3 = ground_truth_set({1.0, 1.04, 1.06, 2.0}, wide);
    CHECK(t3.size() >= truth.size());
  }
  SUBCASE("relative tolerance rejects negative values") {
    CHECK_THROWS_AS(ground_truth_set({-1.0, 2.0}, spec), std::invalid_argument);
    ThresholdSpec abs_only{0.0, 0.5};
    CHECK(ground_truth_set({-1.0, -0.6, 2.0}, abs_only).size() == 2);
  }
}

TEST_CASE("threshold arithmetic") {
  CHECK(threshold_from_min(2.0, {0.05, 0.0}) == doctest::Approx(2.1));
  CHECK(threshold_from_min(2.0, {0.0, 0.3}) == doctest::Approx(2.3));
}

TEST_CASE("candidate CSV round trip is byte stable") {
  auto space = two_class_space();
  auto set = sample_candidates(space, 20, 42);
  set.values.resize(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) set.values[i] = 1.0 + 0.01 * static_cast<double>(i);

  std::string csv1 = candidates_to_csv(space, set);
  auto loaded = candidates_from_csv(space, csv1);
  REQUIRE(loaded.size() == set.size());
  std::string csv2 = candidates_to_csv(space, loaded);
  CHECK(csv1 == csv2);
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK(loaded.points[i].class_index == set.points[i].class_index);
    CHECK((loaded.points[i].encoded - set.points[i].encoded).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(loaded.values[i] == doctest::Approx(set.values[i]).epsilon(1e-12));
  }
}

TEST_CASE("space JSON round trip and validation failures") {
  auto space = two_class_space();
  auto text = space_to_json_text(space);
  auto back = space_from_json_text(text);
  CHECK(back.classes.size() == 2);
  CHECK(back.classes[0].params[0].log_scaled);
  CHECK(back.classes[1].params[1].levels.size() == 3);
  CHECK(space_to_json_text(back) == text);

  CHECK_THROWS_AS(space_from_json_text("{not json"), std::invalid_argument);
  CHECK_THROWS_AS(space_from_json_text(R"({"classes": []})"), std::invalid_argument);
  CHECK_THROWS_AS(space_from_json_text(
      R"({"classes": [{"name":"a","params":[{"name":"x","kind":"continuous","range":[2,1]}]}]})"),
      std::invalid_argument);
  CHECK_THROWS_AS(space_from_json_text(
      R"({"classes": [{"name":"a","params":[{"name":"x","kind":"continuous","range":[0,1],"log":true}]}]})"),
      std::invalid_argument);
  CHECK_THROWS_AS(space_from_json_text(
      R"({"classes": [{"name":"a","params":[{"name":"m","kind":"categorical","levels":["x"]}]}]})"),
      std::invalid_argument);
}

TEST_CASE("candidate validation rejects bad costs and unflagged duplicates") {
  auto space = two_class_space();
  auto set = sample_candidates(space, 5, 1);
  set.costs[2] = 0.0;
  CHECK_THROWS_AS(set.validate(space), std::invalid_argument);
  set.costs[2] = 1.0;

  auto dup = set;
  dup.points.push_back(dup.points[0]);
  dup.costs.push_back(1.0);
  CHECK_THROWS_AS(dup.validate(space), std::invalid_argument);
  dup.duplicate_encoded_count = 1;
  CHECK_NOTHROW(dup.validate(space));
}

TEST_CASE("threshold spec rejects negative tolerances") {
  CHECK_THROWS_AS((ThresholdSpec{-0.1, 0.0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((ThresholdSpec{0.1, -1.0}).validate(), std::invalid_argument);
  CHECK_NOTHROW((ThresholdSpec{0.0, 0.0}).validate());
}

}  // TEST_SUITE
