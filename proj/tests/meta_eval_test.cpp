#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "selfeval/error.hpp"
#include "selfeval/meta_eval.hpp"
#include "test_util.hpp"

using namespace selfeval;
using Vec = std::vector<double>;

namespace {

FeatureVector fv(const std::string& q, std::map<FeatureName, double> values) {
  FeatureVector v;
  v.question_id = q;
  v.model_id = "m";
  v.values = std::move(values);
  return v;
}

const FeatureName kEnt{Feature::SoftmaxEnt, false};
const FeatureName kVar{Feature::SoftmaxVar, false};

}  // namespace

TEST_CASE("unit values") {
  const Vec x{1, 2, 3, 4}, y{1, 3, 2, 4};
  CHECK(std::abs(pearson(x, y) - 0.8) <= 1e-12);
  CHECK(std::abs(kendall(x, y) - 2.0 / 3.0) <= 1e-12);
  CHECK(std::abs(spearman(x, y) - 0.8) <= 1e-12);

  const Vec up{1, 2, 3, 4, 5};
  const Vec down{5, 4, 3, 2, 1};
  CHECK(pearson(up, up) == 1.0);
  CHECK(kendall(up, up) == 1.0);
  CHECK(spearman(up, up) == 1.0);
  CHECK(pearson(up, down) == -1.0);
  CHECK(kendall(up, down) == -1.0);
  CHECK(spearman(up, down) == -1.0);

  // ties: ranks of y are [1.5, 1.5, 3]
  CHECK(std::abs(spearman(Vec{1, 2, 3}, Vec{2, 2, 5}) - 0.8660254037844387) <= 1e-12);
  CHECK(std::abs(kendall(Vec{1, 2, 3}, Vec{2, 2, 5}) - 2.0 / std::sqrt(6.0)) <= 1e-12);
  CHECK(std::abs(kendall_tau_a(Vec{1, 2, 3}, Vec{2, 2, 5}) - 2.0 / 3.0) <= 1e-12);

  CHECK(average_ranks(Vec{10, 20, 20, 5}) == Vec{2, 3.5, 3.5, 1});
}

TEST_CASE("undefined and malformed inputs") {
  const Vec c{2, 2, 2}, v{1, 2, 3};
  CHECK_THROWS_WITH_AS(pearson(c, v), doctest::Contains("x is constant"), UndefinedStatistic);
  CHECK_THROWS_WITH_AS(pearson(v, c), doctest::Contains("y is constant"), UndefinedStatistic);
  CHECK_THROWS_AS(kendall(c, v), UndefinedStatistic);
  CHECK_THROWS_AS(spearman(v, c), UndefinedStatistic);

  CHECK_THROWS_AS(pearson(Vec{1}, Vec{1}), PreconditionError);
  CHECK_THROWS_AS(kendall(Vec{1, 2}, Vec{1, 2, 3}), PreconditionError);
  CHECK_THROWS_AS(spearman(Vec{1, std::nan("")}, Vec{1, 2}), PreconditionError);
  CHECK_THROWS_AS(pearson(Vec{1, INFINITY}, Vec{1, 2}), PreconditionError);
}

TEST_CASE("oracle equivalence on tied and untied series") {
  oracle::Rng rng(1234);
  for (int i = 0; i < 400; ++i) {
    const auto n = static_cast<std::size_t>(oracle::uniform_int(rng, 2, 200));
    const bool ties = i % 2 == 0;
    const int levels = oracle::uniform_int(rng, 2, 6);
    Vec x = ties ? oracle::tied_series(rng, n, levels) : oracle::real_series(rng, n);
    Vec y = ties ? oracle::tied_series(rng, n, levels) : oracle::real_series(rng, n);
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) x[0] += 1.0;
    if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; })) y[0] += 1.0;
    CAPTURE(n);
    CHECK(std::abs(pearson(x, y) - oracle::pearson(x, y)) <= 1e-10);
    CHECK(std::abs(kendall(x, y) - oracle::kendall_tau_b(x, y)) <= 1e-10);
    CHECK(std::abs(kendall_tau_a(x, y) - oracle::kendall_tau_a(x, y)) <= 1e-10);
    CHECK(std::abs(spearman(x, y) - oracle::spearman(x, y)) <= 1e-10);
    CHECK(average_ranks(x) == oracle::ranks(x));
  }
}

TEST_CASE("correlation properties") {
  oracle::Rng rng(99);
  for (int i = 0; i < 300; ++i) {
    const auto n = static_cast<std::size_t>(oracle::uniform_int(rng, 3, 120));
    const Vec x = oracle::real_series(rng, n);
    const Vec y = i % 3 == 0 ? oracle::tied_series(rng, n, 4) : oracle::real_series(rng, n);
    if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; })) continue;

    const double p = pearson(x, y), k = kendall(x, y), s = spearman(x, y);
    for (double r : {p, k, s}) {
      CHECK(r >= -1.0);
      CHECK(r <= 1.0);
    }
    // symmetry
    CHECK(std::abs(pearson(y, x) - p) <= 1e-12);
    CHECK(std::abs(kendall(y, x) - k) <= 1e-12);
    CHECK(std::abs(spearman(y, x) - s) <= 1e-12);

    // positive affine invariance, rank statistics exactly
    const double a = oracle::uniform(rng, 0.1, 10.0), b = oracle::uniform(rng, -5.0, 5.0);
    Vec ax, neg;
    for (double v : x) {
      ax.push_back(a * v + b);
      neg.push_back(-v);
    }
    CHECK(std::abs(pearson(ax, y) - p) <= 1e-9);
    CHECK(kendall(ax, y) == k);
    CHECK(spearman(ax, y) == s);

    // negation flips the sign
    CHECK(std::abs(pearson(neg, y) + p) <= 1e-12);
    CHECK(std::abs(kendall(neg, y) + k) <= 1e-12);
    CHECK(std::abs(spearman(neg, y) + s) <= 1e-12);

    // strictly monotone transform keeps rank statistics
    Vec ex;
    for (double v : x) ex.push_back(std::exp(v / 10.0));
    CHECK(kendall(ex, y) == k);
    CHECK(spearman(ex, y) == s);
  }
}

TEST_CASE("kendall handles large inputs") {
  oracle::Rng rng(5);
  const std::size_t n = 50000;
  Vec x = oracle::tied_series(rng, n, 100), y = oracle::real_series(rng, n);
  const double k = kendall(x, y);
  CHECK(k >= -1.0);
  CHECK(k <= 1.0);
  CHECK(kendall(x, x) == 1.0);
}

TEST_CASE("build_report joins on question and model") {
  std::vector<FeatureVector> features{fv("q1", {{kEnt, 1.0}, {kVar, 1.0}}), fv("q2", {{kEnt, 2.0}, {kVar, 1.0}}),
                                      fv("q3", {{kEnt, 3.0}, {kVar, 1.0}}), fv("q4", {{kEnt, 4.0}})};
  features[3].model_id = "other";
  std::vector<Annotation> gold{{"q1", "m", 1.0}, {"q2", "m", 3.0}, {"q3", "m", 2.0}, {"q9", "m", 5.0}};

  const auto rep = build_report(features, gold, ReportMetadata{});
  CHECK(rep.diagnostics.feature_records == 4);
  CHECK(rep.diagnostics.annotations == 4);
  CHECK(rep.diagnostics.matched == 3);
  CHECK(rep.diagnostics.unmatched_annotations == std::vector<std::string>{"q9/m"});
  CHECK(rep.diagnostics.unmatched_features == std::vector<std::string>{"q4/other"});
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.rows[0].feature == kEnt);
  CHECK(rep.rows[0].n == 3);
  CHECK(std::abs(rep.rows[0].pearson - 0.5) <= 1e-12);
  CHECK_FALSE(rep.rows[0].undefined);
  // Softmax-Var is constant over the join
  CHECK(rep.rows[1].undefined);
  CHECK(rep.has_undefined());

  SUBCASE("nothing matches") {
    std::vector<Annotation> elsewhere{{"x", "y", 1.0}};
    CHECK_THROWS_WITH_AS(build_report(features, elsewhere, ReportMetadata{}), doctest::Contains("4 feature records"),
                         ValidationError);
  }
  SUBCASE("duplicate feature key") {
    features.push_back(features[0]);
    CHECK_THROWS_AS(build_report(features, gold, ReportMetadata{}), ValidationError);
  }
  SUBCASE("feature seen once is skipped") {
    features[0].values[{Feature::UntVar, false}] = 0.3;
    const auto r = build_report(features, gold, ReportMetadata{});
    CHECK(r.diagnostics.skipped_features == std::vector<FeatureName>{{Feature::UntVar, false}});
  }
}

TEST_CASE("read_annotations") {
  SUBCASE("csv") {
    std::istringstream in("question_id,model_id,gold_score\nq1,m,6\n\nq2,m,3.5\n");
    const auto a = read_annotations(in);
    CHECK(a == std::vector<Annotation>{{"q1", "m", 6.0}, {"q2", "m", 3.5}});
  }
  SUBCASE("csv columns in any order") {
    std::istringstream in("gold_score,question_id,model_id\n2,q1,m\n");
    CHECK(read_annotations(in) == std::vector<Annotation>{{"q1", "m", 2.0}});
  }
  SUBCASE("jsonl") {
    std::istringstream in(R"({"question_id":"q1","model_id":"m","gold_score":1})"
                          "\n"
                          R"({"question_id":"q2","model_id":"m","gold_score":-2.5,"rater":"x"})"
                          "\n");
    CHECK(read_annotations(in) == std::vector<Annotation>{{"q1", "m", 1.0}, {"q2", "m", -2.5}});
  }
  SUBCASE("round trip") {
    std::vector<Annotation> a{{"q1", "m", 0.1}, {"q,2", "m", 1e-300}};
    std::stringstream io;
    write_annotations(io, a);
    CHECK(read_annotations(io) == a);
  }
  SUBCASE("errors") {
    std::istringstream dup("question_id,model_id,gold_score\nq1,m,1\nq1,m,2\n");
    CHECK_THROWS_AS(read_annotations(dup), ValidationError);
    std::istringstream nan("question_id,model_id,gold_score\nq1,m,nan\n");
    CHECK_THROWS_AS(read_annotations(nan), ValidationError);
    std::istringstream text("question_id,model_id,gold_score\nq1,m,good\n");
    CHECK_THROWS_AS(read_annotations(text), ParseError);
    std::istringstream header("id,score\nq1,1\n");
    CHECK_THROWS_AS(read_annotations(header), ParseError);
    std::istringstream json(R"({"question_id":"q1","model_id":"m","gold_score":"7"})");
    CHECK_THROWS_AS(read_annotations(json), ParseError);
  }
  SUBCASE("fixture") {
    std::ifstream in(std::string(SELFEVAL_FIXTURES) + "/gold_small.csv");
    const auto a = read_annotations(in);
    REQUIRE(a.size() == 3);
    CHECK(a[2] == Annotation{"q3", "fixture-7b", 9.0});
  }
}

TEST_CASE("rendering") {
  std::vector<FeatureVector> features{fv("q1", {{kEnt, 1.0}}), fv("q2", {{kEnt, 2.0}}), fv("q3", {{kEnt, 3.0}})};
  std::vector<Annotation> gold{{"q1", "m", 1.0}, {"q2", "m", 3.0}, {"q3", "m", 2.0}};
  const auto rep = build_report(features, gold, ReportMetadata{});
  std::vector<ReportSection> sections{{"m", {{"bench", rep}, {"other", rep}}}};

  std::ostringstream text;
  render_text(text, sections);
  const std::string t = text.str();
  CHECK(t.find("Model: m") != std::string::npos);
  CHECK(t.find("Softmax-Ent") != std::string::npos);
  CHECK(t.find("0.5000") != std::string::npos);
  CHECK(t.find("Average") != std::string::npos);
  CHECK(t.find("Tau-a") == std::string::npos);

  std::ostringstream tau;
  render_text(tau, sections, true);
  CHECK(tau.str().find("Tau-a") != std::string::npos);

  std::ostringstream jl;
  render_jsonl(jl, sections);
  std::istringstream lines(jl.str());
  std::string line;
  std::vector<nlohmann::json> objs;
  while (std::getline(lines, line)) objs.push_back(nlohmann::json::parse(line));
  REQUIRE(objs.size() == 4);
  CHECK(objs[0]["feature"] == "Softmax-Ent");
  CHECK(objs[0]["benchmark"] == "bench");
  CHECK(objs[0]["orientation"] == "lower_is_better");
  CHECK(std::abs(objs[0]["pearson"].get<double>() - 0.5) <= 1e-12);
  CHECK(objs[1]["diagnostics"]["matched"] == 3);
}
