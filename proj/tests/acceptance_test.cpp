// Acceptance gate: one PASS/FAIL line per primary criterion. Tolerances and
// time budgets are fixed here; the process exits nonzero if any line fails.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "selfeval/cli.hpp"
#include "selfeval/meta_eval.hpp"
#include "selfeval/reference.hpp"
#include "selfeval/trace_io.hpp"
#include "test_util.hpp"

using namespace selfeval;
namespace fs = std::filesystem;

namespace {

// Frozen after the first run of the pipeline with kSynthSeed.
constexpr std::uint64_t kSynthSeed = 7;
constexpr double kFrozenSoftmaxEnt = 0.9801766709926097;
constexpr double kFrozenUntVar = 0.8283652939871733;
constexpr double kFrozenTolerance = 1e-9;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

// --- analytic entropy -------------------------------------------------------

Outcome analytic_entropy() {
  Outcome o;
  const double ln4 = std::log(4.0);
  auto uniform = testing::make_trace("u", "q", TraceKind::primary, {-ln4, -ln4, -ln4}, {ln4, ln4, ln4});
  uniform.vocab_size = 4;
  const double h = softmax_ent(uniform);
  o.require(std::abs(h - 1.3863) <= 1e-4 && std::abs(h - ln4) <= 1e-6, "softmax_ent uniform V=4 = " + fmt("%.17g", h));
  auto one_hot = testing::make_trace("o", "q", TraceKind::primary, {0.0, 0.0}, {0.0, 0.0});
  o.require(softmax_ent(one_hot) == 0.0, "softmax_ent one-hot != 0");

  AttentionMatrix block{4, 2, std::vector<double>(8, 0.5)};
  const double a = attn_entropy(block);
  o.require(std::abs(a - 4.0 / 2.0 * std::log(2.0)) <= 1e-9, "attn_entropy uniform 4x2 = " + fmt("%.17g", a));
  AttentionMatrix hot{4, 2, {1, 0, 0, 1, 1, 0, 0, 1}};
  o.require(attn_entropy(hot) == 0.0, "attn_entropy one-hot != 0");
  if (o.pass) o.detail = "softmax_ent=" + fmt("%.10f", h) + " attn_entropy=" + fmt("%.10f", a);
  return o;
}

// --- oracle equivalence -----------------------------------------------------

Outcome oracle_equivalence() {
  constexpr int kInstances = 1000;
  constexpr double kTol = 1e-10;
  Outcome o;
  oracle::Rng rng(20241015);
  double worst = 0.0;
  auto check = [&](const char* op, double got, double want) {
    const double d = std::abs(got - want);
    worst = std::max(worst, d);
    o.require(d <= kTol, std::string(op) + " deviates by " + fmt("%.3g", d));
  };

  for (int i = 0; i < kInstances; ++i) {
    const auto n = static_cast<std::size_t>(oracle::uniform_int(rng, 1, 200));
    const auto t = oracle::random_trace(rng, "t", "q", TraceKind::primary, n);
    check("softmax_var", softmax_var(t), oracle::variance(oracle::logprobs(t)));
  }

  for (int i = 0; i < kInstances; ++i) {
    auto r = testing::make_record(testing::make_trace("p", "q", TraceKind::primary, {-1.0}));
    const int members = oracle::uniform_int(rng, 1, 200);
    std::vector<double> sps;
    for (int k = 0; k < members; ++k) {
      auto t = oracle::random_trace(rng, "e", "q", TraceKind::ensemble_decoding,
                                    static_cast<std::size_t>(oracle::uniform_int(rng, 1, 8)));
      sps.push_back(oracle::mean(oracle::logprobs(t)));
      r.ensemble.push_back(std::move(t));
    }
    check("uncertainty_exp", uncertainty_exp(r, SpMode::mean_log), oracle::mean(sps));
    check("uncertainty_var", uncertainty_var(r, SpMode::mean_log), oracle::variance(sps));
  }

  for (int i = 0; i < kInstances; ++i) {
    const int layers = oracle::uniform_int(rng, 1, 14);
    const int heads = oracle::uniform_int(rng, 1, 200 / layers);
    const auto g = oracle::random_grid(rng, layers, heads);
    check("attn_ent_min", attn_ent_min(g), oracle::min_scan(g.values));
    check("attn_ent_avg", attn_ent_avg(g), oracle::grid_mean(g.values));
  }

  for (int i = 0; i < kInstances; ++i) {
    const auto n = static_cast<std::size_t>(oracle::uniform_int(rng, 2, 200));
    const bool ties = i % 2 == 0;
    std::vector<double> x = ties ? oracle::tied_series(rng, n, 5) : oracle::real_series(rng, n);
    std::vector<double> y = ties ? oracle::tied_series(rng, n, 5) : oracle::real_series(rng, n);
    x[0] = 0.0;  // keeps both series non-constant
    y[0] = 0.0;
    check("pearson", pearson(x, y), oracle::pearson(x, y));
    check("spearman", spearman(x, y), oracle::spearman(x, y));
    check("kendall", kendall(x, y), oracle::kendall_tau_b(x, y));
  }
  if (o.pass) o.detail = std::to_string(kInstances) + " instances per op, max deviation " + fmt("%.3g", worst);
  return o;
}

// --- correlation unit values ------------------------------------------------

Outcome correlation_units() {
  Outcome o;
  const std::vector<double> x{1, 2, 3, 4}, y{1, 3, 2, 4};
  const double p = pearson(x, y), k = kendall(x, y);
  o.require(std::abs(p - 0.8) <= 1e-12, "pearson = " + fmt("%.17g", p));
  o.require(std::abs(k - 2.0 / 3.0) <= 1e-12, "kendall = " + fmt("%.17g", k));

  oracle::Rng rng(606);
  int fuzz = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto n = static_cast<std::size_t>(oracle::uniform_int(rng, 2, 100));
    auto a = i % 3 == 0 ? oracle::tied_series(rng, n, 3) : oracle::real_series(rng, n);
    auto b = i % 5 == 0 ? oracle::tied_series(rng, n, 2) : oracle::real_series(rng, n);
    a[0] = -100.0;
    b[0] = -100.0;
    for (double r : {pearson(a, b), kendall(a, b), spearman(a, b)}) {
      o.require(r >= -1.0 && r <= 1.0, "coefficient out of range: " + fmt("%.17g", r));
    }
    ++fuzz;
  }
  if (o.pass) o.detail = "pearson=" + fmt("%.15f", p) + " kendall=" + fmt("%.15f", k) + ", " + std::to_string(fuzz) +
                         " fuzz inputs in [-1, 1]";
  return o;
}

// --- calibration and combo --------------------------------------------------

Outcome calibration_and_combo() {
  Outcome o;
  oracle::Rng rng(4242);
  for (int i = 0; i < 10000; ++i) {
    const double x = oracle::uniform(rng, -1e3, 1e3) * std::pow(10.0, oracle::uniform_int(rng, -8, 8));
    o.require(calibrate(x, x).calibrated == 0.0, "calibrate(x, x) != 0 for x = " + fmt("%.17g", x));
  }

  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const auto n = static_cast<std::size_t>(oracle::uniform_int(rng, 2, 200));
    const auto a = oracle::real_series(rng, n), b = oracle::real_series(rng, n);
    const auto base = combo(a, b);
    const double s = oracle::uniform(rng, 1e-3, 1e3), t = oracle::uniform(rng, -1e3, 1e3);
    std::vector<double> a2, b2;
    for (double v : a) a2.push_back(s * v + t);
    for (double v : b) b2.push_back(s * v - t);
    for (const auto& moved : {combo(a2, b), combo(a, b2), combo(a2, b2)}) {
      for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(moved[k] - base[k]));
    }
  }
  o.require(worst <= 1e-9, "affine deviation " + fmt("%.3g", worst));

  const auto zero = combo(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1});
  for (double v : zero) o.require(std::abs(v) <= 1e-12, "combo([1,2,3],[3,2,1]) element " + fmt("%.3g", v));
  if (o.pass) o.detail = "max affine deviation " + fmt("%.3g", worst);
  return o;
}

// --- synthetic end-to-end ---------------------------------------------------

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("selfeval_acceptance_" + std::to_string(::getpid()))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

int tool(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "selfeval");
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str();
  if (code != 0) std::fprintf(stderr, "%s", e.str().c_str());
  return code;
}

// synth -> score -> meta-eval through the command-line entry point; returns
// the oriented report rows keyed by feature name.
std::map<std::string, nlohmann::json> pipeline(const TempDir& dir, const std::string& noise, std::uint64_t seed) {
  const std::string tag = "n" + noise;
  if (tool({"synth", "-o", dir / (tag + ".traces"), "--annotations", dir / (tag + ".gold"), "--noise", noise,
            "--seed", std::to_string(seed), "--num-questions", "200"}) != 0 ||
      tool({"score", "-i", dir / (tag + ".traces"), "-o", dir / (tag + ".features")}) != 0) {
    return {};
  }
  std::string report;
  if (tool({"meta-eval", "-i", dir / (tag + ".features"), "-a", dir / (tag + ".gold"), "--format", "jsonl"},
           &report) != 0) {
    return {};
  }
  std::map<std::string, nlohmann::json> rows;
  std::istringstream lines(report);
  std::string line;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    if (j.contains("feature")) rows[j["feature"].get<std::string>()] = j;
  }
  return rows;
}

Outcome synthetic_end_to_end() {
  Outcome o;
  TempDir dir;

  auto clean = pipeline(dir, "0", kSynthSeed);
  o.require(clean.contains("Softmax-Ent"), "noise 0 pipeline failed");
  if (!o.pass) return o;
  const double rho = clean["Softmax-Ent"]["spearman"].get<double>();
  o.require(rho == 1.0, "noise 0 Spearman(Softmax-Ent) = " + fmt("%.17g", rho));

  auto noisy = pipeline(dir, "0.1", kSynthSeed);
  o.require(noisy.contains("Softmax-Ent") && noisy.contains("Unt-Var"), "noise 0.1 pipeline failed");
  if (!o.pass) return o;
  const double p_ent = noisy["Softmax-Ent"]["pearson"].get<double>();
  const double p_var = noisy["Unt-Var"]["pearson"].get<double>();
  o.require(p_ent > 0.9, "Pearson(Softmax-Ent) = " + fmt("%.6f", p_ent) + " <= 0.9");
  o.require(p_var > 0.5, "Pearson(Unt-Var) = " + fmt("%.6f", p_var) + " <= 0.5");
  o.require(std::abs(p_ent - kFrozenSoftmaxEnt) <= kFrozenTolerance,
            "Pearson(Softmax-Ent) = " + fmt("%.17g", p_ent) + " moved from frozen " + fmt("%.17g", kFrozenSoftmaxEnt));
  o.require(std::abs(p_var - kFrozenUntVar) <= kFrozenTolerance,
            "Pearson(Unt-Var) = " + fmt("%.17g", p_var) + " moved from frozen " + fmt("%.17g", kFrozenUntVar));
  if (o.pass) {
    o.detail = "noise 0: Spearman=" + fmt("%.1f", rho) + "; noise 0.1: Pearson Softmax-Ent=" + fmt("%.4f", p_ent) +
               " Unt-Var=" + fmt("%.4f", p_var);
  }
  return o;
}

// --- format round trip ------------------------------------------------------

Outcome format_round_trip() {
  Outcome o;
  oracle::Rng rng(1001);
  std::vector<ResponseRecord> records;
  for (int i = 0; i < 100; ++i) records.push_back(testing::random_record(rng, i));
  std::stringstream io;
  write_traces(io, records);
  const auto back = read_traces(io);
  o.require(back.size() == records.size(), "record count changed");
  for (std::size_t i = 0; o.pass && i < records.size(); ++i) {
    o.require(testing::bit_identical(records[i], back[i]), "record " + std::to_string(i) + " differs");
  }

  const auto muts = testing::mutations();
  std::size_t caught = 0, total = 0;
  for (int round = 0; round < 20; ++round) {
    for (const auto& m : muts) {
      auto rec = testing::random_record(rng, round);
      o.require(validate(rec).empty(), "unmutated record flagged");
      m.apply(rec, rng);
      ++total;
      bool hit = false;
      for (const auto& v : validate(rec)) hit = hit || v.rule == m.expected_rule;
      caught += hit ? 1 : 0;
      o.require(hit, "mutation '" + m.name + "' not reported as '" + m.expected_rule + "'");
    }
  }
  if (o.pass) {
    o.detail = "100 records bit-exact; " + std::to_string(caught) + "/" + std::to_string(total) + " mutations caught (" +
               std::to_string(muts.size()) + " kinds)";
  }
  return o;
}

struct Criterion {
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"analytic entropy cases", 1.0, analytic_entropy},
      {"oracle equivalence", 30.0, oracle_equivalence},
      {"correlation unit values", 30.0, correlation_units},
      {"calibration and combo identities", 30.0, calibration_and_combo},
      {"synthetic end-to-end", 10.0, synthetic_end_to_end},
      {"format round trip", 10.0, format_round_trip},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs >= c.budget_seconds) {
      o.detail += (o.detail.empty() ? "" : "; ") + std::string("over time budget");
      o.pass = false;
    }
    std::printf("%s  %-34s %6.2fs / %4.0fs  %s\n", o.pass ? "PASS" : "FAIL", c.name, secs, c.budget_seconds,
                o.detail.c_str());
    failures += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
