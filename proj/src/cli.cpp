#include "selfeval/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "selfeval/error.hpp"
#include "selfeval/features.hpp"
#include "selfeval/meta_eval.hpp"
#include "selfeval/reference.hpp"
#include "selfeval/scored_io.hpp"
#include "selfeval/synth.hpp"
#include "selfeval/trace_io.hpp"

namespace selfeval::cli {

namespace {

// Bad invocation that CLI11 cannot see: unreadable file, bad flag value.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Input {
  std::ifstream file;
  std::istream* stream = nullptr;
};

std::unique_ptr<Input> open_input(const std::string& path) {
  auto in = std::make_unique<Input>();
  if (path == "-") {
    in->stream = &std::cin;
    return in;
  }
  in->file.open(path);
  if (!in->file) throw UsageError("cannot open '" + path + "'");
  in->stream = &in->file;
  return in;
}

struct Output {
  std::ofstream file;
  std::ostream* stream = nullptr;
};

std::unique_ptr<Output> open_output(const std::string& path, std::ostream& fallback) {
  auto out = std::make_unique<Output>();
  if (path.empty() || path == "-") {
    out->stream = &fallback;
    return out;
  }
  out->file.open(path, std::ios::binary | std::ios::trunc);
  if (!out->file) throw UsageError("cannot write '" + path + "'");
  out->stream = &out->file;
  return out;
}

std::vector<FeatureName> parse_names(const std::vector<std::string>& texts) {
  std::vector<FeatureName> out;
  for (const std::string& t : texts) {
    auto name = parse_feature_name(t);
    if (!name) throw UsageError("unknown feature '" + t + "'");
    out.push_back(*name);
  }
  return out;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string output;
  std::string annotations;
  int num_questions = 200;
  double noise = 0.1;
  std::uint64_t seed = 1;
  int ensemble_size = 10;
  std::int64_t vocab_size = 32000;
  std::string ensemble_kind = "decoding";
  bool no_reference = false;
  int layers = 4;
  int heads = 8;
  std::string model_id = "synth-model";
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthSpec spec;
  spec.num_questions = a.num_questions;
  spec.noise_level = a.noise;
  spec.seed = a.seed;
  spec.ensemble_size = a.ensemble_size;
  spec.vocab_size = a.vocab_size;
  spec.ensemble_kind = a.ensemble_kind == "prompt" ? SynthEnsemble::prompt : SynthEnsemble::decoding;
  spec.with_reference = !a.no_reference;
  spec.num_layers = a.layers;
  spec.num_heads = a.heads;
  spec.model_id = a.model_id;

  const SynthOutput data = synth_traces(spec);
  auto traces = open_output(a.output, out);
  write_traces(*traces->stream, data.records);
  if (!a.annotations.empty()) {
    auto gold = open_output(a.annotations, out);
    write_annotations(*gold->stream, data.annotations);
  }
  return kSuccess;
}

// ---------------------------------------------------------------------------
// score

struct ScoreArgs {
  std::string input;
  std::string output;
  std::vector<std::string> features;
  std::string sp_mode = "mean_log";
  std::string var_operand = "logprob";
  std::string ref_mode = "as_written";
  bool calibrate = false;
  bool strict = false;
  unsigned threads = 0;
};

int cmd_score(const ScoreArgs& a, std::ostream& out, std::ostream& err) {
  FeatureConfig config;
  config.sp_mode = *parse_sp_mode(a.sp_mode);
  config.var_operand = *parse_var_operand(a.var_operand);
  const RefMode ref_mode = *parse_ref_mode(a.ref_mode);
  if (!a.features.empty()) {
    config.requested.clear();
    for (FeatureName name : parse_names(a.features)) {
      if (name.calibrated || name.base == Feature::SoftmaxCombo) {
        throw UsageError("score computes per-record raw features; use --calibrate for '-calib' variants and "
                         "meta-eval --combo for Softmax-combo (got '" +
                         to_string(name) + "')");
      }
      if (std::find(config.requested.begin(), config.requested.end(), name.base) == config.requested.end()) {
        config.requested.push_back(name.base);
      }
    }
  }

  auto in = open_input(a.input);
  const std::vector<ResponseRecord> records = read_traces(*in->stream);
  const unsigned threads = a.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : a.threads;
  std::vector<FeatureResult> results = compute_features(records, config, threads);

  std::vector<ScoredRecord> scored(records.size());
  std::size_t missing = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    ScoredRecord& s = scored[i];
    s.features = std::move(results[i].vector);
    s.unavailable = std::move(results[i].unavailable);
    s.reference = reference_features(records[i], config, ref_mode);
    s.sp_mode = std::string(to_string(config.sp_mode));
    s.ref_mode = std::string(to_string(ref_mode));
    if (a.calibrate) apply_calibration(s.features, s.reference, s.unavailable);
    if (!s.unavailable.empty()) {
      ++missing;
      if (a.strict) {
        err << "question '" << s.features.question_id << "', model '" << s.features.model_id
            << "': unavailable:";
        for (FeatureName f : s.unavailable) err << ' ' << to_string(f);
        err << '\n';
      }
    }
  }
  if (a.strict && missing > 0) {
    err << "error: " << missing << " record(s) lack requested features (--strict)\n";
    return kDataValidation;
  }

  auto dest = open_output(a.output, out);
  write_scored(*dest->stream, scored);
  return kSuccess;
}

// ---------------------------------------------------------------------------
// meta-eval

struct MetaEvalArgs {
  std::string input;
  std::string annotations;
  std::string benchmark_name = "bench";
  std::vector<std::string> benches;
  std::vector<std::string> features;
  bool calibrate = false;
  bool combo = false;
  bool raw = false;
  bool tau_a = false;
  std::string orient_map;
  std::string format = "text";
  std::string output;
};

struct BenchInput {
  std::string name;
  std::string features_path;
  std::string annotations_path;
};

BenchInput parse_bench(const std::string& text) {
  const auto eq = text.find('=');
  const auto comma = text.rfind(',');
  if (eq == std::string::npos || comma == std::string::npos || comma < eq) {
    throw UsageError("--bench expects NAME=FEATURES,ANNOTATIONS, got '" + text + "'");
  }
  return {text.substr(0, eq), text.substr(eq + 1, comma - eq - 1), text.substr(comma + 1)};
}

// compute -> calibrate -> orient -> combo for one (benchmark, model) slice.
CorrelationReport evaluate_slice(std::vector<ScoredRecord> records, const std::vector<Annotation>& gold,
                                 const MetaEvalArgs& a, const ReportMetadata& meta,
                                 const std::vector<FeatureName>& row_filter) {
  std::vector<FeatureVector> vectors;
  vectors.reserve(records.size());
  for (ScoredRecord& r : records) {
    FeatureVector v = std::move(r.features);
    if (a.calibrate) {
      std::vector<FeatureName> ignored;
      apply_calibration(v, r.reference, ignored);
    }
    if (!a.raw) v = orient(v, meta.orientation);
    vectors.push_back(std::move(v));
  }

  std::vector<CorrelationRow> combo_failures;
  if (a.combo) {
    for (bool calibrated : {false, true}) {
      if (calibrated && !a.calibrate) continue;
      try {
        add_combo(vectors, calibrated);
      } catch (const UndefinedStatistic& e) {
        CorrelationRow row;
        row.feature = {Feature::SoftmaxCombo, calibrated};
        row.undefined = e.what();
        combo_failures.push_back(std::move(row));
      }
    }
  }

  if (!row_filter.empty()) {
    for (FeatureVector& v : vectors) {
      std::erase_if(v.values, [&](const auto& kv) {
        return std::find(row_filter.begin(), row_filter.end(), kv.first) == row_filter.end();
      });
    }
  }

  CorrelationReport report = build_report(vectors, gold, meta);
  for (CorrelationRow& row : combo_failures) {
    if (row_filter.empty() || std::find(row_filter.begin(), row_filter.end(), row.feature) != row_filter.end()) {
      report.rows.push_back(std::move(row));
    }
  }
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const CorrelationRow& x, const CorrelationRow& y) { return x.feature < y.feature; });
  return report;
}

int cmd_meta_eval(const MetaEvalArgs& a, std::ostream& out, std::ostream& err) {
  if (a.format != "text" && a.format != "jsonl") throw UsageError("--format must be text or jsonl");

  std::vector<BenchInput> benches;
  if (!a.input.empty() || !a.annotations.empty()) {
    if (a.input.empty() || a.annotations.empty()) {
      throw UsageError("meta-eval needs both --input and --annotations");
    }
    benches.push_back({a.benchmark_name, a.input, a.annotations});
  }
  for (const std::string& b : a.benches) benches.push_back(parse_bench(b));
  if (benches.empty()) throw UsageError("meta-eval needs --input/--annotations or at least one --bench");

  OrientationMap orientation = OrientationMap::defaults();
  if (!a.orient_map.empty()) {
    auto in = open_input(a.orient_map);
    orientation.load(*in->stream);
  }
  const std::vector<FeatureName> row_filter = parse_names(a.features);

  // model_id -> benchmark -> report
  std::map<std::string, std::vector<std::pair<std::string, CorrelationReport>>> by_model;

  for (const BenchInput& bench : benches) {
    auto fin = open_input(bench.features_path);
    std::vector<ScoredRecord> scored = read_scored(*fin->stream);
    auto ain = open_input(bench.annotations_path);
    const std::vector<Annotation> gold = read_annotations(*ain->stream);

    ReportMetadata meta;
    meta.calibrated = a.calibrate;
    meta.oriented = !a.raw;
    meta.orientation = orientation;
    if (!scored.empty()) {
      meta.sp_mode = scored.front().sp_mode;
      meta.ref_mode = scored.front().ref_mode;
    }
    for (const ScoredRecord& r : scored) {
      if (r.sp_mode != meta.sp_mode || r.ref_mode != meta.ref_mode) {
        throw ValidationError("feature file '" + bench.features_path + "' mixes sp_mode/ref_mode settings");
      }
    }

    std::map<std::string, std::vector<ScoredRecord>> slices;
    for (ScoredRecord& r : scored) slices[r.features.model_id].push_back(std::move(r));
    if (slices.empty()) throw ValidationError("feature file '" + bench.features_path + "' has no records");

    std::size_t foreign = 0;
    for (const Annotation& g : gold) foreign += slices.contains(g.model_id) ? 0 : 1;
    if (foreign > 0) {
      err << "[" << bench.name << "] " << foreign << " annotation(s) name a model with no feature records\n";
    }

    for (auto& [model, records] : slices) {
      std::vector<Annotation> model_gold;
      for (const Annotation& g : gold) {
        if (g.model_id == model) model_gold.push_back(g);
      }
      by_model[model].emplace_back(bench.name, evaluate_slice(std::move(records), model_gold, a, meta, row_filter));
    }
  }

  std::vector<ReportSection> sections;
  bool undefined = false;
  for (auto& [model, reports] : by_model) {
    for (const auto& [name, report] : reports) undefined = undefined || report.has_undefined();
    sections.push_back({model, std::move(reports)});
  }

  auto dest = open_output(a.output, out);
  if (a.format == "jsonl") {
    render_jsonl(*dest->stream, sections);
  } else {
    render_text(*dest->stream, sections, a.tau_a);
  }
  if (undefined) {
    err << "error: some correlations are undefined (constant feature or gold scores); see report\n";
    return kUndefinedStatistic;
  }
  return kSuccess;
}

// ---------------------------------------------------------------------------
// validate

int cmd_validate(const std::string& path, std::ostream& out) {
  auto in = open_input(path);
  std::string line;
  std::size_t n = 0, traces = 0, problems = 0;

  struct Group {
    std::vector<std::pair<std::size_t, Trace>> members;
  };
  std::map<std::pair<std::string, std::string>, Group> groups;
  std::vector<std::pair<std::string, std::string>> order;

  while (std::getline(*in->stream, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Trace t;
    try {
      t = parse_trace_line(line, n);
    } catch (const ParseError& e) {
      out << e.what() << '\n';
      ++problems;
      continue;
    }
    ++traces;
    for (const Violation& v : validate(t)) {
      out << "line " << n << ": " << to_string(v) << '\n';
      ++problems;
    }
    auto key = std::make_pair(t.question_id, t.model_id);
    if (!groups.contains(key)) order.push_back(key);
    groups[key].members.emplace_back(n, std::move(t));
  }

  for (const auto& key : order) {
    Group& g = groups[key];
    const std::string where = "question '" + key.first + "', model '" + key.second + "': ";
    ResponseRecord r;
    r.question_id = key.first;
    r.model_id = key.second;
    std::size_t responses = 0, references = 0;
    for (auto& [line_no, t] : g.members) {
      if (is_response_kind(t.kind)) {
        if (++responses == 1) r.primary = t;
      } else if (is_ensemble_kind(t.kind)) {
        r.ensemble.push_back(t);
      } else if (++references == 1) {
        r.reference = t;
      }
    }
    if (responses == 0) {
      out << where << "no primary or illustrated trace\n";
      ++problems;
      continue;
    }
    if (responses > 1) {
      out << where << responses << " primary/illustrated traces, expected 1\n";
      ++problems;
    }
    if (references > 1) {
      out << where << references << " reference traces, expected at most 1\n";
      ++problems;
    }
    // Trace-level violations were printed above; report only the new ones.
    std::vector<Violation> seen;
    auto add_trace = [&](const Trace& t) {
      auto v = validate(t);
      seen.insert(seen.end(), v.begin(), v.end());
    };
    add_trace(r.primary);
    for (const Trace& t : r.ensemble) add_trace(t);
    if (r.reference) add_trace(*r.reference);
    for (const Violation& v : validate(r)) {
      if (std::find(seen.begin(), seen.end(), v) != seen.end()) continue;
      out << where << to_string(v) << '\n';
      ++problems;
    }
  }

  if (problems > 0) {
    out << problems << " problem(s) in " << traces << " trace(s)\n";
    return kDataValidation;
  }
  out << "OK: " << traces << " trace(s) in " << order.size() << " record(s)\n";
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Glass-box self-evaluation: score LLM generation traces and correlate them with gold annotations",
               "selfeval"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a deterministic synthetic trace corpus and gold scores");
  synth_cmd->add_option("-o,--output", synth.output, "Trace file to write (default stdout)");
  synth_cmd->add_option("--annotations", synth.annotations, "Gold annotation file to write");
  synth_cmd->add_option("--num-questions", synth.num_questions)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--noise", synth.noise, "Noise level (0 = noiseless)")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--seed", synth.seed);
  synth_cmd->add_option("--ensemble-size", synth.ensemble_size)->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--vocab-size", synth.vocab_size)->check(CLI::Range(std::int64_t{2}, INT64_MAX));
  synth_cmd->add_option("--ensemble-kind", synth.ensemble_kind)->check(CLI::IsMember({"decoding", "prompt"}));
  synth_cmd->add_flag("--no-reference", synth.no_reference, "Do not emit reference_forced traces");
  synth_cmd->add_option("--layers", synth.layers, "Attention layers (0 disables attention)")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--heads", synth.heads)->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--model-id", synth.model_id);

  ScoreArgs score;
  auto* score_cmd = app.add_subcommand("score", "Compute glass-box features for every record of a trace file");
  score_cmd->add_option("-i,--input", score.input, "Trace file ('-' for stdin)")->required();
  score_cmd->add_option("-o,--output", score.output, "Feature file to write (default stdout)");
  score_cmd->add_option("--features", score.features, "Comma-separated feature names")->delimiter(',');
  score_cmd->add_option("--sp-mode", score.sp_mode, "Sentence probability mode")
      ->check(CLI::IsMember({"product_log", "mean_log"}));
  score_cmd->add_option("--var-operand", score.var_operand, "Softmax-Var operand")
      ->check(CLI::IsMember({"logprob", "prob"}));
  score_cmd->add_option("--ref-mode", score.ref_mode, "Reference sentence probability formula")
      ->check(CLI::IsMember({"as_written", "mean_log"}));
  score_cmd->add_flag("--calibrate", score.calibrate, "Also emit reference-calibrated '-calib' features");
  score_cmd->add_flag("--strict", score.strict, "Fail when a requested feature is unavailable");
  score_cmd->add_option("--threads", score.threads, "Worker threads (default: hardware concurrency)");

  MetaEvalArgs meta;
  auto* meta_cmd = app.add_subcommand("meta-eval", "Correlate feature scores with gold annotations");
  meta_cmd->add_option("-i,--input", meta.input, "Feature file from 'score'");
  meta_cmd->add_option("-a,--annotations", meta.annotations, "Gold annotations (JSONL or CSV)");
  meta_cmd->add_option("--benchmark-name", meta.benchmark_name, "Column label for --input");
  meta_cmd->add_option("--bench", meta.benches, "Extra benchmark as NAME=FEATURES,ANNOTATIONS (repeatable)");
  meta_cmd->add_option("--features", meta.features, "Only report these features")->delimiter(',');
  meta_cmd->add_flag("--calibrate", meta.calibrate, "Add reference-calibrated rows");
  meta_cmd->add_flag("--combo", meta.combo, "Add the Softmax-combo row");
  meta_cmd->add_flag("--raw", meta.raw, "Correlate raw values without orientation");
  meta_cmd->add_flag("--tau-a", meta.tau_a, "Also print Kendall tau-a in the text report");
  meta_cmd->add_option("--orient-map", meta.orient_map, "Orientation overrides, 'Feature = higher|lower' lines");
  meta_cmd->add_option("--format", meta.format, "text or jsonl")->check(CLI::IsMember({"text", "jsonl"}));
  meta_cmd->add_option("-o,--output", meta.output, "Report file (default stdout)");

  std::string validate_input;
  auto* validate_cmd = app.add_subcommand("validate", "Check a trace file against every data invariant");
  validate_cmd->add_option("-i,--input", validate_input, "Trace file ('-' for stdin)")->required();

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const std::string& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsage;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth, out);
    if (*score_cmd) return cmd_score(score, out, err);
    if (*meta_cmd) return cmd_meta_eval(meta, out, err);
    if (*validate_cmd) return cmd_validate(validate_input, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const UndefinedStatistic& e) {
    err << "error: " << e.what() << '\n';
    return kUndefinedStatistic;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataValidation;
  }
  return kUsage;
}

}  // namespace selfeval::cli
