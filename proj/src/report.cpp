#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <string>

#include "json.hpp"
#include "selfeval/error.hpp"
#include "selfeval/meta_eval.hpp"

namespace selfeval {

namespace {

std::string key_of(const std::string& question_id, const std::string& model_id) {
  return question_id + "/" + model_id;
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  std::string s = buf;
  if (s == "-0.0000") s = "0.0000";
  return s;
}

std::string pad_left(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

const CorrelationRow* find_row(const CorrelationReport& r, FeatureName name) {
  for (const CorrelationRow& row : r.rows) {
    if (row.feature == name) return &row;
  }
  return nullptr;
}

std::string orientation_label(const ReportMetadata& m, FeatureName name) {
  if (!m.oriented) return "raw";
  auto o = m.orientation.lookup(name);
  return o ? std::string(to_string(*o)) : "uncovered";
}

}  // namespace

bool CorrelationReport::has_undefined() const {
  for (const CorrelationRow& row : rows) {
    if (row.undefined) return true;
  }
  return false;
}

CorrelationReport build_report(std::span<const FeatureVector> features, std::span<const Annotation> annotations,
                               const ReportMetadata& metadata) {
  CorrelationReport report;
  report.metadata = metadata;
  JoinDiagnostics& d = report.diagnostics;
  d.feature_records = features.size();
  d.annotations = annotations.size();

  std::map<std::string, double> gold;
  for (const Annotation& a : annotations) {
    if (!gold.emplace(key_of(a.question_id, a.model_id), a.gold_score).second) {
      throw ValidationError("duplicate annotation for " + key_of(a.question_id, a.model_id));
    }
  }

  std::set<std::string> feature_keys;
  std::vector<std::pair<const FeatureVector*, double>> matched;
  for (const FeatureVector& v : features) {
    const std::string key = key_of(v.question_id, v.model_id);
    if (!feature_keys.insert(key).second) throw ValidationError("duplicate feature record for " + key);
    auto it = gold.find(key);
    if (it == gold.end()) {
      d.unmatched_features.push_back(key);
    } else {
      matched.emplace_back(&v, it->second);
    }
  }
  for (const Annotation& a : annotations) {
    const std::string key = key_of(a.question_id, a.model_id);
    if (!feature_keys.contains(key)) d.unmatched_annotations.push_back(key);
  }
  d.matched = matched.size();
  if (matched.empty()) {
    throw ValidationError("no feature record matches an annotation (" + std::to_string(d.feature_records) +
                          " feature records, " + std::to_string(d.annotations) + " annotations)");
  }

  std::set<FeatureName> names;
  for (const auto& [v, g] : matched) {
    for (const auto& [name, value] : v->values) names.insert(name);
  }

  for (FeatureName name : names) {
    std::vector<double> xs, ys;
    for (const auto& [v, g] : matched) {
      auto it = v->values.find(name);
      if (it == v->values.end()) continue;
      xs.push_back(it->second);
      ys.push_back(g);
    }
    if (xs.size() < 2) {
      d.skipped_features.push_back(name);
      continue;
    }
    CorrelationRow row;
    row.feature = name;
    row.n = xs.size();
    try {
      row.pearson = pearson(xs, ys);
      row.kendall = kendall(xs, ys);
      row.spearman = spearman(xs, ys);
      row.kendall_tau_a = kendall_tau_a(xs, ys);
    } catch (const UndefinedStatistic& e) {
      row.undefined = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

void render_text(std::ostream& out, std::span<const ReportSection> sections, bool show_tau_a) {
  constexpr std::size_t kNameWidth = 20;
  constexpr std::size_t kCell = 9;
  const std::size_t per_bench = show_tau_a ? 4 : 3;

  for (const ReportSection& section : sections) {
    if (section.benchmarks.empty()) continue;
    const ReportMetadata& meta = section.benchmarks.front().second.metadata;
    out << "Model: " << section.model_id << "  (sp_mode=" << meta.sp_mode << ", ref_mode=" << meta.ref_mode
        << ", calibration=" << (meta.calibrated ? "on" : "off") << ", orientation=" << (meta.oriented ? "on" : "off")
        << ")\n";

    std::string top = pad_right("", kNameWidth);
    std::string sub = pad_right("Method", kNameWidth);
    for (const auto& [bench, report] : section.benchmarks) {
      top += " " + pad_right(bench, kCell * per_bench);
      sub += pad_left("Pearson", kCell) + pad_left("Kendall", kCell) + pad_left("Spearman", kCell);
      if (show_tau_a) sub += pad_left("Tau-a", kCell);
    }
    top += " " + pad_left("", kCell);
    sub += pad_left("Average", kCell);
    out << top << '\n' << sub << '\n';

    std::set<FeatureName> names;
    for (const auto& [bench, report] : section.benchmarks) {
      for (const CorrelationRow& row : report.rows) names.insert(row.feature);
    }

    std::vector<std::string> notes;
    for (FeatureName name : names) {
      std::string line = pad_right(to_string(name), kNameWidth);
      double pearson_sum = 0.0;
      std::size_t pearson_count = 0;
      for (const auto& [bench, report] : section.benchmarks) {
        const CorrelationRow* row = find_row(report, name);
        if (row == nullptr || row->undefined) {
          const std::string mark = row == nullptr ? "-" : "undef";
          for (std::size_t k = 0; k < per_bench; ++k) line += pad_left(mark, kCell);
          if (row != nullptr) notes.push_back(to_string(name) + " [" + bench + "]: " + *row->undefined);
          continue;
        }
        line += pad_left(fixed4(row->pearson), kCell) + pad_left(fixed4(row->kendall), kCell) +
                pad_left(fixed4(row->spearman), kCell);
        if (show_tau_a) line += pad_left(fixed4(row->kendall_tau_a), kCell);
        pearson_sum += row->pearson;
        ++pearson_count;
      }
      line += pad_left(pearson_count == 0 ? "-" : fixed4(pearson_sum / static_cast<double>(pearson_count)), kCell);
      out << line << '\n';
    }

    for (const auto& [bench, report] : section.benchmarks) {
      const JoinDiagnostics& d = report.diagnostics;
      out << "[" << bench << "] matched=" << d.matched << " unmatched_annotations=" << d.unmatched_annotations.size()
          << " unmatched_features=" << d.unmatched_features.size();
      if (!d.skipped_features.empty()) {
        out << " skipped(<2 pairs)=";
        for (std::size_t i = 0; i < d.skipped_features.size(); ++i) {
          out << (i ? "," : "") << to_string(d.skipped_features[i]);
        }
      }
      out << '\n';
    }
    for (const std::string& note : notes) out << "undefined: " << note << '\n';
    out << "Average = arithmetic mean of Pearson across the benchmarks where it is defined.\n\n";
  }
}

void render_jsonl(std::ostream& out, std::span<const ReportSection> sections) {
  using Json = nlohmann::ordered_json;
  for (const ReportSection& section : sections) {
    for (const auto& [bench, report] : section.benchmarks) {
      const ReportMetadata& m = report.metadata;
      for (const CorrelationRow& row : report.rows) {
        Json j;
        j["model_id"] = section.model_id;
        j["benchmark"] = bench;
        j["feature"] = to_string(row.feature);
        j["n"] = row.n;
        if (row.undefined) {
          j["pearson"] = nullptr;
          j["kendall"] = nullptr;
          j["spearman"] = nullptr;
          j["kendall_tau_a"] = nullptr;
          j["undefined"] = *row.undefined;
        } else {
          j["pearson"] = row.pearson;
          j["kendall"] = row.kendall;
          j["spearman"] = row.spearman;
          j["kendall_tau_a"] = row.kendall_tau_a;
        }
        j["orientation"] = orientation_label(m, row.feature);
        j["sp_mode"] = m.sp_mode;
        j["ref_mode"] = m.ref_mode;
        j["calibrated"] = m.calibrated;
        out << j.dump() << '\n';
      }
      const JoinDiagnostics& d = report.diagnostics;
      Json diag;
      diag["model_id"] = section.model_id;
      diag["benchmark"] = bench;
      Json body;
      body["feature_records"] = d.feature_records;
      body["annotations"] = d.annotations;
      body["matched"] = d.matched;
      body["unmatched_annotations"] = d.unmatched_annotations;
      body["unmatched_features"] = d.unmatched_features;
      Json skipped = Json::array();
      for (FeatureName f : d.skipped_features) skipped.push_back(to_string(f));
      body["skipped_features"] = std::move(skipped);
      diag["diagnostics"] = std::move(body);
      out << diag.dump() << '\n';
    }
  }
}

}  // namespace selfeval
