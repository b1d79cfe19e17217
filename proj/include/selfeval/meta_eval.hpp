#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "selfeval/features.hpp"
#include "selfeval/reference.hpp"

namespace selfeval {

// ---------------------------------------------------------------------------
// Correlation coefficients
//
// All three require equal lengths n >= 2 and finite inputs
// (PreconditionError otherwise). A series without spread makes the
// coefficient undefined and raises UndefinedStatistic naming the constant
// side. Results are clamped to [-1, 1].
// ---------------------------------------------------------------------------

double pearson(std::span<const double> x, std::span<const double> y);

// Pearson on average (fractional) ranks.
double spearman(std::span<const double> x, std::span<const double> y);

// Kendall tau-b, O(n log n): sort + merge-sort inversion count with tie
// corrections.
double kendall(std::span<const double> x, std::span<const double> y);

// Kendall tau-a: (concordant - discordant) / (n(n-1)/2).
double kendall_tau_a(std::span<const double> x, std::span<const double> y);

// 1-based ranks, ties get the mean of the positions they span.
std::vector<double> average_ranks(std::span<const double> values);

// ---------------------------------------------------------------------------
// Annotations
// ---------------------------------------------------------------------------

struct Annotation {
  std::string question_id;
  std::string model_id;
  double gold_score = 0.0;

  bool operator==(const Annotation&) const = default;
};

// Line-delimited JSON ({"question_id", "model_id", "gold_score"}) or CSV
// with header question_id,model_id,gold_score; detected from the first
// non-blank line. Rejects non-finite scores and duplicate keys.
std::vector<Annotation> read_annotations(std::istream& in);
void write_annotations(std::ostream& out, std::span<const Annotation> annotations);

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct CorrelationRow {
  FeatureName feature;
  std::size_t n = 0;
  double pearson = 0.0;
  double kendall = 0.0;
  double spearman = 0.0;
  double kendall_tau_a = 0.0;
  // Set when a coefficient is undefined for this feature; the numbers are
  // then meaningless.
  std::optional<std::string> undefined;
};

struct JoinDiagnostics {
  std::size_t feature_records = 0;
  std::size_t annotations = 0;
  std::size_t matched = 0;
  // Keys rendered as "question_id/model_id".
  std::vector<std::string> unmatched_annotations;
  std::vector<std::string> unmatched_features;
  // Features present in fewer than 2 matched records.
  std::vector<FeatureName> skipped_features;
};

struct ReportMetadata {
  std::string sp_mode = "mean_log";
  std::string ref_mode = "as_written";
  bool calibrated = false;
  bool oriented = true;
  OrientationMap orientation = OrientationMap::defaults();
};

struct CorrelationReport {
  std::vector<CorrelationRow> rows;
  JoinDiagnostics diagnostics;
  ReportMetadata metadata;

  bool has_undefined() const;
};

// Joins features to annotations on (question_id, model_id) and correlates
// each feature present in >= 2 matched records with the gold score. Throws
// ValidationError with the join counts when nothing matches, or on duplicate
// feature keys.
CorrelationReport build_report(std::span<const FeatureVector> features, std::span<const Annotation> annotations,
                               const ReportMetadata& metadata);

// One model's results across benchmarks, for rendering.
struct ReportSection {
  std::string model_id;
  std::vector<std::pair<std::string, CorrelationReport>> benchmarks;
};

// Aligned text table: one block per model, Pearson/Kendall/Spearman per
// benchmark and an Average column (mean Pearson across benchmarks).
void render_text(std::ostream& out, std::span<const ReportSection> sections, bool show_tau_a = false);

// One JSON object per (model, benchmark, feature) row, then one
// diagnostics object per (model, benchmark).
void render_jsonl(std::ostream& out, std::span<const ReportSection> sections);

}  // namespace selfeval
