#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfeval/trace.hpp"

namespace selfeval {

// Closed set of glass-box features. SoftmaxCombo is dataset-level and is
// produced by add_combo (reference.hpp), never by compute_features.
enum class Feature {
  SentProb,
  SoftmaxEnt,
  SoftmaxVar,
  UntExp,
  UntVar,
  AttnEntMin,
  AttnEntAvg,
  SoftmaxCombo,
};

// A feature, optionally in its reference-calibrated ("-calib") form.
struct FeatureName {
  Feature base = Feature::SentProb;
  bool calibrated = false;

  auto operator<=>(const FeatureName&) const = default;
};

std::string to_string(Feature f);
std::string to_string(FeatureName name);
std::optional<FeatureName> parse_feature_name(std::string_view text);

// The per-record features, in report order.
const std::vector<Feature>& per_record_features();

struct FeatureVector {
  std::string question_id;
  std::string model_id;
  std::map<FeatureName, double> values;
  // Features whose values are currently negated by orient().
  std::set<FeatureName> negated;

  bool operator==(const FeatureVector&) const = default;
};

enum class SpMode { product_log, mean_log };
std::string_view to_string(SpMode mode);
std::optional<SpMode> parse_sp_mode(std::string_view text);

// Operand of Softmax-Var: chosen-token log-probabilities (default) or the
// raw probabilities exp(logprob).
enum class VarOperand { log_prob, prob };
std::string_view to_string(VarOperand op);
std::optional<VarOperand> parse_var_operand(std::string_view text);

// product_log: sum of token log-probs (log of the sequence probability).
// mean_log: the same sum divided by T.
double sent_prob(const Trace& trace, SpMode mode);

// Mean over steps of the full-vocabulary entropy.
double softmax_ent(const Trace& trace);

// Population variance of the per-step operand.
double softmax_var(const Trace& trace, VarOperand operand = VarOperand::log_prob);

// Mean and population variance of sent_prob over the ensemble members.
// Throw FeatureUnavailable when the ensemble is empty.
double uncertainty_exp(const ResponseRecord& record, SpMode mode);
double uncertainty_var(const ResponseRecord& record, SpMode mode);

// Row-major J x I attention block: rows are response tokens, columns are
// instruction tokens.
struct AttentionMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;

  double at(std::size_t j, std::size_t i) const { return weights[j * cols + i]; }
};

// -(1/I) * sum_i sum_j a_ji ln a_ji with 0 ln 0 = 0. Entries must lie in
// [0, 1] (ValidationError otherwise).
double attn_entropy(const AttentionMatrix& weights);

double attn_ent_min(const AttentionEntropyGrid& grid);
double attn_ent_avg(const AttentionEntropyGrid& grid);

struct FeatureConfig {
  std::vector<Feature> requested = per_record_features();
  SpMode sp_mode = SpMode::mean_log;
  VarOperand var_operand = VarOperand::log_prob;
};

struct FeatureResult {
  FeatureVector vector;
  // Requested features the record has no data for, in request order.
  std::vector<FeatureName> unavailable;
};

// Computes the requested per-record features. Uncertainty features need a
// non-empty ensemble, attention features need an attention grid on the
// response trace; otherwise they land in `unavailable`.
FeatureResult compute_features(const ResponseRecord& record, const FeatureConfig& config);

// Scores many records on `threads` workers. Output order follows input order.
std::vector<FeatureResult> compute_features(std::span<const ResponseRecord> records, const FeatureConfig& config,
                                            unsigned threads);

}  // namespace selfeval
