#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace selfeval {

// One decoding step. The full next-token distribution is reduced at
// extraction time to the chosen token's log-probability and the entropy of
// the distribution. Natural-log units throughout.
struct StepRecord {
  std::string token_text;
  double token_logprob = 0.0;  // <= 0
  double step_entropy = 0.0;   // >= 0, <= ln(vocab_size) when declared

  bool operator==(const StepRecord&) const = default;
};

// Per-(layer, head) attention entropy, values[layer][head]. Nested vectors so
// that a ragged grid read from disk can be represented and reported.
struct AttentionEntropyGrid {
  std::int64_t num_layers = 0;
  std::int64_t num_heads = 0;
  std::vector<std::vector<double>> values;

  bool operator==(const AttentionEntropyGrid&) const = default;
};

enum class TraceKind {
  primary,
  ensemble_decoding,
  ensemble_prompt,
  reference_forced,
  illustrated,
};

std::string_view to_string(TraceKind kind);
std::optional<TraceKind> parse_trace_kind(std::string_view text);

inline bool is_ensemble_kind(TraceKind kind) {
  return kind == TraceKind::ensemble_decoding || kind == TraceKind::ensemble_prompt;
}

// Kinds that occupy the scored-response slot of a record. An illustrated
// trace is the response re-decoded behind an in-context demonstration and
// is scored exactly like a primary one.
inline bool is_response_kind(TraceKind kind) {
  return kind == TraceKind::primary || kind == TraceKind::illustrated;
}

struct Trace {
  std::string trace_id;
  std::string question_id;
  std::string model_id;
  TraceKind kind = TraceKind::primary;
  std::vector<StepRecord> steps;
  std::optional<AttentionEntropyGrid> attention;
  std::optional<std::int64_t> vocab_size;
  std::optional<std::string> prompt_variant_id;
  // Keys of the interchange object this library does not interpret; written
  // back verbatim after the known keys.
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  bool operator==(const Trace&) const = default;
};

// Every trace for one (question_id, model_id) pair.
struct ResponseRecord {
  std::string question_id;
  std::string model_id;
  Trace primary;
  std::vector<Trace> ensemble;
  std::optional<Trace> reference;

  bool operator==(const ResponseRecord&) const = default;
};

struct Violation {
  std::string trace_id;
  std::string field;
  std::string rule;

  bool operator==(const Violation&) const = default;
};

std::string to_string(const Violation& v);

// Checks the per-trace invariants only.
std::vector<Violation> validate(const Trace& trace);

// Checks every trace in the record plus the record-level invariants
// (shared keys, slot kinds, homogeneous ensemble). Empty iff valid.
std::vector<Violation> validate(const ResponseRecord& record);

}  // namespace selfeval
