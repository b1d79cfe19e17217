#include "selfeval/trace.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>

namespace selfeval {

namespace {

constexpr std::array<std::pair<TraceKind, std::string_view>, 5> kKindNames{{
    {TraceKind::primary, "primary"},
    {TraceKind::ensemble_decoding, "ensemble_decoding"},
    {TraceKind::ensemble_prompt, "ensemble_prompt"},
    {TraceKind::reference_forced, "reference_forced"},
    {TraceKind::illustrated, "illustrated"},
}};

// Entropies are produced in model precision and stored as doubles, so a value
// sitting exactly on ln(V) may round a hair above it.
constexpr double kEntropyBoundRelSlack = 1e-12;

void check_steps(const Trace& t, std::vector<Violation>& out) {
  if (t.steps.empty()) {
    out.push_back({t.trace_id, "steps", "T ≥ 1"});
    return;
  }
  const bool has_vocab = t.vocab_size && *t.vocab_size >= 1;
  const double entropy_cap =
      has_vocab ? std::log(static_cast<double>(*t.vocab_size)) * (1.0 + kEntropyBoundRelSlack) : 0.0;

  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const StepRecord& s = t.steps[i];
    const std::string where = "steps[" + std::to_string(i) + "].";
    if (!std::isfinite(s.token_logprob) || s.token_logprob > 0.0) {
      out.push_back({t.trace_id, where + "token_logprob", "token_logprob ≤ 0"});
    }
    if (!std::isfinite(s.step_entropy) || s.step_entropy < 0.0) {
      out.push_back({t.trace_id, where + "step_entropy", "step_entropy ≥ 0"});
    } else if (has_vocab && s.step_entropy > entropy_cap) {
      out.push_back({t.trace_id, where + "step_entropy", "step_entropy ≤ ln(vocab_size)"});
    }
  }
}

void check_attention(const Trace& t, std::vector<Violation>& out) {
  if (!t.attention) return;
  const AttentionEntropyGrid& g = *t.attention;
  if (g.num_layers < 1) out.push_back({t.trace_id, "attention.num_layers", "num_layers ≥ 1"});
  if (g.num_heads < 1) out.push_back({t.trace_id, "attention.num_heads", "num_heads ≥ 1"});

  bool rectangular = g.values.size() == static_cast<std::size_t>(std::max<std::int64_t>(g.num_layers, 0));
  for (const auto& row : g.values) {
    if (row.size() != static_cast<std::size_t>(std::max<std::int64_t>(g.num_heads, 0))) rectangular = false;
  }
  if (!rectangular) out.push_back({t.trace_id, "attention.values", "rectangular grid"});

  for (const auto& row : g.values) {
    for (double v : row) {
      if (!std::isfinite(v) || v < 0.0) {
        out.push_back({t.trace_id, "attention.values", "attention entries finite and ≥ 0"});
        return;
      }
    }
  }
}

}  // namespace

std::string_view to_string(TraceKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<TraceKind> parse_trace_kind(std::string_view text) {
  for (const auto& [k, name] : kKindNames) {
    if (name == text) return k;
  }
  return std::nullopt;
}

std::string to_string(const Violation& v) {
  return "trace '" + v.trace_id + "' field '" + v.field + "': violates " + v.rule;
}

std::vector<Violation> validate(const Trace& trace) {
  std::vector<Violation> out;
  check_steps(trace, out);
  check_attention(trace, out);
  if (trace.vocab_size && *trace.vocab_size < 1) {
    out.push_back({trace.trace_id, "vocab_size", "vocab_size ≥ 1"});
  }
  if (trace.kind == TraceKind::ensemble_prompt && !trace.prompt_variant_id) {
    out.push_back({trace.trace_id, "prompt_variant_id", "ensemble_prompt ⇒ prompt_variant_id present"});
  }
  return out;
}

std::vector<Violation> validate(const ResponseRecord& record) {
  std::vector<Violation> out;

  auto check_member = [&](const Trace& t) {
    auto v = validate(t);
    out.insert(out.end(), v.begin(), v.end());
    if (t.question_id != record.question_id) {
      out.push_back({t.trace_id, "question_id", "member traces share question_id"});
    }
    if (t.model_id != record.model_id) {
      out.push_back({t.trace_id, "model_id", "member traces share model_id"});
    }
  };

  check_member(record.primary);
  if (!is_response_kind(record.primary.kind)) {
    out.push_back({record.primary.trace_id, "kind", "primary slot holds kind primary or illustrated"});
  }

  for (const Trace& t : record.ensemble) {
    check_member(t);
    if (!is_ensemble_kind(t.kind)) {
      out.push_back({t.trace_id, "kind", "ensemble slot holds kind ensemble_decoding or ensemble_prompt"});
    } else if (t.kind != record.ensemble.front().kind) {
      out.push_back({t.trace_id, "kind", "homogeneous ensemble kind"});
    }
  }

  if (record.reference) {
    check_member(*record.reference);
    if (record.reference->kind != TraceKind::reference_forced) {
      out.push_back({record.reference->trace_id, "kind", "reference slot holds kind reference_forced"});
    }
  }
  return out;
}

}  // namespace selfeval
