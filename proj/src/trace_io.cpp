#include "selfeval/trace_io.hpp"

#include <cstdint>
#include <istream>
#include <ostream>
#include <string_view>
#include <unordered_map>

#include "selfeval/error.hpp"

namespace selfeval {

using Json = nlohmann::ordered_json;

namespace {

bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r") == std::string_view::npos;
}

const Json& require(const Json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(line, std::string("missing required key '") + key + "'");
  return *it;
}

std::string require_string(const Json& obj, const char* key, std::size_t line) {
  const Json& v = require(obj, key, line);
  if (!v.is_string()) throw ParseError(line, std::string("key '") + key + "' must be a string");
  return v.get<std::string>();
}

double require_number(const Json& obj, const char* key, std::size_t line) {
  const Json& v = require(obj, key, line);
  if (!v.is_number()) throw ParseError(line, std::string("key '") + key + "' must be a number");
  return v.get<double>();
}

std::int64_t require_integer(const Json& v, const char* key, std::size_t line) {
  if (!v.is_number_integer()) throw ParseError(line, std::string("key '") + key + "' must be an integer");
  if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) {
    throw ParseError(line, std::string("key '") + key + "' is out of range");
  }
  return v.get<std::int64_t>();
}

AttentionEntropyGrid parse_attention(const Json& a, std::size_t line) {
  if (!a.is_object()) throw ParseError(line, "key 'attention' must be an object");
  AttentionEntropyGrid grid;
  grid.num_layers = require_integer(require(a, "num_layers", line), "num_layers", line);
  grid.num_heads = require_integer(require(a, "num_heads", line), "num_heads", line);
  const Json& rows = require(a, "values", line);
  if (!rows.is_array()) throw ParseError(line, "key 'attention.values' must be an array of arrays");
  grid.values.reserve(rows.size());
  for (const Json& row : rows) {
    if (!row.is_array()) throw ParseError(line, "key 'attention.values' must be an array of arrays");
    auto& out = grid.values.emplace_back();
    out.reserve(row.size());
    for (const Json& v : row) {
      if (!v.is_number()) throw ParseError(line, "attention entries must be numbers");
      out.push_back(v.get<double>());
    }
  }
  return grid;
}

std::string record_key(const std::string& question_id, const std::string& model_id) {
  std::string key = question_id;
  key.push_back('\x1f');
  key += model_id;
  return key;
}

}  // namespace

Trace parse_trace_line(const std::string& line, std::size_t line_number) {
  Json obj;
  try {
    obj = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw ParseError(line_number, std::string("malformed JSON: ") + e.what());
  }
  if (!obj.is_object()) throw ParseError(line_number, "expected a JSON object");

  Trace t;
  t.trace_id = require_string(obj, "trace_id", line_number);
  t.question_id = require_string(obj, "question_id", line_number);
  t.model_id = require_string(obj, "model_id", line_number);
  const std::string kind = require_string(obj, "kind", line_number);
  auto parsed_kind = parse_trace_kind(kind);
  if (!parsed_kind) throw ParseError(line_number, "unknown trace kind '" + kind + "'");
  t.kind = *parsed_kind;

  const Json& steps = require(obj, "steps", line_number);
  if (!steps.is_array()) throw ParseError(line_number, "key 'steps' must be an array");
  t.steps.reserve(steps.size());
  for (const Json& s : steps) {
    if (!s.is_object()) throw ParseError(line_number, "each step must be an object");
    StepRecord& step = t.steps.emplace_back();
    step.token_text = require_string(s, "token", line_number);
    step.token_logprob = require_number(s, "logprob", line_number);
    step.step_entropy = require_number(s, "entropy", line_number);
  }

  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const std::string& key = it.key();
    if (key == "trace_id" || key == "question_id" || key == "model_id" || key == "kind" || key == "steps") {
      continue;
    }
    if (key == "attention") {
      t.attention = parse_attention(it.value(), line_number);
    } else if (key == "vocab_size") {
      t.vocab_size = require_integer(it.value(), "vocab_size", line_number);
    } else if (key == "prompt_variant_id") {
      if (!it.value().is_string()) throw ParseError(line_number, "key 'prompt_variant_id' must be a string");
      t.prompt_variant_id = it.value().get<std::string>();
    } else {
      t.extra[key] = it.value();
    }
  }
  return t;
}

std::string format_trace_line(const Trace& t) {
  Json obj;
  obj["trace_id"] = t.trace_id;
  obj["question_id"] = t.question_id;
  obj["model_id"] = t.model_id;
  obj["kind"] = to_string(t.kind);
  Json steps = Json::array();
  for (const StepRecord& s : t.steps) {
    Json step;
    step["token"] = s.token_text;
    step["logprob"] = s.token_logprob;
    step["entropy"] = s.step_entropy;
    steps.push_back(std::move(step));
  }
  obj["steps"] = std::move(steps);
  if (t.attention) {
    Json a;
    a["num_layers"] = t.attention->num_layers;
    a["num_heads"] = t.attention->num_heads;
    a["values"] = t.attention->values;
    obj["attention"] = std::move(a);
  }
  if (t.vocab_size) obj["vocab_size"] = *t.vocab_size;
  if (t.prompt_variant_id) obj["prompt_variant_id"] = *t.prompt_variant_id;
  for (auto it = t.extra.begin(); it != t.extra.end(); ++it) obj[it.key()] = it.value();
  return obj.dump();
}

bool TraceReader::next(Trace& out) {
  while (std::getline(in_, buffer_)) {
    ++line_;
    if (is_blank(buffer_)) continue;
    Trace t = parse_trace_line(buffer_, line_);
    auto violations = validate(t);
    if (!violations.empty()) {
      throw ValidationError("line " + std::to_string(line_) + ": " + to_string(violations.front()));
    }
    out = std::move(t);
    return true;
  }
  return false;
}

std::vector<ResponseRecord> read_traces(std::istream& in) {
  // Slots are filled as lines arrive; the response slot may show up after the
  // ensemble or reference lines of the same group.
  struct Group {
    std::optional<Trace> primary;
    std::vector<Trace> ensemble;
    std::optional<Trace> reference;
    std::string question_id;
    std::string model_id;
  };
  std::vector<Group> groups;
  std::unordered_map<std::string, std::size_t> index;

  TraceReader reader(in);
  Trace t;
  while (reader.next(t)) {
    const std::string key = record_key(t.question_id, t.model_id);
    auto [it, inserted] = index.try_emplace(key, groups.size());
    if (inserted) {
      groups.emplace_back();
      groups.back().question_id = t.question_id;
      groups.back().model_id = t.model_id;
    }
    Group& g = groups[it->second];
    const std::string where = "line " + std::to_string(reader.line_number()) + ": trace '" + t.trace_id + "'";
    if (is_response_kind(t.kind)) {
      if (g.primary) {
        throw ValidationError(where + " duplicates response trace '" + g.primary->trace_id +
                              "' for question '" + t.question_id + "', model '" + t.model_id + "'");
      }
      g.primary = std::move(t);
    } else if (is_ensemble_kind(t.kind)) {
      if (!g.ensemble.empty() && g.ensemble.front().kind != t.kind) {
        throw ValidationError(where + " field 'kind': violates homogeneous ensemble kind (mixed " +
                              std::string(to_string(g.ensemble.front().kind)) + " and " +
                              std::string(to_string(t.kind)) + ")");
      }
      g.ensemble.push_back(std::move(t));
    } else {
      if (g.reference) {
        throw ValidationError(where + " duplicates reference trace '" + g.reference->trace_id + "'");
      }
      g.reference = std::move(t);
    }
  }

  std::vector<ResponseRecord> records;
  records.reserve(groups.size());
  for (Group& g : groups) {
    if (!g.primary) {
      throw ValidationError("question '" + g.question_id + "', model '" + g.model_id +
                            "' has no primary or illustrated trace");
    }
    ResponseRecord r{g.question_id, g.model_id, std::move(*g.primary), std::move(g.ensemble), std::move(g.reference)};
    auto violations = validate(r);
    if (!violations.empty()) throw ValidationError(to_string(violations.front()));
    records.push_back(std::move(r));
  }
  return records;
}

void write_traces(std::ostream& out, std::span<const ResponseRecord> records) {
  for (const ResponseRecord& r : records) {
    out << format_trace_line(r.primary) << '\n';
    for (const Trace& t : r.ensemble) out << format_trace_line(t) << '\n';
    if (r.reference) out << format_trace_line(*r.reference) << '\n';
  }
}

}  // namespace selfeval
