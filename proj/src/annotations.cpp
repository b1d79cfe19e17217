#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "selfeval/error.hpp"
#include "selfeval/meta_eval.hpp"

namespace selfeval {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(trim(field));
  return fields;
}

double parse_score(const std::string& text, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ParseError(line, "gold_score '" + text + "' is not a number");
  }
  if (used != text.size()) throw ParseError(line, "gold_score '" + text + "' is not a number");
  return v;
}

Annotation parse_json_line(const std::string& line, std::size_t n) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(n, std::string("malformed JSON: ") + e.what());
  }
  if (!obj.is_object()) throw ParseError(n, "expected a JSON object");
  Annotation a;
  for (const char* key : {"question_id", "model_id"}) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
      throw ParseError(n, std::string("key '") + key + "' must be a string");
    }
  }
  a.question_id = obj["question_id"].get<std::string>();
  a.model_id = obj["model_id"].get<std::string>();
  auto score = obj.find("gold_score");
  if (score == obj.end() || !score->is_number()) throw ParseError(n, "key 'gold_score' must be a number");
  a.gold_score = score->get<double>();
  return a;
}

}  // namespace

std::vector<Annotation> read_annotations(std::istream& in) {
  std::vector<Annotation> out;
  std::set<std::pair<std::string, std::string>> seen;
  std::string line;
  std::size_t n = 0;
  enum class Format { unknown, jsonl, csv } format = Format::unknown;
  std::size_t qcol = 0, mcol = 0, scol = 0;

  while (std::getline(in, line)) {
    ++n;
    const std::string body = trim(line);
    if (body.empty()) continue;

    if (format == Format::unknown) {
      if (body.front() == '{') {
        format = Format::jsonl;
      } else {
        format = Format::csv;
        const auto header = split_csv(body);
        bool have_q = false, have_m = false, have_s = false;
        for (std::size_t i = 0; i < header.size(); ++i) {
          if (header[i] == "question_id") qcol = i, have_q = true;
          if (header[i] == "model_id") mcol = i, have_m = true;
          if (header[i] == "gold_score") scol = i, have_s = true;
        }
        if (!(have_q && have_m && have_s)) {
          throw ParseError(n, "CSV header must name question_id, model_id and gold_score");
        }
        continue;
      }
    }

    Annotation a;
    if (format == Format::jsonl) {
      a = parse_json_line(body, n);
    } else {
      const auto fields = split_csv(body);
      const std::size_t need = std::max({qcol, mcol, scol}) + 1;
      if (fields.size() < need) throw ParseError(n, "expected at least " + std::to_string(need) + " fields");
      a.question_id = fields[qcol];
      a.model_id = fields[mcol];
      a.gold_score = parse_score(fields[scol], n);
    }
    if (!std::isfinite(a.gold_score)) {
      throw ValidationError("line " + std::to_string(n) + ": gold_score must be finite");
    }
    if (!seen.emplace(a.question_id, a.model_id).second) {
      throw ValidationError("line " + std::to_string(n) + ": duplicate annotation for question '" + a.question_id +
                            "', model '" + a.model_id + "'");
    }
    out.push_back(std::move(a));
  }
  return out;
}

void write_annotations(std::ostream& out, std::span<const Annotation> annotations) {
  for (const Annotation& a : annotations) {
    nlohmann::ordered_json obj;
    obj["question_id"] = a.question_id;
    obj["model_id"] = a.model_id;
    obj["gold_score"] = a.gold_score;
    out << obj.dump() << '\n';
  }
}

}  // namespace selfeval
