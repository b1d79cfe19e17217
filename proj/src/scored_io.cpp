#include "selfeval/scored_io.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "json.hpp"
#include "selfeval/error.hpp"
#include "selfeval/reference.hpp"

namespace selfeval {

using Json = nlohmann::ordered_json;

namespace {

Json values_to_json(const std::map<FeatureName, double>& values) {
  Json obj = Json::object();
  for (const auto& [name, v] : values) obj[to_string(name)] = v;
  return obj;
}

std::map<FeatureName, double> values_from_json(const Json& obj, const char* key, std::size_t line) {
  if (!obj.is_object()) throw ParseError(line, std::string("key '") + key + "' must be an object");
  std::map<FeatureName, double> out;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    auto name = parse_feature_name(it.key());
    if (!name) throw ParseError(line, "unknown feature '" + it.key() + "'");
    if (!it.value().is_number()) throw ParseError(line, "feature '" + it.key() + "' must be a number");
    const double v = it.value().get<double>();
    if (!std::isfinite(v)) throw ValidationError("line " + std::to_string(line) + ": feature '" + it.key() + "' is not finite");
    out[*name] = v;
  }
  return out;
}

std::vector<FeatureName> names_from_json(const Json& arr, const char* key, std::size_t line) {
  if (!arr.is_array()) throw ParseError(line, std::string("key '") + key + "' must be an array");
  std::vector<FeatureName> out;
  for (const Json& v : arr) {
    if (!v.is_string()) throw ParseError(line, std::string("entries of '") + key + "' must be strings");
    auto name = parse_feature_name(v.get<std::string>());
    if (!name) throw ParseError(line, "unknown feature '" + v.get<std::string>() + "'");
    out.push_back(*name);
  }
  return out;
}

}  // namespace

std::string format_scored_line(const ScoredRecord& r) {
  Json obj;
  obj["question_id"] = r.features.question_id;
  obj["model_id"] = r.features.model_id;
  obj["sp_mode"] = r.sp_mode;
  obj["ref_mode"] = r.ref_mode;
  obj["features"] = values_to_json(r.features.values);
  Json unavailable = Json::array();
  for (FeatureName f : r.unavailable) unavailable.push_back(to_string(f));
  obj["unavailable"] = std::move(unavailable);
  if (!r.reference.empty()) obj["reference"] = values_to_json(r.reference);
  if (!r.features.negated.empty()) {
    Json negated = Json::array();
    for (FeatureName f : r.features.negated) negated.push_back(to_string(f));
    obj["negated"] = std::move(negated);
  }
  return obj.dump();
}

void write_scored(std::ostream& out, std::span<const ScoredRecord> records) {
  for (const ScoredRecord& r : records) out << format_scored_line(r) << '\n';
}

std::vector<ScoredRecord> read_scored(std::istream& in) {
  std::vector<ScoredRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json obj;
    try {
      obj = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(n, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(n, "expected a JSON object");
    ScoredRecord r;
    for (const char* key : {"question_id", "model_id"}) {
      if (!obj.contains(key) || !obj[key].is_string()) {
        throw ParseError(n, std::string("key '") + key + "' must be a string");
      }
    }
    r.features.question_id = obj["question_id"].get<std::string>();
    r.features.model_id = obj["model_id"].get<std::string>();
    for (const char* key : {"sp_mode", "ref_mode"}) {
      if (obj.contains(key) && !obj[key].is_string()) {
        throw ParseError(n, std::string("key '") + key + "' must be a string");
      }
    }
    if (obj.contains("sp_mode")) r.sp_mode = obj["sp_mode"].get<std::string>();
    if (obj.contains("ref_mode")) r.ref_mode = obj["ref_mode"].get<std::string>();
    if (!parse_sp_mode(r.sp_mode)) throw ParseError(n, "unknown sp_mode '" + r.sp_mode + "'");
    if (!parse_ref_mode(r.ref_mode)) throw ParseError(n, "unknown ref_mode '" + r.ref_mode + "'");
    if (!obj.contains("features")) throw ParseError(n, "missing required key 'features'");
    r.features.values = values_from_json(obj["features"], "features", n);
    if (obj.contains("unavailable")) r.unavailable = names_from_json(obj["unavailable"], "unavailable", n);
    if (obj.contains("reference")) r.reference = values_from_json(obj["reference"], "reference", n);
    if (obj.contains("negated")) {
      for (FeatureName f : names_from_json(obj["negated"], "negated", n)) r.features.negated.insert(f);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace selfeval
