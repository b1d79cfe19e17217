#include "selfeval/reference.hpp"

#include <cmath>
#include <string>

#include "selfeval/error.hpp"

namespace selfeval {

namespace {

// Uncertainty features are ensemble statistics with no reference-side value.
bool has_calibrated_form(Feature f) {
  return f != Feature::UntExp && f != Feature::UntVar && f != Feature::SoftmaxCombo;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

struct Standardized {
  double mean = 0.0;
  double sd = 0.0;
};

Standardized standardize_params(std::span<const double> xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  Standardized s;
  s.mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(ss / static_cast<double>(xs.size()));
  return s;
}

}  // namespace

std::string_view to_string(RefMode mode) {
  return mode == RefMode::as_written ? "as_written" : "mean_log";
}

std::optional<RefMode> parse_ref_mode(std::string_view text) {
  if (text == "as_written") return RefMode::as_written;
  if (text == "mean_log") return RefMode::mean_log;
  return std::nullopt;
}

double sent_prob_ref(const Trace& reference, RefMode mode) {
  if (reference.kind != TraceKind::reference_forced) {
    throw PreconditionError("sent_prob_ref: trace '" + reference.trace_id + "' has kind " +
                            std::string(to_string(reference.kind)) + ", expected reference_forced");
  }
  if (reference.steps.empty()) {
    throw PreconditionError("sent_prob_ref: trace '" + reference.trace_id + "' has no steps");
  }
  if (mode == RefMode::mean_log) return sent_prob(reference, SpMode::mean_log);
  double sum = 0.0;
  for (const StepRecord& s : reference.steps) {
    // p ln p with p = exp(logprob); the logprob == 0 step contributes 1 * 0.
    sum += std::exp(s.token_logprob) * s.token_logprob;
  }
  return -sum / static_cast<double>(reference.steps.size());
}

CalibratedScore calibrate(double response_value, double reference_value) {
  if (!std::isfinite(response_value) || !std::isfinite(reference_value)) {
    throw PreconditionError("calibrate: inputs must be finite");
  }
  return {response_value, reference_value, response_value - reference_value};
}

std::map<FeatureName, double> reference_features(const ResponseRecord& record, const FeatureConfig& config,
                                                 RefMode ref_mode) {
  std::map<FeatureName, double> out;
  if (!record.reference) return out;
  const Trace& ref = *record.reference;
  for (Feature f : config.requested) {
    switch (f) {
      case Feature::SentProb:
        out[{f, false}] = sent_prob_ref(ref, ref_mode);
        break;
      case Feature::SoftmaxEnt:
        out[{f, false}] = softmax_ent(ref);
        break;
      case Feature::SoftmaxVar:
        out[{f, false}] = softmax_var(ref, config.var_operand);
        break;
      case Feature::AttnEntMin:
        if (ref.attention) out[{f, false}] = attn_ent_min(*ref.attention);
        break;
      case Feature::AttnEntAvg:
        if (ref.attention) out[{f, false}] = attn_ent_avg(*ref.attention);
        break;
      default:
        break;
    }
  }
  return out;
}

void apply_calibration(FeatureVector& vector, const std::map<FeatureName, double>& reference_values,
                       std::vector<FeatureName>& unavailable) {
  std::map<FeatureName, double> added;
  for (const auto& [name, value] : vector.values) {
    if (name.calibrated || !has_calibrated_form(name.base)) continue;
    const FeatureName calib{name.base, true};
    auto ref = reference_values.find(name);
    if (ref == reference_values.end()) {
      unavailable.push_back(calib);
      continue;
    }
    added[calib] = calibrate(value, ref->second).calibrated;
  }
  vector.values.insert(added.begin(), added.end());
}

std::vector<double> combo(std::span<const double> scores_a, std::span<const double> scores_b,
                          std::string_view name_a, std::string_view name_b) {
  if (scores_a.size() != scores_b.size()) {
    throw PreconditionError("combo: score lists differ in length (" + std::to_string(scores_a.size()) + " vs " +
                            std::to_string(scores_b.size()) + ")");
  }
  if (scores_a.size() < 2) throw UndefinedStatistic("combo: needs at least 2 scores");
  const Standardized za = standardize_params(scores_a);
  const Standardized zb = standardize_params(scores_b);
  if (!(za.sd > 0.0)) throw UndefinedStatistic("combo: " + std::string(name_a) + " has zero spread");
  if (!(zb.sd > 0.0)) throw UndefinedStatistic("combo: " + std::string(name_b) + " has zero spread");

  std::vector<double> out(scores_a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (scores_a[i] - za.mean) / za.sd + (scores_b[i] - zb.mean) / zb.sd;
  }
  return out;
}

std::size_t add_combo(std::span<FeatureVector> vectors, bool calibrated) {
  const FeatureName ent{Feature::SoftmaxEnt, calibrated};
  const FeatureName var{Feature::SoftmaxVar, calibrated};
  std::vector<std::size_t> members;
  std::vector<double> a;
  std::vector<double> b;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    auto ia = vectors[i].values.find(ent);
    auto ib = vectors[i].values.find(var);
    if (ia == vectors[i].values.end() || ib == vectors[i].values.end()) continue;
    members.push_back(i);
    a.push_back(ia->second);
    b.push_back(ib->second);
  }
  if (members.empty()) return 0;
  const std::vector<double> z = combo(a, b, to_string(ent), to_string(var));
  const FeatureName out{Feature::SoftmaxCombo, calibrated};
  for (std::size_t k = 0; k < members.size(); ++k) vectors[members[k]].values[out] = z[k];
  return members.size();
}

std::string_view to_string(Orientation o) {
  return o == Orientation::higher_is_better ? "higher_is_better" : "lower_is_better";
}

OrientationMap OrientationMap::defaults() {
  OrientationMap m;
  m.set({Feature::SentProb, false}, Orientation::higher_is_better);
  m.set({Feature::SoftmaxEnt, false}, Orientation::lower_is_better);
  m.set({Feature::SoftmaxVar, false}, Orientation::lower_is_better);
  m.set({Feature::UntExp, false}, Orientation::higher_is_better);
  m.set({Feature::UntVar, false}, Orientation::lower_is_better);
  m.set({Feature::AttnEntMin, false}, Orientation::lower_is_better);
  m.set({Feature::AttnEntAvg, false}, Orientation::lower_is_better);
  // combo is built from already-oriented inputs.
  m.set({Feature::SoftmaxCombo, false}, Orientation::higher_is_better);
  return m;
}

void OrientationMap::load(std::istream& in) {
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError(line_number, "expected 'Feature = higher|lower'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    auto name = parse_feature_name(key);
    if (!name) throw ParseError(line_number, "unknown feature '" + key + "'");
    if (value == "higher" || value == "higher_is_better") {
      set(*name, Orientation::higher_is_better);
    } else if (value == "lower" || value == "lower_is_better") {
      set(*name, Orientation::lower_is_better);
    } else {
      throw ParseError(line_number, "orientation must be 'higher' or 'lower', got '" + value + "'");
    }
  }
}

std::optional<Orientation> OrientationMap::lookup(FeatureName name) const {
  if (auto it = entries_.find(name); it != entries_.end()) return it->second;
  if (name.calibrated) {
    if (auto it = entries_.find({name.base, false}); it != entries_.end()) return it->second;
  }
  return std::nullopt;
}

FeatureVector orient(const FeatureVector& vector, const OrientationMap& map) {
  FeatureVector out = vector;
  for (auto& [name, value] : out.values) {
    auto o = map.lookup(name);
    if (!o) throw ValidationError("orientation map does not cover feature " + to_string(name));
    if (*o == Orientation::lower_is_better) {
      value = -value;
      if (!out.negated.erase(name)) out.negated.insert(name);
    }
  }
  return out;
}

}  // namespace selfeval
