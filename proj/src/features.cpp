#include "selfeval/features.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <utility>

#include "selfeval/error.hpp"

namespace selfeval {

namespace {

constexpr std::array<std::pair<Feature, std::string_view>, 8> kFeatureNames{{
    {Feature::SentProb, "SentProb"},
    {Feature::SoftmaxEnt, "Softmax-Ent"},
    {Feature::SoftmaxVar, "Softmax-Var"},
    {Feature::UntExp, "Unt-Exp"},
    {Feature::UntVar, "Unt-Var"},
    {Feature::AttnEntMin, "AttnEnt-Min"},
    {Feature::AttnEntAvg, "AttnEnt-Avg"},
    {Feature::SoftmaxCombo, "Softmax-combo"},
}};

constexpr std::string_view kCalibSuffix = "-calib";

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

// Welford's single-pass mean / population variance. Exactly zero variance
// for a constant sequence.
class RunningMoments {
 public:
  void add(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }
  double mean() const { return mean_; }
  double population_variance() const { return n_ == 0 ? 0.0 : std::max(0.0, m2_ / static_cast<double>(n_)); }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

void require_steps(const Trace& trace, const char* op) {
  if (trace.steps.empty()) {
    throw PreconditionError(std::string(op) + ": trace '" + trace.trace_id + "' has no steps");
  }
}

void require_ensemble(const ResponseRecord& record, const char* op) {
  if (record.ensemble.empty()) {
    throw FeatureUnavailable(std::string(op) + ": question '" + record.question_id + "' has no ensemble traces");
  }
}

RunningMoments ensemble_moments(const ResponseRecord& record, SpMode mode) {
  RunningMoments m;
  for (const Trace& t : record.ensemble) m.add(sent_prob(t, mode));
  return m;
}

void require_grid(const AttentionEntropyGrid& grid, const char* op) {
  if (grid.values.empty()) throw PreconditionError(std::string(op) + ": empty attention grid");
  for (const auto& row : grid.values) {
    if (row.empty() || row.size() != grid.values.front().size()) {
      throw PreconditionError(std::string(op) + ": attention grid is not rectangular");
    }
  }
}

void set_checked(FeatureVector& v, Feature f, double value) {
  if (!std::isfinite(value)) {
    throw PreconditionError("feature " + to_string(f) + " is not finite for question '" + v.question_id + "'");
  }
  v.values[FeatureName{f, false}] = value;
}

}  // namespace

std::string to_string(Feature f) {
  for (const auto& [k, name] : kFeatureNames) {
    if (k == f) return std::string(name);
  }
  return "unknown";
}

std::string to_string(FeatureName name) {
  std::string s = to_string(name.base);
  if (name.calibrated) s += kCalibSuffix;
  return s;
}

std::optional<FeatureName> parse_feature_name(std::string_view text) {
  FeatureName out;
  if (text.size() > kCalibSuffix.size() && text.ends_with(kCalibSuffix)) {
    out.calibrated = true;
    text.remove_suffix(kCalibSuffix.size());
  }
  for (const auto& [k, name] : kFeatureNames) {
    if (name == text) {
      out.base = k;
      return out;
    }
  }
  return std::nullopt;
}

const std::vector<Feature>& per_record_features() {
  static const std::vector<Feature> kAll{Feature::SentProb, Feature::SoftmaxEnt, Feature::SoftmaxVar,
                                        Feature::UntExp,   Feature::UntVar,     Feature::AttnEntMin,
                                        Feature::AttnEntAvg};
  return kAll;
}

std::string_view to_string(SpMode mode) {
  return mode == SpMode::product_log ? "product_log" : "mean_log";
}

std::optional<SpMode> parse_sp_mode(std::string_view text) {
  if (text == "product_log") return SpMode::product_log;
  if (text == "mean_log") return SpMode::mean_log;
  return std::nullopt;
}

std::string_view to_string(VarOperand op) {
  return op == VarOperand::log_prob ? "logprob" : "prob";
}

std::optional<VarOperand> parse_var_operand(std::string_view text) {
  if (text == "logprob") return VarOperand::log_prob;
  if (text == "prob") return VarOperand::prob;
  return std::nullopt;
}

double sent_prob(const Trace& trace, SpMode mode) {
  require_steps(trace, "sent_prob");
  CompensatedSum sum;
  for (const StepRecord& s : trace.steps) sum.add(s.token_logprob);
  const double total = std::min(0.0, sum.value());
  return mode == SpMode::product_log ? total : total / static_cast<double>(trace.steps.size());
}

double softmax_ent(const Trace& trace) {
  require_steps(trace, "softmax_ent");
  CompensatedSum sum;
  for (const StepRecord& s : trace.steps) sum.add(s.step_entropy);
  return std::max(0.0, sum.value() / static_cast<double>(trace.steps.size()));
}

double softmax_var(const Trace& trace, VarOperand operand) {
  require_steps(trace, "softmax_var");
  RunningMoments m;
  for (const StepRecord& s : trace.steps) {
    m.add(operand == VarOperand::log_prob ? s.token_logprob : std::exp(s.token_logprob));
  }
  return m.population_variance();
}

double uncertainty_exp(const ResponseRecord& record, SpMode mode) {
  require_ensemble(record, "uncertainty_exp");
  return ensemble_moments(record, mode).mean();
}

double uncertainty_var(const ResponseRecord& record, SpMode mode) {
  require_ensemble(record, "uncertainty_var");
  return ensemble_moments(record, mode).population_variance();
}

double attn_entropy(const AttentionMatrix& weights) {
  if (weights.rows == 0 || weights.cols == 0) {
    throw PreconditionError("attn_entropy: attention block must have at least one row and column");
  }
  if (weights.weights.size() != weights.rows * weights.cols) {
    throw PreconditionError("attn_entropy: weight buffer does not match rows x cols");
  }
  CompensatedSum sum;
  for (std::size_t j = 0; j < weights.rows; ++j) {
    for (std::size_t i = 0; i < weights.cols; ++i) {
      const double a = weights.at(j, i);
      if (!(a >= 0.0 && a <= 1.0)) {
        throw ValidationError("attn_entropy: weight at (" + std::to_string(j) + ", " + std::to_string(i) +
                              ") is outside [0, 1]");
      }
      if (a > 0.0) sum.add(a * std::log(a));
    }
  }
  return std::max(0.0, -sum.value() / static_cast<double>(weights.cols));
}

double attn_ent_min(const AttentionEntropyGrid& grid) {
  require_grid(grid, "attn_ent_min");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& row : grid.values) {
    for (double v : row) best = std::min(best, v);
  }
  return best;
}

double attn_ent_avg(const AttentionEntropyGrid& grid) {
  require_grid(grid, "attn_ent_avg");
  CompensatedSum sum;
  std::size_t count = 0;
  for (const auto& row : grid.values) {
    for (double v : row) sum.add(v);
    count += row.size();
  }
  return sum.value() / static_cast<double>(count);
}

FeatureResult compute_features(const ResponseRecord& record, const FeatureConfig& config) {
  FeatureResult result;
  result.vector.question_id = record.question_id;
  result.vector.model_id = record.model_id;
  FeatureVector& v = result.vector;
  const Trace& response = record.primary;

  for (Feature f : config.requested) {
    switch (f) {
      case Feature::SentProb:
        set_checked(v, f, sent_prob(response, config.sp_mode));
        break;
      case Feature::SoftmaxEnt:
        set_checked(v, f, softmax_ent(response));
        break;
      case Feature::SoftmaxVar:
        set_checked(v, f, softmax_var(response, config.var_operand));
        break;
      case Feature::UntExp:
      case Feature::UntVar:
        if (record.ensemble.empty()) {
          result.unavailable.push_back({f, false});
        } else {
          set_checked(v, f,
                      f == Feature::UntExp ? uncertainty_exp(record, config.sp_mode)
                                           : uncertainty_var(record, config.sp_mode));
        }
        break;
      case Feature::AttnEntMin:
      case Feature::AttnEntAvg:
        if (!response.attention) {
          result.unavailable.push_back({f, false});
        } else {
          set_checked(v, f, f == Feature::AttnEntMin ? attn_ent_min(*response.attention)
                                                     : attn_ent_avg(*response.attention));
        }
        break;
      case Feature::SoftmaxCombo:
        throw PreconditionError("Softmax-combo is a dataset-level feature; use add_combo");
    }
  }
  return result;
}

std::vector<FeatureResult> compute_features(std::span<const ResponseRecord> records, const FeatureConfig& config,
                                            unsigned threads) {
  std::vector<FeatureResult> out(records.size());
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(records.size())));
  if (threads <= 1) {
    for (std::size_t i = 0; i < records.size(); ++i) out[i] = compute_features(records[i], config);
    return out;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::size_t first_error_index = records.size();
  std::mutex error_mutex;
  {
    std::vector<std::jthread> workers;
    workers.reserve(threads);
    for (unsigned w = 0; w < threads; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < records.size(); i = next++) {
          try {
            out[i] = compute_features(records[i], config);
          } catch (...) {
            // Report the error of the earliest record, as a sequential run would.
            std::lock_guard lock(error_mutex);
            if (i < first_error_index) {
              first_error_index = i;
              first_error = std::current_exception();
            }
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

}  // namespace selfeval
