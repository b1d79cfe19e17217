#pragma once

#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfeval/features.hpp"
#include "selfeval/trace.hpp"

namespace selfeval {

// How the reference-side sentence probability is computed.
//   as_written: -(1/T) * sum_t p_t ln p_t, with p_t = exp(logprob_t)
//   mean_log:   (1/T) * sum_t ln p_t
enum class RefMode { as_written, mean_log };
std::string_view to_string(RefMode mode);
std::optional<RefMode> parse_ref_mode(std::string_view text);

// Requires reference.kind == reference_forced and T >= 1.
double sent_prob_ref(const Trace& reference, RefMode mode);

struct CalibratedScore {
  double raw = 0.0;
  double reference_value = 0.0;
  double calibrated = 0.0;  // raw - reference_value
};

// Throws PreconditionError on non-finite input.
CalibratedScore calibrate(double response_value, double reference_value);

// The requested features evaluated on the record's reference trace: SentProb
// is replaced by sent_prob_ref, attention features need a grid on the
// reference. Features with no reference-side counterpart are skipped. Empty
// when the record has no reference.
std::map<FeatureName, double> reference_features(const ResponseRecord& record, const FeatureConfig& config,
                                                 RefMode ref_mode);

// Adds "<name>-calib" = value - reference value for SentProb, Softmax-Ent,
// Softmax-Var and the attention features. Those with no reference value
// are appended to `unavailable` in calibrated form. Unt-Exp and Unt-Var
// have no calibrated form and are left alone.
void apply_calibration(FeatureVector& vector, const std::map<FeatureName, double>& reference_values,
                       std::vector<FeatureName>& unavailable);

// z(a) + z(b) elementwise, z standardizing with the population standard
// deviation. Requires equal lengths n >= 2 and nonzero spread in both lists
// (UndefinedStatistic naming the degenerate side otherwise).
std::vector<double> combo(std::span<const double> scores_a, std::span<const double> scores_b,
                          std::string_view name_a = "a", std::string_view name_b = "b");

// Computes Softmax-combo (or Softmax-combo-calib) over every vector that
// carries both Softmax-Ent and Softmax-Var in the same form, and stores it.
// Returns the number of vectors that received the feature (0 when none
// carries the pair).
std::size_t add_combo(std::span<FeatureVector> vectors, bool calibrated);

enum class Orientation { higher_is_better, lower_is_better };
std::string_view to_string(Orientation o);

// Sign convention per feature. A "-calib" name falls back to its base
// feature when it has no entry of its own.
class OrientationMap {
 public:
  OrientationMap() = default;

  // SentProb, Unt-Exp, Softmax-combo: higher is better; entropies and
  // variances: lower is better.
  static OrientationMap defaults();

  // Plain-text "Name = higher|lower" lines ('#' starts a comment). Entries
  // override the current map.
  void load(std::istream& in);

  void set(FeatureName name, Orientation o) { entries_[name] = o; }
  std::optional<Orientation> lookup(FeatureName name) const;
  const std::map<FeatureName, Orientation>& entries() const { return entries_; }

  bool operator==(const OrientationMap&) const = default;

 private:
  std::map<FeatureName, Orientation> entries_;
};

// Negates lower_is_better features and toggles them in `negated`. Throws
// ValidationError for a feature the map does not cover.
FeatureVector orient(const FeatureVector& vector, const OrientationMap& map);

}  // namespace selfeval
