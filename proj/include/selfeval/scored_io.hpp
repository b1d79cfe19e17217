#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "selfeval/features.hpp"

namespace selfeval {

// One line of the feature file written by `selfeval score`:
//
//   {"question_id": "...", "model_id": "...", "sp_mode": "mean_log",
//    "ref_mode": "as_written", "features": {"SentProb": -0.4, ...},
//    "unavailable": ["Unt-Exp", ...], "reference": {"Softmax-Ent": 0.3, ...}}
//
// "reference" holds the same features evaluated on the reference trace
// (SentProb there is the reference sentence probability) so calibration
// can be applied later without the traces.
struct ScoredRecord {
  FeatureVector features;
  std::vector<FeatureName> unavailable;
  std::map<FeatureName, double> reference;
  std::string sp_mode = "mean_log";
  std::string ref_mode = "as_written";

  bool operator==(const ScoredRecord&) const = default;
};

std::string format_scored_line(const ScoredRecord& record);
void write_scored(std::ostream& out, std::span<const ScoredRecord> records);

// Throws ParseError naming the line for malformed input or unknown feature
// names, ValidationError for non-finite values.
std::vector<ScoredRecord> read_scored(std::istream& in);

}  // namespace selfeval
