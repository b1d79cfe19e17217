#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "selfeval/trace.hpp"

namespace selfeval {

// Line-delimited JSON trace interchange, one Trace per line:
//
//   {"trace_id": "...", "question_id": "...", "model_id": "...",
//    "kind": "primary" | "ensemble_decoding" | "ensemble_prompt"
//            | "reference_forced" | "illustrated",
//    "steps": [{"token": "...", "logprob": -0.1, "entropy": 0.4}, ...],
//    "attention": {"num_layers": L, "num_heads": H, "values": [[...], ...]},
//    "vocab_size": V, "prompt_variant_id": "..."}
//
// attention, vocab_size and prompt_variant_id are optional. Unknown top-level
// keys are kept in Trace::extra. Doubles are written in shortest round-trip
// form, so write -> read is bit-exact.

// Parses one line into a Trace. Does not check invariants.
Trace parse_trace_line(const std::string& line, std::size_t line_number);

std::string format_trace_line(const Trace& trace);

// Streams traces one line at a time. Blank lines are skipped. Each trace is
// validated on its own before it is returned.
class TraceReader {
 public:
  explicit TraceReader(std::istream& in) : in_(in) {}

  // Returns false at end of stream. Throws ParseError / ValidationError.
  bool next(Trace& out);

  std::size_t line_number() const noexcept { return line_; }

 private:
  std::istream& in_;
  std::string buffer_;
  std::size_t line_ = 0;
};

// Reads every trace and groups them by (question_id, model_id) in order of
// first appearance. Throws ParseError for malformed lines and
// ValidationError for invariant violations, duplicate slots, or a group
// without a primary/illustrated trace.
std::vector<ResponseRecord> read_traces(std::istream& in);

// Writes primary, then ensemble members, then reference for each record.
void write_traces(std::ostream& out, std::span<const ResponseRecord> records);

}  // namespace selfeval
