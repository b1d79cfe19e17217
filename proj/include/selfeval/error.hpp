#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace selfeval {

// Base of every error raised by the library. The CLI maps the concrete
// type onto its exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text (bad JSON, missing or mistyped key).
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input that breaks a data invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// An operation was called outside its domain (empty trace, wrong kind, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// A requested feature has no supporting data in the record (no ensemble,
// no attention grid, no reference). Distinct from invalid data.
class FeatureUnavailable : public Error {
 public:
  using Error::Error;
};

// A statistic is mathematically undefined for the input, e.g. a correlation
// against a constant series.
class UndefinedStatistic : public Error {
 public:
  using Error::Error;
};

}  // namespace selfeval
