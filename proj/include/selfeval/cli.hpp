#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace selfeval::cli {

// Stable exit-code contract of the `selfeval` tool.
enum ExitCode : int {
  kSuccess = 0,
  kUsage = 1,
  kDataValidation = 2,
  kUndefinedStatistic = 3,
};

// Runs the tool with `args` (args[0] is the program name). Output that would
// go to stdout goes to `out` unless --output names a file.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace selfeval::cli
