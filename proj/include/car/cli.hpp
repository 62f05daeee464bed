#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace car::cli {

// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kArgumentError = 2,
  kIoError = 3,
  kNumericAbort = 4,
  kInvalidRegime = 5,
};

// Entry point for the `car` tool. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace car::cli
