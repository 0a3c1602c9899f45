#pragma once

#include <string>
#include <vector>

namespace posmed::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitInternal = 3,
};

// Parses argv (argv[0] is the program name) and runs one subcommand.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

// Closest known flag to `unknown` within edit distance 3, or "".
std::string suggest_flag(const std::string& unknown, const std::vector<std::string>& known);

}  // namespace posmed::cli
