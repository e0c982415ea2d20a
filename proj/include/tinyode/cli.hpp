#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tinyode::cli {

// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,         // unexpected runtime error
  kUsage = 2,           // bad flags or flag combination
  kMissingInput = 3,    // weights or image file does not exist
  kBadInput = 4,        // corrupt container, undecodable image, wrong size
  kVerifyFailed = 5,    // verify found a LUT violation or exceeded tolerance
};

// Runs the command line `args` (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tinyode::cli
