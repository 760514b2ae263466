#pragma once

#include <string>
#include <vector>

namespace nedcal::cli {

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kInternal = 1;
inline constexpr int kValidation = 2;
inline constexpr int kTuning = 3;
inline constexpr int kLabelMismatch = 4;

// Runs one command line (args[0] is the program name). Never throws; errors
// are reported on stderr and mapped to an exit status.
int run(const std::vector<std::string>& args);

}  // namespace nedcal::cli
