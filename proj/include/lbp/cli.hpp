#pragma once

#include <string>
#include <vector>

namespace lbp::cli {

// Exit codes, one per error category.
inline constexpr int kOk = 0;
inline constexpr int kError = 1;        // anything uncategorized
inline constexpr int kUsage = 2;        // unknown flag / bad invocation
inline constexpr int kMissingInput = 3; // input file not found
inline constexpr int kFormat = 4;       // malformed corpus or model file
inline constexpr int kMismatch = 5;     // model/dataset fingerprint mismatch

// Dispatches one subcommand; args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace lbp::cli
