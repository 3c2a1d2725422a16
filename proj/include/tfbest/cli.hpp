#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tfbest::cli {

// Exit codes of run().
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataError = 2;
inline constexpr int kNumericError = 3;

// Runs one subcommand: synth, prepare, train, eval, report or gradcheck.
// args excludes the program name. Failures print one "error: <kind>: <reason>"
// line to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tfbest::cli
