#pragma once

#include <ostream>

namespace acmseg::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;  // runtime error, failed check
inline constexpr int kUsage = 2;    // bad flags or arguments

// Entry point shared by the executable and the tests. Every subcommand
// accepts --config FILE with key=value lines; explicit flags take precedence.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace acmseg::cli
