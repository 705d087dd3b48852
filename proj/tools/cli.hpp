#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace objtx::cli {

/// Exit codes: 0 success, 1 runtime failure (including a failed gradient
/// check), 2 bad invocation.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace objtx::cli
