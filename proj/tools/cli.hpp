#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace annulus::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs the command line `args` (without the program name). Diagnostics go
/// to `err`, progress to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace annulus::cli
