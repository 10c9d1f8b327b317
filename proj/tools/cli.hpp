#pragma once

#include <string>
#include <vector>

namespace scssl::cli {

enum ExitCode : int { kOk = 0, kToleranceFailure = 1, kUsageError = 2, kRuntimeAbort = 3 };

/// Runs the command line `args` (args[0] is the program name). Output goes to
/// stdout/stderr; the return value is the process exit code.
int run(const std::vector<std::string>& args);

}  // namespace scssl::cli
