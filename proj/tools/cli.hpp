#pragma once

#include <iosfwd>

namespace viewset::cli {

enum ExitCode : int { kOk = 0, kUsageError = 1, kRuntimeError = 2 };

/// Entry point shared by the executable and the tests. Diagnostics go to `err` as one line.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace viewset::cli
