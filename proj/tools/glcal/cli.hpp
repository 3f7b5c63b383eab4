#pragma once

namespace glcal::cli {

enum ExitCode : int { kSuccess = 0, kInternalError = 1, kUsageError = 2 };

/// Entry point shared by the `glcal` binary and its tests.
int run(int argc, const char* const* argv);

}  // namespace glcal::cli
