#pragma once

#include <string>

#include "gcz/error.hpp"

namespace gcz::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitThresholdExceeded = 3;

/// Distinct process exit status per error code: Usage maps to 2, every other
/// code to 10 + its enumerator value.
int exit_code_for(ErrorCode code);

/// Entry point of the `gcz` tool.
int run(int argc, char** argv);

}  // namespace gcz::cli
