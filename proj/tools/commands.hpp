#pragma once

namespace zoforge::cli {

/// Exit codes of every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitDivergence = 2;

/// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv);

}  // namespace zoforge::cli
