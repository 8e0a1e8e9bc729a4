#pragma once

// Command-line front end: analyze | regularize | ocp | mpc.

#include <ostream>

namespace daempc {

// Exit codes.
inline constexpr int kExitOk = 0;
/// Unreadable or inconsistent input, bad arguments, or a system outside the
/// supported class.
inline constexpr int kExitRejected = 2;
/// Numerical failure in the pipeline, including lost feasibility.
inline constexpr int kExitRuntime = 3;

int RunCli(int argc, const char* const* argv, std::ostream& out,
           std::ostream& err);

}  // namespace daempc
