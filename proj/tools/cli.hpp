#pragma once

#include <iosfwd>

namespace afb {

/// Entry point of the `afb` tool. Returns the process exit code:
/// 0 ok, 2 usage, 3 io, 4 format, 5 numeric failure.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

} // namespace afb
