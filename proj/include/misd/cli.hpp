#pragma once

#include <iosfwd>

namespace misd {

/// Entry point of the `misd` tool. Returns the process exit status:
/// 0 on success, 1 when a check (gradcheck) fails, 2 on any error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace misd
