#pragma once

#include <iosfwd>

namespace patternid {

/// Entry point behind the `patternid` tool. Returns the process exit code:
/// 0 ok, 2 config error, 3 data error, 4 runtime abort.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace patternid
