#pragma once

#include <iosfwd>

namespace ps2::cli {

// Runs the ps2 command line. Returns the process exit code: 0 success,
// 1 usage error, 2 data error, 3 numerical failure. Failures also print one
// JSON line {"error": {"kind", "code", "message"}} to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ps2::cli
