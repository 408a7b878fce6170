#pragma once

#include <iosfwd>

namespace tabrec::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataFormat = 2, kRuntime = 3 };

/// Subcommands: gen-data, train, infer, eval. Results go to `out`; progress
/// and the one-line JSON error record go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tabrec::cli
