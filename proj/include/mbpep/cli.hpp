#pragma once

#include <iosfwd>

namespace mbpep::cli {

enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kDataError = 3,
    kRuntimeError = 4,
};

// Entry point for the `mbpep` tool: gen-data, train, eval, bench.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace mbpep::cli
