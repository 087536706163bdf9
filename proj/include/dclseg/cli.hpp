#pragma once

#include <iosfwd>

namespace dclseg::cli {

/// Runs the command line in-process. Exit codes: 0 success, 1 runtime or
/// data error, 2 usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dclseg::cli
