#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dvn::cli {

enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kInvalidConfig = 2 };

/// Runs one `dvn` invocation. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dvn::cli
