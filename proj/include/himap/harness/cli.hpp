#pragma once

#include <string>
#include <vector>

namespace himap::harness {

/// Runs one CLI subcommand. `args` excludes the program name. Returns the
/// process exit code; errors print a one-line diagnostic on stderr.
int cli_run(const std::vector<std::string>& args);

}  // namespace himap::harness
