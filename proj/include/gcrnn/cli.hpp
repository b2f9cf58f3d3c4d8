// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gcrnn {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitRuntime = 3 };

/// Runs the command line (args exclude the program name). Never throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Reads `key=value` lines (blank lines and '#' comments skipped) and turns
/// them into `--key=value` arguments.
std::vector<std::string> config_file_args(const std::string& path);

}  // namespace gcrnn
