#pragma once

#include <string>
#include <vector>

namespace cascade::cli {

enum ExitCode : int { ok = 0, failure = 1, config_error = 2, data_error = 3, numerical_error = 4 };

/// Runs the command line (args[0] is the program name) and returns the exit
/// code. Diagnostics go to stderr, summaries to stdout.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace cascade::cli
