#pragma once

#include <string>
#include <vector>

namespace segprobe::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

int run(int argc, char** argv);
/// `args` excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace segprobe::cli
