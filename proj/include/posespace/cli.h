#pragma once

#include <string>
#include <vector>

namespace posespace {

constexpr const char* kToolVersion = "0.1.0";

// Runs one `posespace` command. Returns the process exit code: 0 success,
// 1 usage error, 2 data error, 3 numerical failure.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace posespace
