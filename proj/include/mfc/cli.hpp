#pragma once

#include <string>
#include <vector>

namespace mfc::cli {

// Runs one CLI invocation. Exit codes: 0 ok, 2 configuration error,
// 3 stale/missing prerequisite artifact, 4 runtime failure.
int run(const std::vector<std::string>& args);

}  // namespace mfc::cli
