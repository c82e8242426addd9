#pragma once

#include <string>
#include <vector>

namespace voxsr {

// Entry point behind the `voxsr` binary. Returns the process exit code:
// 0 success, 1 stage failure (a JSON error object is printed to stdout),
// 2 usage error. Logs go to stderr; reports go to stdout or --out.
int run_command(const std::vector<std::string>& args);

}  // namespace voxsr
