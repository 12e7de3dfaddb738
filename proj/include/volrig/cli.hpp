#pragma once

#include <string>
#include <vector>

namespace volrig::cli {

/// Entry point for `volrig <subcommand> ...`.
/// Exit codes: 0 success, 2 usage or config error, 3 I/O error,
/// 4 numerical failure.
int run(const std::vector<std::string>& args);

}  // namespace volrig::cli
