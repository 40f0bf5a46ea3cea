#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace verdict {

/// Full command line including the program name. Returns the process exit code:
/// 0 success, 2 usage or validation error, 1 internal error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Replaces `--config FILE` with the file's key=value pairs, placed ahead of the
/// explicit flags so the flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

}  // namespace verdict
