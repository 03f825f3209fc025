#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace unis::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kAudit = 4 };

/// Runs one command. `args` excludes the program name. JSON-lines records go
/// to `out`, human-readable summaries and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace unis::cli
