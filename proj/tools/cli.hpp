#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace negdist::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Runs one `negdist` command. `args` excludes the program name. Errors are
/// reported as a single `negdist: error[<code>]: <message>` line on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace negdist::cli
