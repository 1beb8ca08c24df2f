#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace deepmix::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;    ///< bad command line or config
inline constexpr int kExitRuntime = 2;  ///< I/O, format or numeric failure

inline constexpr int kConfigVersion = 1;
inline constexpr int kCsvSchemaVersion = 1;

/// Runs one command line (program name excluded). Diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace deepmix::cli
