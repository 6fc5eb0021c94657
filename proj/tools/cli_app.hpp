#ifndef CVAE_TOOLS_CLI_APP_HPP
#define CVAE_TOOLS_CLI_APP_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace cvae::cli {

// Exit statuses besides 0 and CLI11's own parse-error codes.
inline constexpr int kExitFailure = 1;
inline constexpr int kExitMissingInput = 2;
inline constexpr int kExitTrainingAborted = 3;

/// Runs one command line (args excludes the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cvae::cli

#endif  // CVAE_TOOLS_CLI_APP_HPP
