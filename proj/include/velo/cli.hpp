#ifndef VELO_CLI_HPP
#define VELO_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace velo {

inline constexpr const char* kVersion = "0.1.0";

/**
 * Command-line entry point. `args` excludes the program name. Returns 0 on
 * success; usage errors and module errors print a message to `err` and
 * return non-zero.
 */
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace velo

#endif
