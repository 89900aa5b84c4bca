#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace factordiff::cli {

/// Runs one subcommand. `args` excludes the program name. Returns 0 on
/// success, 2 for bad flags and 1 for runtime failures; failures print
/// "error: <category>: <message>" on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, const char* const* argv);

}  // namespace factordiff::cli
