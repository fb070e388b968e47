#pragma once

// Command-line front end. Exit codes: 0 success, 1 runtime failure (including a failed
// gradient check), 2 usage error, 3 configuration error. Failures print a single line
// "sfpnet: error: <kind>: <message>" to the error stream, followed by usage text for
// kind "usage".

#include <ostream>
#include <string>
#include <vector>

namespace sfpnet {

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

} // namespace sfpnet
