#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dear::cli {

// Exit codes: 0 success, 1 usage error, 2 runtime failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace dear::cli
