#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace macd::cli {

// Exit status: 0 success, 1 runtime failure, 2 usage error.
// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace macd::cli
