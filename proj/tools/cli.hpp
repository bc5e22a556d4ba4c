#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace retro::cli {

// Runs one subcommand. `args` excludes the program name. Reports go to the
// --report path when given, otherwise to `out`; the exit code is 0 iff the
// report carries no error record.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace retro::cli
