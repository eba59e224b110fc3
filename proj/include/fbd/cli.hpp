#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fbd {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2 };

// Runs the `fbd` command line. `args` excludes the program name. Normal output
// goes to `out`; logs and error messages go to `err`. The log level comes from
// the FBD_LOG_LEVEL environment variable (error, warn, info, debug).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fbd
