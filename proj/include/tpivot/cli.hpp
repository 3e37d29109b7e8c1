#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tpivot {

// Exit codes shared by every verb.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitBackend = 3,
    kExitIo = 4,
};

// Entry point for `tpivot <verb> ...`. Verbs: localize, transitions, scan,
// evaluate, sweep, validate, extract.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tpivot
