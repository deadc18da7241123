#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace voxattn {

// Command-line dispatcher over the subcommands
//   synth | train | eval | cam | params | gradcheck
// with exit codes 0 success, 2 configuration/usage error, 3 data error,
// 4 numeric failure, 5 gradient-check failure. `args` excludes the program
// name. All diagnostics go to `err`, regular output to `out`; nothing is
// written to the real stdio streams, so the dispatcher is callable in-process.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace voxattn
