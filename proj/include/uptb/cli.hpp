#pragma once

// Batch front end: datagen | train | attack | evaluate.

#include <ostream>
#include <string>
#include <vector>

namespace uptb {

// Runs one command. `args` excludes the program name. Human-readable
// progress goes to `out`; with --json, `out` receives one JSON summary and
// errors are written to `err` as {"error": {"kind", "message"}}.
// Returns 0 iff the command completed without error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace uptb
