#pragma once

namespace picotab {

// Entry point for the picotab command line tool. Returns the process exit
// code: 0 ok, 1 usage error, 2 data/validation error, 3 internal failure.
int run_cli(int argc, char** argv);

}  // namespace picotab
