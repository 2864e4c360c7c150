#pragma once

namespace rclarc {

// Entry point of the command-line tool. Exit codes: 0 success, 1 config
// error (including bad arguments), 2 runtime or numeric error.
int run_cli(int argc, const char* const* argv);

}  // namespace rclarc
