#pragma once

#include <iosfwd>

namespace dif {

/// Runs one `dif` subcommand. Returns 0 on success, 1 on usage errors, 2 on runtime failures.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace dif
