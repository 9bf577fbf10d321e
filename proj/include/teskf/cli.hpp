#pragma once

namespace teskf {

// Subcommand dispatch for the teskf tool. Exit codes: 0 success, 1 input
// validation failure, 2 observability-dimension mismatch, 64 usage error.
int cli_main(int argc, const char *const *argv);

}  // namespace teskf
