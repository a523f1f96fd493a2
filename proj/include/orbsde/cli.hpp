#pragma once

// The `orbsde` command line:
//
//   orbsde <solve|verify|sweep-penalization|brute-force> <scenario.json>
//          [--tol F] [--max-sweeps N] [--out DIR] [--solution FILE] [--seed N]
//
// Exit status: 0 success, 1 usage or I/O error, 2 validation failure,
// 3 solver non-convergence, 4 oracle mismatch. Every nonzero exit prints a JSON
// diagnostic on `out` and also writes it to DIR/diagnostic.json when possible.

#include <iosfwd>

namespace orbsde {

namespace exit_status {
inline constexpr int ok = 0;
inline constexpr int io = 1;
inline constexpr int validation = 2;
inline constexpr int convergence = 3;
inline constexpr int oracle = 4;
}  // namespace exit_status

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace orbsde
