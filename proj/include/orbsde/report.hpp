#pragma once

// Solution CSV files: one row per (mode, node), 17 significant digits, LF line
// endings. Edge quantities (dK, dA, dM) sit on the row of the child node; the
// root row carries zeros.

#include <iosfwd>
#include <string>

#include "orbsde/oblique_system.hpp"

namespace orbsde {

inline constexpr const char* kSolutionHeader = "node_id,parent_id,time_index,time,mode,Y,dK,dA,dM";

/// %.17g, so that reading the text back recovers the exact double.
std::string format_double(double x);

void write_solution_csv(std::ostream& out, const EventTree& tree, const SystemSolution& solution);

/// Reads a file written by write_solution_csv for the same tree. The iteration
/// log is left empty. Throws ValidationError on malformed or mismatched input.
SystemSolution read_solution_csv(std::istream& in, const EventTree& tree, int modes);

}  // namespace orbsde
