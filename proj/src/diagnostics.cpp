#include "orbsde/diagnostics.hpp"

#include <sstream>

namespace orbsde {

std::string ValidationReport::summary(std::size_t max_lines) const {
  std::ostringstream out;
  out << violations.size() << " violation(s)";
  std::size_t shown = 0;
  for (const auto& v : violations) {
    if (shown++ == max_lines) {
      out << "\n  ...";
      break;
    }
    out << "\n  [" << v.code << "] " << v.message;
    if (v.node) out << " (node " << *v.node;
    if (v.node && v.time) out << ", t=" << *v.time;
    if (v.node) out << ")";
  }
  return out.str();
}

ValidationError::ValidationError(ValidationReport report)
    : Error("validation failed: " + report.summary(5)), report_(std::move(report)) {}

}  // namespace orbsde
