#include "orbsde/report.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <vector>

namespace orbsde {

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& message) {
  ValidationReport report;
  report.add({"solution-csv", "line " + std::to_string(line) + ": " + message, {}, {}, {}});
  throw ValidationError(std::move(report));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  // strtod rather than stod: subnormals written by %.17g must read back
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) fail(line, "bad number '" + s + "'");
  return v;
}

long long parse_int(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) fail(line, "bad integer '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    fail(line, "bad integer '" + s + "'");
  }
}

}  // namespace

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_solution_csv(std::ostream& out, const EventTree& tree, const SystemSolution& solution) {
  out << kSolutionHeader << '\n';
  for (std::size_t j = 0; j < solution.modes.size(); ++j) {
    const auto& s = solution.modes[j];
    for (NodeId u = 0; u < tree.size(); ++u) {
      const auto parent = tree.parent(u);
      out << u << ',' << (parent ? std::to_string(*parent) : std::string()) << ',' << tree.time(u) << ','
          << format_double(tree.physical_time(u)) << ',' << j + 1 << ',' << format_double(s.y[u]) << ','
          << format_double(parent ? s.dk.edge(u) : 0.0) << ',' << format_double(parent ? s.da.edge(u) : 0.0) << ','
          << format_double(parent ? s.dm[u] : 0.0) << '\n';
    }
  }
}

SystemSolution read_solution_csv(std::istream& in, const EventTree& tree, int modes) {
  const auto n = tree.size();
  SystemSolution out;
  for (int j = 0; j < modes; ++j) {
    out.modes.push_back({AdaptedProcess(n, std::numeric_limits<double>::quiet_NaN()), AdaptedProcess(n),
                         PredictableIncrements(n), PredictableIncrements(n)});
  }
  std::vector<char> seen(n * static_cast<std::size_t>(modes), 0);

  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) fail(line_no, "empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSolutionHeader) fail(line_no, "unexpected header '" + line + "'");
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 9) fail(line_no, "expected 9 fields, got " + std::to_string(f.size()));
    const long long id = parse_int(f[0], line_no);
    if (id < 0 || static_cast<std::size_t>(id) >= n) fail(line_no, "node id out of range");
    const auto u = static_cast<NodeId>(id);
    const auto parent = tree.parent(u);
    if ((parent ? std::to_string(*parent) : std::string()) != f[1]) fail(line_no, "parent does not match the tree");
    if (parse_int(f[2], line_no) != tree.time(u)) fail(line_no, "time index does not match the tree");
    const long long mode = parse_int(f[4], line_no);
    if (mode < 1 || mode > modes) fail(line_no, "mode out of range");
    const auto j = static_cast<std::size_t>(mode - 1);
    auto& flag = seen[j * n + u];
    if (flag) fail(line_no, "duplicate row");
    flag = 1;
    auto& s = out.modes[j];
    s.y[u] = parse_double(f[5], line_no);
    s.dk.edge(u) = parse_double(f[6], line_no);
    s.da.edge(u) = parse_double(f[7], line_no);
    s.dm[u] = parse_double(f[8], line_no);
  }
  for (std::size_t k = 0; k < seen.size(); ++k) {
    if (!seen[k]) {
      fail(line_no, "missing row for node " + std::to_string(k % n) + ", mode " + std::to_string(k / n + 1));
    }
  }
  return out;
}

}  // namespace orbsde
