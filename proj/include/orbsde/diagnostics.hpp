#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace orbsde {

using NodeId = std::size_t;

/// One failed check, located on the tree where possible.
struct Violation {
  std::string code;
  std::string message;
  std::optional<NodeId> node;
  std::optional<int> time;
  std::optional<int> mode;  // 0-based internally
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::vector<std::string> notes;

  bool ok() const { return violations.empty(); }
  void add(Violation v) { violations.push_back(std::move(v)); }
  std::string summary(std::size_t max_lines = 20) const;
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data failed validation; the report lists every violation found.
class ValidationError : public Error {
 public:
  explicit ValidationError(ValidationReport report);
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

/// The implicit Euler step could not bracket a root.
class ImplicitStepError : public Error {
 public:
  ImplicitStepError(const std::string& what, std::optional<NodeId> node = std::nullopt)
      : Error(what), node_(node) {}
  std::optional<NodeId> node() const { return node_; }

 private:
  std::optional<NodeId> node_;
};

/// An exhaustive enumeration would exceed its configured cap.
class EnumerationCapError : public Error {
 public:
  using Error::Error;
};

/// Picard iteration failed: a decreasing sweep or too many sweeps.
class ConvergenceError : public Error {
 public:
  enum class Kind { NonMonotoneSweep, MaxSweepsExhausted };
  ConvergenceError(Kind kind, const std::string& what, int sweep, double delta,
                   std::optional<NodeId> node = std::nullopt, std::optional<int> mode = std::nullopt)
      : Error(what), kind_(kind), sweep_(sweep), delta_(delta), node_(node), mode_(mode) {}

  Kind kind() const { return kind_; }
  int sweep() const { return sweep_; }
  double delta() const { return delta_; }
  std::optional<NodeId> node() const { return node_; }
  std::optional<int> mode() const { return mode_; }

 private:
  Kind kind_;
  int sweep_;
  double delta_;
  std::optional<NodeId> node_;
  std::optional<int> mode_;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

}  // namespace orbsde
