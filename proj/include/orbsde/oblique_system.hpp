#pragma once

// d-dimensional reflected BSDE with oblique reflection from below and a fixed
// upper barrier:
//
//     H^j(Y) ≤ Y^j ≤ U^j,   H^j_t(y) = max_{k≠j} (y^k − c^{jk}(t)).
//
// Solved by a monotone Picard iteration that starts from a subsolution and
// runs one scalar two-barrier solve per mode and sweep.

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "orbsde/filtration_tree.hpp"
#include "orbsde/rbsde_scalar.hpp"

namespace orbsde {

/// Polynomial in physical time, lowest order first.
struct Polynomial {
  std::vector<double> coeffs;

  double operator()(double t) const;
  friend bool operator==(const Polynomial&, const Polynomial&) = default;
};

/// Switching costs c^{jk}(t); the diagonal is zero.
class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(int modes, double constant);
  static CostMatrix from_constants(const std::vector<std::vector<double>>& c);

  int modes() const { return modes_; }
  const Polynomial& poly(int j, int k) const { return entries_[index(j, k)]; }
  void set(int j, int k, Polynomial p) { entries_[index(j, k)] = std::move(p); }
  double operator()(int j, int k, double t) const { return j == k ? 0.0 : poly(j, k)(t); }

 private:
  std::size_t index(int j, int k) const { return static_cast<std::size_t>(j * modes_ + k); }

  int modes_ = 0;
  std::vector<Polynomial> entries_;
};

/// f^j(point, y) for the full vector y.
using SystemGenerator = std::function<double(GeneratorPoint, std::span<const double>)>;

/// General obstacle H^j(t, y), used in place of the cost form when set.
using ObstacleFunction = std::function<double(int mode, double t, std::span<const double> y)>;

struct ObliqueProblem {
  int modes = 2;
  std::vector<AdaptedProcess> terminal;         // ξ^j, read at leaves
  std::vector<SystemGenerator> generators;      // empty entries mean f^j ≡ 0
  std::vector<PredictableIncrements> drift;     // empty, or one per mode
  std::vector<AdaptedProcess> upper;            // U^j
  CostMatrix costs;
  ObstacleFunction custom_obstacle;
  std::optional<std::vector<AdaptedProcess>> subsolution;  // explicit Y^(0)
  double subsolution_slack = 0.0;
};

std::vector<double> evaluate_H(const CostMatrix& costs, double t, std::span<const double> y);
std::vector<double> evaluate_H(const ObliqueProblem& problem, double t, std::span<const double> y);

/// Y_t(u) as a vector over modes.
std::vector<double> state_vector(const std::vector<AdaptedProcess>& y, NodeId u);

/// Every structural and hypothesis violation: sizes, cost positivity, the
/// triangle condition, H(U) ≤ U, the terminal sandwich and generator probes.
ValidationReport validate_problem(const EventTree& tree, const ObliqueProblem& problem);

struct Subsolution {
  std::vector<ScalarSolution> modes;
  std::vector<double> corner;  // lower corner used in the off-diagonal slots; empty if explicit
};

/// Per mode, the upper-barrier solve with generator c ↦ f^j(t, y_low with c in slot j).
/// The corner is lowered by a factor 10 per restart.
Subsolution build_subsolution(const EventTree& tree, const ObliqueProblem& problem, int restart = 0);

struct SweepRecord {
  int sweep = 0;    // 1-based within its restart
  int restart = 0;
  double delta = 0.0;           // sup |Y^(n) − Y^(n−1)|
  double min_increment = 0.0;   // inf (Y^(n) − Y^(n−1))
};

struct IterationLog {
  std::vector<SweepRecord> sweeps;
  int restarts = 0;
  int sweeps_to_tolerance = 0;
  int polish_sweeps = 0;
  std::vector<double> corner;
};

struct SystemSolution {
  std::vector<ScalarSolution> modes;
  IterationLog log;

  std::vector<AdaptedProcess> values() const;
};

struct PicardOptions {
  double tol = 1e-10;
  int max_sweeps = 200;
  int max_restarts = 3;
  int max_polish_sweeps = 20;
  double monotone_slack = 1e-12;
  bool validate = true;
  /// Called after every sweep with the new iterate.
  std::function<void(const SweepRecord&, const std::vector<ScalarSolution>&)> on_sweep;
};

/// Throws ValidationError, ConvergenceError or ImplicitStepError.
SystemSolution picard_solve(const EventTree& tree, const ObliqueProblem& problem, const PicardOptions& options = {});

/// The scalar two-barrier problem seen by mode j when the other modes are frozen at `y`.
ScalarProblem mode_problem(const EventTree& tree, const ObliqueProblem& problem,
                           const std::vector<AdaptedProcess>& y, int mode);

struct BindingCycle {
  NodeId node;
  std::vector<int> modes;
};

struct MinimalityReport {
  double sandwich_lower = 0.0;  // max H^j(Y) − Y^j
  double sandwich_upper = 0.0;  // max Y^j − U^j
  double flat_off_k = 0.0;      // max min(ΔK, Y − H(Y))
  double flat_off_a = 0.0;      // max min(ΔA, U − Y)
  double backward_identity = 0.0;
  double martingale = 0.0;
  double negative_increment = 0.0;
  bool predictable = true;
  std::vector<BindingCycle> cycles;
  std::vector<Violation> violations;  // every check above `tol`, located

  double worst() const;
  bool ok() const { return violations.empty(); }
};

MinimalityReport verify_minimality(const EventTree& tree, const ObliqueProblem& problem,
                                   const SystemSolution& solution, double tol = 1e-10);

/// Cycles j₁ → … → j_k → j₁ with Y^{j_i} = Y^{j_{i+1}} − c^{j_i j_{i+1}}(t) within `tol`.
std::vector<std::vector<int>> binding_cycles(const CostMatrix& costs, double t, std::span<const double> y,
                                             double tol = 1e-10);

}  // namespace orbsde
