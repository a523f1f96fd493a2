#pragma once

// Optimal switching under an upper profitability barrier. A strategy assigns a
// mode to every node of the subtree below its start node; switching from m to k
// on the edge into node c costs c^{mk}(t_c). The mode at the start node may
// differ from the initial mode, which is an immediate switch paid at the start
// time.

#include <cstddef>
#include <optional>
#include <vector>

#include "orbsde/oblique_system.hpp"

namespace orbsde {

struct SwitchingStrategy {
  NodeId start = 0;
  int initial_mode = 0;
  std::vector<int> mode;  // per node; −1 outside the subtree of `start`

  friend bool operator==(const SwitchingStrategy&, const SwitchingStrategy&) = default;
};

/// One switch (θ_n, α_{n−1} → α_n).
struct SwitchEvent {
  NodeId node;
  int time;
  int from;
  int to;
};

/// Switches met on the path from the start node to `leaf`.
std::vector<SwitchEvent> switches_along(const EventTree& tree, const SwitchingStrategy& strategy, NodeId leaf);

/// Strategy that stays in `mode` on the whole subtree of `start`.
SwitchingStrategy constant_strategy(const EventTree& tree, NodeId start, int mode);

struct StrategyValue {
  AdaptedProcess r;            // NaN outside the subtree
  AdaptedProcess dm;           // on edges inside the subtree
  PredictableIncrements dd;    // upper reflection, ≥ 0
  double entry_value = 0.0;    // R(start) minus the immediate switch cost, if any
};

/// True when every f^j ignores the components y^k, k ≠ j (probed numerically).
bool generators_decoupled(const EventTree& tree, const ObliqueProblem& problem);

/// Backward recursion along the strategy. Throws PreconditionError for coupled
/// generators or a malformed strategy.
StrategyValue solve_for_strategy(const EventTree& tree, const ObliqueProblem& problem,
                                 const SwitchingStrategy& strategy);

/// Strategies with mode `start_mode` at the start node and every mode
/// elsewhere in the subtree: d^{#subtree nodes − 1} of them, in lexicographic
/// order of their node-id-ordered mode vectors. Throws EnumerationCapError.
std::vector<SwitchingStrategy> enumerate_strategies(const EventTree& tree, const ObliqueProblem& problem,
                                                    NodeId start, int start_mode,
                                                    std::size_t cap = 1'000'000);

/// Number of strategies enumerate_strategies would return, saturating.
std::size_t strategy_count(const EventTree& tree, int modes, NodeId start);

struct BruteForceResult {
  double value = 0.0;
  SwitchingStrategy best;
  std::size_t evaluated = 0;
};

/// sup over all strategies with initial mode `start_mode` of their entry value,
/// including those that switch at the start node; the cap bounds
/// d^{#subtree nodes}. Ties go to the lexicographically smallest mode vector.
BruteForceResult brute_force_value(const EventTree& tree, const ObliqueProblem& problem, NodeId start,
                                   int start_mode, std::size_t cap = 1'000'000);

/// Walks forward from `start` in `start_mode`; at each non-terminal node the
/// current mode m switches iff Y^m = H^m(Y) within `tol`, to the smallest k with
/// Y^m = Y^k − c^{mk}. At most one switch per node; no switching at the horizon.
SwitchingStrategy construct_optimal_strategy(const EventTree& tree, const ObliqueProblem& problem,
                                             const SystemSolution& solution, NodeId start, int start_mode,
                                             double tol = 1e-10);

struct MartingaleCheck {
  double worst = 0.0;
  std::optional<NodeId> node;  // parent where the worst defect occurs

  bool ok(double tol = 1e-12) const { return worst <= tol; }
};

/// E[ΔM^{(a)} | u] on the subtree, where edge u → c carries ΔM^{a(u)}(c).
MartingaleCheck check_switched_martingale(const EventTree& tree, const SystemSolution& solution,
                                          const SwitchingStrategy& strategy);

}  // namespace orbsde
