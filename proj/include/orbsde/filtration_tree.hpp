#pragma once

// Finite event trees as discrete filtered probability spaces: conditional
// expectations, Doob decompositions, Snell envelopes and exhaustive
// stopping-time enumeration.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "orbsde/diagnostics.hpp"

namespace orbsde {

inline constexpr double kProbabilityTolerance = 1e-12;

struct NodeSpec {
  NodeId id = 0;
  std::optional<NodeId> parent;
  double probability = 1.0;  // p(node | parent), ignored for the root
  std::optional<int> time;   // checked against depth when present
  double state = 0.0;        // free label, e.g. a lattice price
};

/// Raw, unchecked tree data as read from a scenario.
struct TreeDescription {
  std::vector<NodeSpec> nodes;
  int steps = 0;
  double dt = 1.0;
};

/// Every structural problem with `desc`; empty iff it describes a well-formed tree.
std::vector<Violation> validate_tree(const TreeDescription& desc);

class EventTree {
 public:
  /// Validates, then renormalizes child probabilities so they sum to one exactly.
  /// Throws ValidationError.
  static EventTree build(const TreeDescription& desc);

  static EventTree uniform(int branching, int steps, double dt);
  static EventTree chain(int steps, double dt);
  /// Recombining binomial lattice expanded into an explicit tree.
  static EventTree binomial(int steps, double dt, double p_up, double s0, double up, double down);

  std::size_t size() const { return nodes_.size(); }
  NodeId root() const { return root_; }
  int horizon() const { return steps_; }
  double dt() const { return dt_; }

  int time(NodeId u) const { return nodes_[u].time; }
  double physical_time(NodeId u) const { return dt_ * nodes_[u].time; }
  std::optional<NodeId> parent(NodeId u) const { return nodes_[u].parent; }
  std::span<const NodeId> children(NodeId u) const { return nodes_[u].children; }
  double probability(NodeId u) const { return nodes_[u].probability; }
  double path_probability(NodeId u) const { return nodes_[u].path_probability; }
  double state(NodeId u) const { return nodes_[u].state; }
  bool is_leaf(NodeId u) const { return nodes_[u].children.empty(); }

  std::span<const NodeId> nodes_at(int t) const { return levels_[static_cast<std::size_t>(t)]; }
  std::span<const NodeId> leaves() const { return nodes_at(steps_); }
  /// Non-leaf nodes, latest time first; the traversal order of every backward recursion.
  const std::vector<NodeId>& backward_order() const { return backward_; }

  /// Nodes of the subtree rooted at `u`, parents before children.
  std::vector<NodeId> subtree(NodeId u) const;
  /// P(v | u) for v in the subtree of u.
  double conditional_probability(NodeId v, NodeId u) const {
    return nodes_[v].path_probability / nodes_[u].path_probability;
  }

  TreeDescription describe() const;

 private:
  struct Node {
    int time = 0;
    std::optional<NodeId> parent;
    std::vector<NodeId> children;
    double probability = 1.0;
    double path_probability = 1.0;
    double state = 0.0;
  };

  EventTree() = default;
  void index();

  std::vector<Node> nodes_;
  std::vector<std::vector<NodeId>> levels_;
  std::vector<NodeId> backward_;
  NodeId root_ = 0;
  int steps_ = 0;
  double dt_ = 1.0;
};

/// One real value per node.
class AdaptedProcess {
 public:
  AdaptedProcess() = default;
  explicit AdaptedProcess(std::size_t n, double fill = 0.0) : values_(n, fill) {}
  explicit AdaptedProcess(std::vector<double> values) : values_(std::move(values)) {}

  static AdaptedProcess from(const EventTree& tree, const std::function<double(NodeId)>& fn);

  double operator[](NodeId u) const { return values_[u]; }
  double& operator[](NodeId u) { return values_[u]; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  friend bool operator==(const AdaptedProcess&, const AdaptedProcess&) = default;

 private:
  std::vector<double> values_;
};

/// Increments on tree edges, stored against the child node but decided at the
/// parent: every child edge of a node carries the same value.
class PredictableIncrements {
 public:
  PredictableIncrements() = default;
  explicit PredictableIncrements(std::size_t n) : edges_(n, 0.0) {}

  static PredictableIncrements from_parent(const EventTree& tree,
                                           const std::function<double(NodeId parent)>& fn);

  double edge(NodeId child) const { return edges_[child]; }
  double& edge(NodeId child) { return edges_[child]; }
  /// Value on the outgoing edges of `parent`; 0 at a leaf.
  double at_parent(const EventTree& tree, NodeId parent) const;
  void set_at_parent(const EventTree& tree, NodeId parent, double value);

  std::size_t size() const { return edges_.size(); }
  bool empty() const { return edges_.empty(); }
  std::span<const double> edges() const { return edges_; }

  /// First parent whose child edges disagree, if any.
  std::optional<NodeId> first_unpredictable(const EventTree& tree) const;

 private:
  std::vector<double> edges_;
};

/// Stop flag per node.
class StoppingTime {
 public:
  StoppingTime() = default;
  explicit StoppingTime(std::size_t n) : flags_(n, 0) {}

  bool stops_at(NodeId u) const { return flags_[u] != 0; }
  void set(NodeId u, bool stop = true) { flags_[u] = stop ? 1 : 0; }
  std::size_t size() const { return flags_.size(); }
  std::vector<NodeId> stopping_nodes() const;

  /// Each path from `from` to a leaf hits exactly one flag, and nothing outside the
  /// subtree of `from` is flagged.
  bool is_valid(const EventTree& tree, NodeId from) const;

  friend bool operator==(const StoppingTime&, const StoppingTime&) = default;

 private:
  std::vector<char> flags_;
};

struct DoobDecomposition {
  AdaptedProcess martingale;    // M, zero at the root
  PredictableIncrements drift;  // C, signed
};

/// Σ_c p(c|u) X(c). Terms are summed in ascending order, so the result does not
/// depend on how node ids were assigned.
double conditional_expectation(const EventTree& tree, std::span<const double> x, NodeId u);
inline double conditional_expectation(const EventTree& tree, const AdaptedProcess& x, NodeId u) {
  return conditional_expectation(tree, x.values(), u);
}
/// E[X_{s+1} | F_s] at every time-s node, in `tree.nodes_at(s)` order.
/// Throws PreconditionError when a child value is missing (NaN) or X is mis-sized.
std::vector<double> conditional_expectation(const EventTree& tree, const AdaptedProcess& x, int s);

DoobDecomposition doob_decomposition(const EventTree& tree, const AdaptedProcess& x);

/// max over non-leaf nodes of |E[ΔM | u]| where ΔM(c) = M(c) − M(u).
double martingale_defect(const EventTree& tree, const AdaptedProcess& m);

struct SnellEnvelope {
  AdaptedProcess envelope;
  StoppingTime optimal_stop;  // first node on each path where envelope == reward
};

SnellEnvelope snell_envelope(const EventTree& tree, const AdaptedProcess& reward);

struct EnumerationCaps {
  int max_depth = 4;
  std::size_t max_count = 1'000'000;
};

/// N(leaf) = 1, N(u) = 1 + Π N(c); saturates at SIZE_MAX.
std::size_t count_stopping_times(const EventTree& tree, NodeId from);

/// Every stopping time of the subtree rooted at `from`, without duplicates.
/// Throws EnumerationCapError rather than truncating.
std::vector<StoppingTime> enumerate_stopping_times(const EventTree& tree, const EnumerationCaps& caps,
                                                   std::optional<NodeId> from = std::nullopt);

/// E[X_τ | F_from].
double expected_stopped_value(const EventTree& tree, const AdaptedProcess& x, const StoppingTime& tau,
                              NodeId from);

}  // namespace orbsde
