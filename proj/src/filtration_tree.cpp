#include "orbsde/filtration_tree.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>

namespace orbsde {

namespace {

std::string fmt_double(double x) {
  std::ostringstream s;
  s.precision(15);
  s << x;
  return s.str();
}

}  // namespace

std::vector<Violation> validate_tree(const TreeDescription& desc) {
  std::vector<Violation> out;
  const std::size_t n = desc.nodes.size();

  if (!(desc.dt > 0.0) || !std::isfinite(desc.dt)) {
    out.push_back({"dt", "step length must be positive, got " + fmt_double(desc.dt), {}, {}, {}});
  }
  if (desc.steps < 0) {
    out.push_back({"steps", "horizon must be non-negative", {}, {}, {}});
  }
  if (n == 0) {
    out.push_back({"empty", "tree has no nodes", {}, {}, {}});
    return out;
  }

  // ids must be exactly 0..n-1
  std::vector<int> slot(n, -1);
  bool ids_ok = true;
  for (std::size_t i = 0; i < n; ++i) {
    const NodeId id = desc.nodes[i].id;
    if (id >= n) {
      out.push_back({"id", "node id " + std::to_string(id) + " out of range 0.." + std::to_string(n - 1), id, {}, {}});
      ids_ok = false;
    } else if (slot[id] >= 0) {
      out.push_back({"id", "duplicate node id " + std::to_string(id), id, {}, {}});
      ids_ok = false;
    } else {
      slot[id] = static_cast<int>(i);
    }
  }
  if (!ids_ok) return out;

  std::vector<std::vector<NodeId>> children(n);
  std::vector<NodeId> roots;
  for (const auto& spec : desc.nodes) {
    if (!spec.parent) {
      roots.push_back(spec.id);
      continue;
    }
    if (*spec.parent >= n) {
      out.push_back({"orphan", "parent " + std::to_string(*spec.parent) + " does not exist", spec.id, {}, {}});
      continue;
    }
    if (!(spec.probability > 0.0 && spec.probability <= 1.0)) {
      out.push_back({"probability", "edge probability " + fmt_double(spec.probability) + " outside (0,1]", spec.id,
                     {}, {}});
    }
    children[*spec.parent].push_back(spec.id);
  }
  if (roots.size() != 1) {
    out.push_back({"root", "expected exactly one root, found " + std::to_string(roots.size()), {}, {}, {}});
    if (roots.empty()) return out;
  }

  // Breadth-first from the root: reachability and depth.
  std::vector<int> depth(n, -1);
  std::vector<NodeId> queue{roots.front()};
  depth[roots.front()] = 0;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const NodeId u = queue[head];
    for (NodeId c : children[u]) {
      if (depth[c] >= 0) continue;
      depth[c] = depth[u] + 1;
      queue.push_back(c);
    }
  }

  for (const auto& spec : desc.nodes) {
    const NodeId u = spec.id;
    if (depth[u] < 0) {
      out.push_back({"unreachable", "node not reachable from the root", u, {}, {}});
      continue;
    }
    if (spec.time && *spec.time != depth[u]) {
      out.push_back({"depth", "time index " + std::to_string(*spec.time) + " differs from depth " +
                                  std::to_string(depth[u]),
                     u, depth[u], {}});
    }
    if (depth[u] > desc.steps) {
      out.push_back({"depth", "node deeper than horizon " + std::to_string(desc.steps), u, depth[u], {}});
    }
    if (children[u].empty()) {
      if (depth[u] < desc.steps) {
        out.push_back({"leaf", "leaf before horizon (depth " + std::to_string(depth[u]) + " < " +
                                   std::to_string(desc.steps) + ")",
                       u, depth[u], {}});
      }
    } else {
      double sum = 0.0;
      for (NodeId c : children[u]) sum += desc.nodes[static_cast<std::size_t>(slot[c])].probability;
      if (std::abs(sum - 1.0) > kProbabilityTolerance) {
        out.push_back({"probability", "probabilities sum " + fmt_double(sum) + " != 1 at node", u, depth[u], {}});
      }
    }
  }
  return out;
}

EventTree EventTree::build(const TreeDescription& desc) {
  auto violations = validate_tree(desc);
  if (!violations.empty()) {
    ValidationReport report;
    report.violations = std::move(violations);
    throw ValidationError(std::move(report));
  }
  EventTree tree;
  tree.steps_ = desc.steps;
  tree.dt_ = desc.dt;
  tree.nodes_.resize(desc.nodes.size());
  for (const auto& spec : desc.nodes) {
    auto& node = tree.nodes_[spec.id];
    node.parent = spec.parent;
    node.probability = spec.parent ? spec.probability : 1.0;
    node.state = spec.state;
    if (spec.parent) {
      tree.nodes_[*spec.parent].children.push_back(spec.id);
    } else {
      tree.root_ = spec.id;
    }
  }
  tree.index();
  return tree;
}

void EventTree::index() {
  for (auto& node : nodes_) std::sort(node.children.begin(), node.children.end());

  // renormalize, then depth and path probabilities top-down
  levels_.assign(static_cast<std::size_t>(steps_) + 1, {});
  std::vector<NodeId> queue{root_};
  nodes_[root_].time = 0;
  nodes_[root_].path_probability = 1.0;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const NodeId u = queue[head];
    auto& node = nodes_[u];
    levels_[static_cast<std::size_t>(node.time)].push_back(u);
    std::vector<double> probs;
    for (NodeId c : node.children) probs.push_back(nodes_[c].probability);
    std::sort(probs.begin(), probs.end());
    double sum = 0.0;
    for (double p : probs) sum += p;
    for (NodeId c : node.children) {
      nodes_[c].probability /= sum;
      nodes_[c].time = node.time + 1;
      nodes_[c].path_probability = node.path_probability * nodes_[c].probability;
      queue.push_back(c);
    }
  }
  for (auto& level : levels_) std::sort(level.begin(), level.end());

  backward_.clear();
  for (int t = steps_ - 1; t >= 0; --t) {
    for (NodeId u : levels_[static_cast<std::size_t>(t)]) backward_.push_back(u);
  }
}

EventTree EventTree::uniform(int branching, int steps, double dt) {
  TreeDescription desc;
  desc.steps = steps;
  desc.dt = dt;
  desc.nodes.push_back({0, std::nullopt, 1.0, 0, 0.0});
  std::vector<NodeId> frontier{0};
  for (int t = 1; t <= steps; ++t) {
    std::vector<NodeId> next;
    for (NodeId u : frontier) {
      for (int b = 0; b < branching; ++b) {
        const NodeId id = desc.nodes.size();
        desc.nodes.push_back({id, u, 1.0 / branching, t, 0.0});
        next.push_back(id);
      }
    }
    frontier = std::move(next);
  }
  return build(desc);
}

EventTree EventTree::chain(int steps, double dt) { return uniform(1, steps, dt); }

EventTree EventTree::binomial(int steps, double dt, double p_up, double s0, double up, double down) {
  TreeDescription desc;
  desc.steps = steps;
  desc.dt = dt;
  desc.nodes.push_back({0, std::nullopt, 1.0, 0, s0});
  std::vector<NodeId> frontier{0};
  for (int t = 1; t <= steps; ++t) {
    std::vector<NodeId> next;
    for (NodeId u : frontier) {
      const double s = desc.nodes[u].state;
      const NodeId id_up = desc.nodes.size();
      desc.nodes.push_back({id_up, u, p_up, t, s * up});
      const NodeId id_down = desc.nodes.size();
      desc.nodes.push_back({id_down, u, 1.0 - p_up, t, s * down});
      next.push_back(id_up);
      next.push_back(id_down);
    }
    frontier = std::move(next);
  }
  return build(desc);
}

std::vector<NodeId> EventTree::subtree(NodeId u) const {
  std::vector<NodeId> out{u};
  for (std::size_t head = 0; head < out.size(); ++head) {
    for (NodeId c : nodes_[out[head]].children) out.push_back(c);
  }
  return out;
}

TreeDescription EventTree::describe() const {
  TreeDescription desc;
  desc.steps = steps_;
  desc.dt = dt_;
  for (NodeId u = 0; u < nodes_.size(); ++u) {
    const auto& node = nodes_[u];
    desc.nodes.push_back({u, node.parent, node.probability, node.time, node.state});
  }
  return desc;
}

AdaptedProcess AdaptedProcess::from(const EventTree& tree, const std::function<double(NodeId)>& fn) {
  AdaptedProcess x(tree.size());
  for (NodeId u = 0; u < tree.size(); ++u) x[u] = fn(u);
  return x;
}

PredictableIncrements PredictableIncrements::from_parent(const EventTree& tree,
                                                         const std::function<double(NodeId)>& fn) {
  PredictableIncrements inc(tree.size());
  for (NodeId u : tree.backward_order()) inc.set_at_parent(tree, u, fn(u));
  return inc;
}

double PredictableIncrements::at_parent(const EventTree& tree, NodeId parent) const {
  const auto kids = tree.children(parent);
  return kids.empty() ? 0.0 : edges_[kids.front()];
}

void PredictableIncrements::set_at_parent(const EventTree& tree, NodeId parent, double value) {
  for (NodeId c : tree.children(parent)) edges_[c] = value;
}

std::optional<NodeId> PredictableIncrements::first_unpredictable(const EventTree& tree) const {
  for (NodeId u = 0; u < tree.size(); ++u) {
    const auto kids = tree.children(u);
    for (NodeId c : kids) {
      if (edges_[c] != edges_[kids.front()]) return u;
    }
  }
  return std::nullopt;
}

std::vector<NodeId> StoppingTime::stopping_nodes() const {
  std::vector<NodeId> out;
  for (NodeId u = 0; u < flags_.size(); ++u) {
    if (flags_[u]) out.push_back(u);
  }
  return out;
}

bool StoppingTime::is_valid(const EventTree& tree, NodeId from) const {
  if (flags_.size() != tree.size()) return false;
  std::vector<char> inside(tree.size(), 0);
  for (NodeId v : tree.subtree(from)) inside[v] = 1;
  for (NodeId v = 0; v < tree.size(); ++v) {
    if (flags_[v] && !inside[v]) return false;
  }
  // count flags along each path from `from` to a leaf
  struct Frame {
    NodeId node;
    int hits;
  };
  std::vector<Frame> stack{{from, flags_[from] ? 1 : 0}};
  while (!stack.empty()) {
    const Frame f = stack.back();
    stack.pop_back();
    if (f.hits > 1) return false;
    if (tree.is_leaf(f.node)) {
      if (f.hits != 1) return false;
      continue;
    }
    for (NodeId c : tree.children(f.node)) stack.push_back({c, f.hits + (flags_[c] ? 1 : 0)});
  }
  return true;
}

double conditional_expectation(const EventTree& tree, std::span<const double> x, NodeId u) {
  const auto kids = tree.children(u);
  std::array<double, 16> small{};
  std::vector<double> large;
  std::span<double> terms;
  if (kids.size() <= small.size()) {
    terms = std::span<double>(small.data(), kids.size());
  } else {
    large.resize(kids.size());
    terms = large;
  }
  for (std::size_t i = 0; i < kids.size(); ++i) terms[i] = tree.probability(kids[i]) * x[kids[i]];
  std::sort(terms.begin(), terms.end());
  double sum = 0.0;
  for (double t : terms) sum += t;
  return sum;
}

std::vector<double> conditional_expectation(const EventTree& tree, const AdaptedProcess& x, int s) {
  if (x.size() != tree.size()) throw PreconditionError("adapted process size does not match tree");
  if (s < 0 || s >= tree.horizon()) throw PreconditionError("time index has no successor level");
  std::vector<double> out;
  for (NodeId u : tree.nodes_at(s)) {
    for (NodeId c : tree.children(u)) {
      if (std::isnan(x[c])) {
        throw PreconditionError("missing value at child node " + std::to_string(c) + " (t=" +
                                std::to_string(tree.time(c)) + ")");
      }
    }
    out.push_back(conditional_expectation(tree, x, u));
  }
  return out;
}

DoobDecomposition doob_decomposition(const EventTree& tree, const AdaptedProcess& x) {
  DoobDecomposition out{AdaptedProcess(tree.size()), PredictableIncrements(tree.size())};
  for (int t = 0; t < tree.horizon(); ++t) {
    for (NodeId u : tree.nodes_at(t)) {
      const double e = conditional_expectation(tree, x, u);
      out.drift.set_at_parent(tree, u, e - x[u]);
      for (NodeId c : tree.children(u)) out.martingale[c] = out.martingale[u] + (x[c] - e);
    }
  }
  return out;
}

double martingale_defect(const EventTree& tree, const AdaptedProcess& m) {
  double worst = 0.0;
  for (NodeId u : tree.backward_order()) {
    double e = 0.0;
    for (NodeId c : tree.children(u)) e += tree.probability(c) * (m[c] - m[u]);
    worst = std::max(worst, std::abs(e));
  }
  return worst;
}

SnellEnvelope snell_envelope(const EventTree& tree, const AdaptedProcess& reward) {
  SnellEnvelope out{reward, StoppingTime(tree.size())};
  auto& env = out.envelope;
  for (NodeId u : tree.backward_order()) {
    env[u] = std::max(reward[u], conditional_expectation(tree, env, u));
  }
  // first node along each path where it is optimal to stop
  std::vector<NodeId> stack{tree.root()};
  while (!stack.empty()) {
    const NodeId u = stack.back();
    stack.pop_back();
    if (tree.is_leaf(u) || env[u] <= reward[u]) {
      out.optimal_stop.set(u);
      continue;
    }
    for (NodeId c : tree.children(u)) stack.push_back(c);
  }
  return out;
}

std::size_t count_stopping_times(const EventTree& tree, NodeId from) {
  constexpr auto kMax = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> count(tree.size(), 1);
  const auto nodes = tree.subtree(from);
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const NodeId u = *it;
    if (tree.is_leaf(u)) continue;
    std::size_t prod = 1;
    for (NodeId c : tree.children(u)) {
      if (count[c] != 0 && prod > kMax / count[c]) {
        prod = kMax;
        break;
      }
      prod *= count[c];
    }
    count[u] = prod == kMax ? kMax : prod + 1;
  }
  return count[from];
}

namespace {

using StopSet = std::vector<NodeId>;

std::vector<StopSet> stop_sets(const EventTree& tree, NodeId u) {
  std::vector<StopSet> out{StopSet{u}};
  if (tree.is_leaf(u)) return out;
  std::vector<StopSet> combos{StopSet{}};
  for (NodeId c : tree.children(u)) {
    const auto sub = stop_sets(tree, c);
    std::vector<StopSet> next;
    next.reserve(combos.size() * sub.size());
    for (const auto& a : combos) {
      for (const auto& b : sub) {
        StopSet merged = a;
        merged.insert(merged.end(), b.begin(), b.end());
        next.push_back(std::move(merged));
      }
    }
    combos = std::move(next);
  }
  out.insert(out.end(), std::make_move_iterator(combos.begin()), std::make_move_iterator(combos.end()));
  return out;
}

}  // namespace

std::vector<StoppingTime> enumerate_stopping_times(const EventTree& tree, const EnumerationCaps& caps,
                                                   std::optional<NodeId> from) {
  const NodeId start = from.value_or(tree.root());
  const int depth = tree.horizon() - tree.time(start);
  if (depth > caps.max_depth) {
    throw EnumerationCapError("stopping-time enumeration depth " + std::to_string(depth) + " exceeds cap " +
                              std::to_string(caps.max_depth));
  }
  const std::size_t count = count_stopping_times(tree, start);
  if (count > caps.max_count) {
    throw EnumerationCapError("stopping-time count " + std::to_string(count) + " exceeds cap " +
                              std::to_string(caps.max_count));
  }
  std::vector<StoppingTime> out;
  out.reserve(count);
  for (const auto& set : stop_sets(tree, start)) {
    StoppingTime tau(tree.size());
    for (NodeId v : set) tau.set(v);
    out.push_back(std::move(tau));
  }
  return out;
}

double expected_stopped_value(const EventTree& tree, const AdaptedProcess& x, const StoppingTime& tau,
                              NodeId from) {
  double sum = 0.0;
  for (NodeId v : tree.subtree(from)) {
    if (tau.stops_at(v)) sum += tree.conditional_probability(v, from) * x[v];
  }
  return sum;
}

}  // namespace orbsde
