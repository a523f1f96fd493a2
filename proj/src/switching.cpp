#include "orbsde/switching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace orbsde {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Everything a strategy evaluation needs that does not depend on the strategy.
struct Context {
  const EventTree& tree;
  const ObliqueProblem& problem;
  std::vector<NodeId> nodes;  // subtree of the start, parents first
  std::vector<ScalarGenerator> own;

  Context(const EventTree& t, const ObliqueProblem& p, NodeId start) : tree(t), problem(p), nodes(t.subtree(start)) {
    if (p.custom_obstacle) throw PreconditionError("switching needs the cost-matrix obstacle");
    if (!generators_decoupled(t, p)) {
      throw PreconditionError("switching needs f^j to depend on y^j only; cross-dependence detected");
    }
    const auto d = static_cast<std::size_t>(p.modes);
    own.resize(d);
    for (std::size_t j = 0; j < d && !p.generators.empty(); ++j) {
      if (!p.generators[j]) continue;
      own[j] = [f = p.generators[j], j, buf = std::vector<double>(d, 0.0)](GeneratorPoint at, double y) mutable {
        buf[j] = y;
        return f(at, buf);
      };
    }
  }

  double drift(int m, NodeId u) const {
    if (problem.drift.empty() || problem.drift[static_cast<std::size_t>(m)].empty()) return 0.0;
    return problem.drift[static_cast<std::size_t>(m)].at_parent(tree, u);
  }

  double switch_cost(int from, int to, NodeId at) const {
    return from == to ? 0.0 : problem.costs(from, to, tree.physical_time(at));
  }
};

void check_strategy(const EventTree& tree, const ObliqueProblem& problem, const SwitchingStrategy& s) {
  if (s.start >= tree.size()) throw PreconditionError("strategy start node out of range");
  if (s.mode.size() != tree.size()) throw PreconditionError("strategy mode map does not match tree");
  if (s.initial_mode < 0 || s.initial_mode >= problem.modes) throw PreconditionError("initial mode out of range");
  for (NodeId u : tree.subtree(s.start)) {
    if (s.mode[u] < 0 || s.mode[u] >= problem.modes) {
      throw PreconditionError("strategy mode out of range at node " + std::to_string(u));
    }
  }
}

// Backward recursion along the strategy; fills R on the subtree and, when
// `full`, the martingale and reflection increments.
double evaluate(const Context& ctx, const std::vector<int>& mode, int initial_mode, AdaptedProcess& r,
                StrategyValue* full) {
  const auto& tree = ctx.tree;
  const auto& p = ctx.problem;
  const double dt = tree.dt();
  for (auto it = ctx.nodes.rbegin(); it != ctx.nodes.rend(); ++it) {
    const NodeId u = *it;
    const int m = mode[u];
    const auto mm = static_cast<std::size_t>(m);
    if (tree.is_leaf(u)) {
      r[u] = p.terminal[mm][u];
      continue;
    }
    double expected = 0.0;
    for (NodeId c : tree.children(u)) expected += tree.probability(c) * (r[c] - ctx.switch_cost(m, mode[c], c));
    const double dv = ctx.drift(m, u);
    const GeneratorPoint at{u, tree.time(u)};
    const double y_star = implicit_step(expected, ctx.own[mm], at, dv, dt);
    const double y = std::min(p.upper[mm][u], y_star);
    r[u] = y;
    if (full) {
      if (y != y_star) {
        const double g = ctx.own[mm] ? ctx.own[mm](at, y) : 0.0;
        full->dd.set_at_parent(tree, u, std::max(expected + g * dt + dv - y, 0.0));
      }
      for (NodeId c : tree.children(u)) full->dm[c] = r[c] - ctx.switch_cost(m, mode[c], c) - expected;
    }
  }
  const NodeId start = ctx.nodes.front();
  return r[start] - ctx.switch_cost(initial_mode, mode[start], start);
}

std::size_t saturating_power(std::size_t base, std::size_t exponent) {
  std::size_t out = 1;
  for (std::size_t i = 0; i < exponent; ++i) {
    if (out > std::numeric_limits<std::size_t>::max() / base) return std::numeric_limits<std::size_t>::max();
    out *= base;
  }
  return out;
}

// Advances the mode vector at `digits` (most significant first); false after the last one.
bool next_assignment(std::vector<int>& mode, const std::vector<NodeId>& digits, int modes) {
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (++mode[*it] < modes) return true;
    mode[*it] = 0;
  }
  return false;
}

}  // namespace

std::vector<SwitchEvent> switches_along(const EventTree& tree, const SwitchingStrategy& strategy, NodeId leaf) {
  std::vector<NodeId> path;
  for (std::optional<NodeId> v = leaf; v; v = tree.parent(*v)) {
    path.push_back(*v);
    if (*v == strategy.start) break;
  }
  if (path.back() != strategy.start) throw PreconditionError("leaf is not below the strategy start");
  std::reverse(path.begin(), path.end());
  std::vector<SwitchEvent> out;
  int current = strategy.initial_mode;
  for (NodeId v : path) {
    const int next = strategy.mode[v];
    if (next != current) out.push_back({v, tree.time(v), current, next});
    current = next;
  }
  return out;
}

SwitchingStrategy constant_strategy(const EventTree& tree, NodeId start, int mode) {
  SwitchingStrategy s{start, mode, std::vector<int>(tree.size(), -1)};
  for (NodeId u : tree.subtree(start)) s.mode[u] = mode;
  return s;
}

bool generators_decoupled(const EventTree& tree, const ObliqueProblem& problem) {
  if (problem.generators.empty()) return true;
  const int d = problem.modes;
  const std::vector<double> bases = {-10.0, 0.0, 3.0};
  const std::vector<double> shifts = {1.0, 10.0, -10.0};
  const auto& nodes = tree.backward_order();
  const std::size_t stride = std::max<std::size_t>(1, nodes.size() / 64);
  std::vector<double> y(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    const auto& f = problem.generators[static_cast<std::size_t>(j)];
    if (!f) continue;
    for (std::size_t i = 0; i < nodes.size(); i += stride) {
      const GeneratorPoint at{nodes[i], tree.time(nodes[i])};
      for (double b : bases) {
        std::fill(y.begin(), y.end(), b);
        const double f0 = f(at, y);
        for (int k = 0; k < d; ++k) {
          if (k == j) continue;
          for (double s : shifts) {
            y[static_cast<std::size_t>(k)] = b + s;
            const double f1 = f(at, y);
            y[static_cast<std::size_t>(k)] = b;
            if (std::abs(f1 - f0) > 1e-14 * (1.0 + std::abs(f0))) return false;
          }
        }
      }
    }
  }
  return true;
}

StrategyValue solve_for_strategy(const EventTree& tree, const ObliqueProblem& problem,
                                 const SwitchingStrategy& strategy) {
  check_strategy(tree, problem, strategy);
  const Context ctx(tree, problem, strategy.start);
  const auto n = tree.size();
  StrategyValue v{AdaptedProcess(n, kNaN), AdaptedProcess(n), PredictableIncrements(n), 0.0};
  v.entry_value = evaluate(ctx, strategy.mode, strategy.initial_mode, v.r, &v);
  return v;
}

std::size_t strategy_count(const EventTree& tree, int modes, NodeId start) {
  return saturating_power(static_cast<std::size_t>(modes), tree.subtree(start).size() - 1);
}

std::vector<SwitchingStrategy> enumerate_strategies(const EventTree& tree, const ObliqueProblem& problem,
                                                    NodeId start, int start_mode, std::size_t cap) {
  if (start >= tree.size()) throw PreconditionError("start node out of range");
  if (start_mode < 0 || start_mode >= problem.modes) throw PreconditionError("start mode out of range");
  const std::size_t count = strategy_count(tree, problem.modes, start);
  if (count > cap) {
    throw EnumerationCapError("strategy count " + std::to_string(count) + " exceeds cap " + std::to_string(cap));
  }
  std::vector<NodeId> digits = tree.subtree(start);
  digits.erase(digits.begin());
  std::sort(digits.begin(), digits.end());

  SwitchingStrategy s = constant_strategy(tree, start, 0);
  s.initial_mode = start_mode;
  s.mode[start] = start_mode;
  std::vector<SwitchingStrategy> out;
  out.reserve(count);
  do {
    out.push_back(s);
  } while (next_assignment(s.mode, digits, problem.modes));
  return out;
}

BruteForceResult brute_force_value(const EventTree& tree, const ObliqueProblem& problem, NodeId start,
                                   int start_mode, std::size_t cap) {
  if (start >= tree.size()) throw PreconditionError("start node out of range");
  if (start_mode < 0 || start_mode >= problem.modes) throw PreconditionError("start mode out of range");
  std::vector<NodeId> digits = tree.subtree(start);
  const std::size_t count = saturating_power(static_cast<std::size_t>(problem.modes), digits.size());
  if (count > cap) {
    throw EnumerationCapError("strategy count " + std::to_string(count) + " exceeds cap " + std::to_string(cap));
  }
  const Context ctx(tree, problem, start);
  std::sort(digits.begin(), digits.end());

  SwitchingStrategy current = constant_strategy(tree, start, 0);
  current.initial_mode = start_mode;
  BruteForceResult best{-std::numeric_limits<double>::infinity(), current, 0};
  AdaptedProcess r(tree.size(), kNaN);
  do {
    const double value = evaluate(ctx, current.mode, start_mode, r, nullptr);
    ++best.evaluated;
    if (value > best.value) {
      best.value = value;
      best.best = current;
    }
  } while (next_assignment(current.mode, digits, problem.modes));
  return best;
}

SwitchingStrategy construct_optimal_strategy(const EventTree& tree, const ObliqueProblem& problem,
                                             const SystemSolution& solution, NodeId start, int start_mode,
                                             double tol) {
  if (problem.custom_obstacle) throw PreconditionError("switching needs the cost-matrix obstacle");
  if (start >= tree.size()) throw PreconditionError("start node out of range");
  if (start_mode < 0 || start_mode >= problem.modes) throw PreconditionError("start mode out of range");
  const int d = problem.modes;
  const auto y = solution.values();

  SwitchingStrategy s{start, start_mode, std::vector<int>(tree.size(), -1)};
  for (NodeId u : tree.subtree(start)) {
    const int m = u == start ? start_mode : s.mode[*tree.parent(u)];
    s.mode[u] = m;
    if (tree.is_leaf(u)) continue;
    const double t = tree.physical_time(u);
    const auto yu = state_vector(y, u);
    const auto mm = static_cast<std::size_t>(m);
    const double h = evaluate_H(problem.costs, t, yu)[mm];
    if (yu[mm] > h + tol) continue;
    int target = -1;
    for (int k = 0; k < d && target < 0; ++k) {
      if (k != m && std::abs(yu[mm] - (yu[static_cast<std::size_t>(k)] - problem.costs(m, k, t))) <= tol) target = k;
    }
    if (target < 0) {
      throw PreconditionError("mode " + std::to_string(m + 1) + " binds at node " + std::to_string(u) +
                              " but no index attains the obstacle");
    }
    s.mode[u] = target;
  }
  return s;
}

MartingaleCheck check_switched_martingale(const EventTree& tree, const SystemSolution& solution,
                                          const SwitchingStrategy& strategy) {
  MartingaleCheck out;
  for (NodeId u : tree.subtree(strategy.start)) {
    if (tree.is_leaf(u)) continue;
    const auto& dm = solution.modes.at(static_cast<std::size_t>(strategy.mode[u])).dm;
    double e = 0.0;
    for (NodeId c : tree.children(u)) e += tree.probability(c) * dm[c];
    if (!out.node || std::abs(e) > out.worst) {
      out.worst = std::abs(e);
      out.node = u;
    }
  }
  return out;
}

}  // namespace orbsde
