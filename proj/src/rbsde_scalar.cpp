#include "orbsde/rbsde_scalar.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace orbsde {

namespace {

constexpr int kMaxBracketExpansions = 64;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double eval(const ScalarGenerator& g, GeneratorPoint at, double y) { return g ? g(at, y) : 0.0; }

double drift_at(const EventTree& tree, const PredictableIncrements& v, NodeId u) {
  return v.empty() ? 0.0 : v.at_parent(tree, u);
}

std::string where(const EventTree& tree, NodeId u) {
  return "node " + std::to_string(u) + " (t=" + std::to_string(tree.time(u)) + ")";
}

void check_sizes(const EventTree& tree, const ScalarProblem& p) {
  const auto n = tree.size();
  if (p.terminal.size() != n) throw PreconditionError("terminal condition size does not match tree");
  if (!p.drift.empty() && p.drift.size() != n) throw PreconditionError("drift size does not match tree");
  if (p.lower && p.lower->size() != n) throw PreconditionError("lower barrier size does not match tree");
  if (p.upper && p.upper->size() != n) throw PreconditionError("upper barrier size does not match tree");
}

// Shared backward recursion with optional projection onto [lower, upper].
ScalarSolution solve_projected(const EventTree& tree, const ScalarProblem& p, const AdaptedProcess* lower,
                               const AdaptedProcess* upper) {
  check_sizes(tree, p);
  const auto n = tree.size();
  const double dt = tree.dt();
  ScalarSolution s{AdaptedProcess(n, kNaN), AdaptedProcess(n), PredictableIncrements(n), PredictableIncrements(n)};

  for (NodeId leaf : tree.leaves()) {
    const double xi = p.terminal[leaf];
    if ((lower && xi < (*lower)[leaf]) || (upper && xi > (*upper)[leaf])) {
      throw PreconditionError("terminal value outside the barriers at " + where(tree, leaf));
    }
    s.y[leaf] = xi;
  }

  for (NodeId u : tree.backward_order()) {
    const GeneratorPoint at{u, tree.time(u)};
    const double expected = conditional_expectation(tree, s.y, u);
    const double dv = drift_at(tree, p.drift, u);
    double y_star;
    try {
      y_star = implicit_step(expected, p.generator, at, dv, dt);
    } catch (const ImplicitStepError& e) {
      throw ImplicitStepError(std::string(e.what()) + " at " + where(tree, u), u);
    }
    double y = y_star;
    if (lower) y = std::max((*lower)[u], y);
    if (upper) y = std::min((*upper)[u], y);
    if (lower && upper && (*lower)[u] > (*upper)[u]) {
      throw PreconditionError("lower barrier above upper barrier at " + where(tree, u));
    }
    s.y[u] = y;
    if (y != y_star) {
      // residual of the unprojected equation at the projected value
      const double phi = y - eval(p.generator, at, y) * dt - expected - dv;
      s.dk.set_at_parent(tree, u, (phi > 0.0 ? phi : 0.0));
      s.da.set_at_parent(tree, u, (phi < 0.0 ? -phi : 0.0));
    }
    for (NodeId c : tree.children(u)) s.dm[c] = s.y[c] - expected;
  }
  return s;
}

}  // namespace

double implicit_step(double expected_next, const ScalarGenerator& g, GeneratorPoint at, double dv, double dt) {
  const double base = expected_next + dv;
  auto phi = [&](double y) { return y - eval(g, at, y) * dt - base; };

  const double f0 = phi(base);
  if (!std::isfinite(f0)) throw ImplicitStepError("generator is not finite");
  if (f0 == 0.0) return base;

  // For non-increasing g the root lies between base and base − φ(base).
  double lo = std::min(base, base - f0);
  double hi = std::max(base, base - f0);
  double width = std::max(std::abs(f0), 1.0);
  double flo = phi(lo);
  double fhi = phi(hi);
  int expansions = 0;
  while (!(flo <= 0.0 && fhi >= 0.0)) {
    if (++expansions > kMaxBracketExpansions || !std::isfinite(flo) || !std::isfinite(fhi)) {
      throw ImplicitStepError("implicit step: no sign change after " + std::to_string(kMaxBracketExpansions) +
                              " bracket expansions (generator not non-increasing?)");
    }
    if (flo > 0.0) {
      lo -= width;
      flo = phi(lo);
    }
    if (fhi < 0.0) {
      hi += width;
      fhi = phi(hi);
    }
    width *= 2.0;
  }
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;

  // bisect down to adjacent doubles
  for (;;) {
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) break;
    const double fm = phi(mid);
    if (fm == 0.0) return mid;
    if (fm < 0.0) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
      fhi = fm;
    }
  }
  return -flo <= fhi ? lo : hi;
}

void validate_scalar_problem(const EventTree& tree, const ScalarProblem& p) {
  check_sizes(tree, p);
  ValidationReport report;

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  auto widen = [&](double x) {
    if (std::isfinite(x) && std::abs(x) < 1e7) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  };
  for (NodeId leaf : tree.leaves()) widen(p.terminal[leaf]);

  for (NodeId u = 0; u < tree.size(); ++u) {
    const double l = p.lower ? (*p.lower)[u] : -std::numeric_limits<double>::infinity();
    const double up = p.upper ? (*p.upper)[u] : std::numeric_limits<double>::infinity();
    if (p.lower) widen(l);
    if (p.upper) widen(up);
    if (l > up) {
      report.add({"barrier-order", "lower barrier above upper barrier", u, tree.time(u), {}});
    }
    if (tree.is_leaf(u)) {
      const double xi = p.terminal[u];
      if (xi < l || xi > up) {
        report.add({"terminal-sandwich", "terminal value outside [L_T, U_T]", u, tree.time(u), {}});
      }
    }
  }

  if (p.generator && !tree.backward_order().empty()) {
    if (!(lo <= hi)) {
      lo = -1.0;
      hi = 1.0;
    }
    const double pad = 1.0 + 0.5 * (hi - lo);
    constexpr int kGrid = 7;
    for (NodeId u : tree.backward_order()) {
      const GeneratorPoint at{u, tree.time(u)};
      double prev_y = lo - pad;
      double prev_g = p.generator(at, prev_y);
      for (int i = 1; i < kGrid; ++i) {
        const double y = lo - pad + (hi - lo + 2 * pad) * i / (kGrid - 1);
        const double gy = p.generator(at, y);
        if (gy - prev_g > 1e-12 * (1.0 + std::abs(gy) + std::abs(prev_g))) {
          report.add({"generator-monotonicity", "generator increases in y between " + std::to_string(prev_y) +
                                                    " and " + std::to_string(y),
                      u, tree.time(u), {}});
          break;
        }
        prev_y = y;
        prev_g = gy;
      }
    }
  }
  if (!report.ok()) throw ValidationError(std::move(report));
}

ScalarSolution solve_two_barrier(const EventTree& tree, const ScalarProblem& problem) {
  if (!problem.lower || !problem.upper) throw PreconditionError("solve_two_barrier needs both barriers");
  return solve_projected(tree, problem, &*problem.lower, &*problem.upper);
}

ScalarSolution solve_lower(const EventTree& tree, const ScalarProblem& problem) {
  if (!problem.lower) throw PreconditionError("solve_lower needs a lower barrier");
  if (problem.upper) throw PreconditionError("solve_lower does not take an upper barrier");
  return solve_projected(tree, problem, &*problem.lower, nullptr);
}

ScalarSolution solve_upper(const EventTree& tree, const ScalarProblem& problem) {
  if (!problem.upper) throw PreconditionError("solve_upper needs an upper barrier");
  if (problem.lower) throw PreconditionError("solve_upper does not take a lower barrier");
  check_sizes(tree, problem);

  const auto n = tree.size();
  ScalarProblem flipped;
  flipped.terminal = AdaptedProcess(n);
  for (NodeId u = 0; u < n; ++u) flipped.terminal[u] = -problem.terminal[u];
  if (problem.generator) {
    flipped.generator = [g = problem.generator](GeneratorPoint at, double y) { return -g(at, -y); };
  }
  if (!problem.drift.empty()) {
    flipped.drift = PredictableIncrements(n);
    for (NodeId u = 0; u < n; ++u) flipped.drift.edge(u) = -problem.drift.edge(u);
  }
  AdaptedProcess lower(n);
  for (NodeId u = 0; u < n; ++u) lower[u] = -(*problem.upper)[u];
  flipped.lower = std::move(lower);

  ScalarSolution r = solve_projected(tree, flipped, &*flipped.lower, nullptr);
  ScalarSolution s{AdaptedProcess(n), AdaptedProcess(n), PredictableIncrements(n), std::move(r.dk)};
  for (NodeId u = 0; u < n; ++u) {
    s.y[u] = -r.y[u];
    s.dm[u] = -r.dm[u];
  }
  return s;
}

ScalarSolution solve_unreflected(const EventTree& tree, const ScalarProblem& problem) {
  return solve_projected(tree, problem, nullptr, nullptr);
}

PenalizedSolution solve_penalized(const EventTree& tree, const ScalarProblem& problem,
                                  const PenalizationParams& params) {
  if (params.p < 0.0 || params.q < 0.0) throw PreconditionError("penalty weights must be non-negative");
  check_sizes(tree, problem);

  const AdaptedProcess* lower = problem.lower ? &*problem.lower : nullptr;
  const AdaptedProcess* upper = problem.upper ? &*problem.upper : nullptr;
  ScalarProblem augmented = problem;
  augmented.lower.reset();
  augmented.upper.reset();
  augmented.generator = [g = problem.generator, lower, upper, params](GeneratorPoint at, double y) {
    double v = g ? g(at, y) : 0.0;
    if (lower && params.p > 0.0) v += params.p * std::max((*lower)[at.node] - y, 0.0);
    if (upper && params.q > 0.0) v -= params.q * std::max(y - (*upper)[at.node], 0.0);
    return v;
  };

  PenalizedSolution out{solve_projected(tree, augmented, nullptr, nullptr)};
  const double dt = tree.dt();
  for (NodeId u : tree.backward_order()) {
    const double y = out.path.y[u];
    const double k = lower ? params.p * std::max((*lower)[u] - y, 0.0) * dt : 0.0;
    const double a = upper ? params.q * std::max(y - (*upper)[u], 0.0) * dt : 0.0;
    out.path.dk.set_at_parent(tree, u, k);
    out.path.da.set_at_parent(tree, u, a);
    out.lower_mass += tree.path_probability(u) * k;
    out.upper_mass += tree.path_probability(u) * a;
  }
  return out;
}

double verify_snell_representation(const EventTree& tree, const ScalarProblem& problem,
                                   const ScalarSolution& solution, const EnumerationCaps& caps) {
  if (!problem.lower) throw PreconditionError("Snell representation needs a lower barrier");
  const auto n = tree.size();
  const double dt = tree.dt();

  // running gain accumulated strictly before each node, from the root
  AdaptedProcess before(n);
  AdaptedProcess reward(n);
  for (NodeId u = 0; u < n; ++u) reward[u] = tree.is_leaf(u) ? problem.terminal[u] : (*problem.lower)[u];
  for (int t = 0; t < tree.horizon(); ++t) {
    for (NodeId u : tree.nodes_at(t)) {
      const double y = solution.y[u];
      const double gain = eval(problem.generator, {u, t}, y) * dt + drift_at(tree, problem.drift, u) -
                          solution.da.at_parent(tree, u);
      for (NodeId c : tree.children(u)) before[c] = before[u] + gain;
    }
  }

  double worst = 0.0;
  for (NodeId u = 0; u < n; ++u) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& sigma : enumerate_stopping_times(tree, caps, u)) {
      double value = 0.0;
      for (NodeId v : tree.subtree(u)) {
        if (sigma.stops_at(v)) value += tree.conditional_probability(v, u) * (reward[v] + before[v] - before[u]);
      }
      best = std::max(best, value);
    }
    worst = std::max(worst, std::abs(solution.y[u] - best));
  }
  return worst;
}

double ScalarResiduals::worst() const {
  return std::max({backward_identity, barrier, flat_off_k, flat_off_a, negative_increment, martingale,
                   predictable ? 0.0 : std::numeric_limits<double>::infinity()});
}

ScalarResiduals scalar_residuals(const EventTree& tree, const ScalarProblem& p, const ScalarSolution& s) {
  ScalarResiduals r;
  const double dt = tree.dt();
  r.predictable = !s.dk.first_unpredictable(tree) && !s.da.first_unpredictable(tree);
  for (NodeId u = 0; u < tree.size(); ++u) {
    const double y = s.y[u];
    if (p.lower) r.barrier = std::max(r.barrier, (*p.lower)[u] - y);
    if (p.upper) r.barrier = std::max(r.barrier, y - (*p.upper)[u]);
    if (tree.is_leaf(u)) {
      r.backward_identity = std::max(r.backward_identity, std::abs(y - p.terminal[u]));
      continue;
    }
    const double dk = s.dk.at_parent(tree, u);
    const double da = s.da.at_parent(tree, u);
    r.negative_increment = std::max({r.negative_increment, -dk, -da});
    const double l = p.lower ? (*p.lower)[u] : std::numeric_limits<double>::infinity();
    const double up = p.upper ? (*p.upper)[u] : std::numeric_limits<double>::infinity();
    r.flat_off_k = std::max(r.flat_off_k, std::min(dk, y - l));
    r.flat_off_a = std::max(r.flat_off_a, std::min(da, up - y));
    const double g = eval(p.generator, {u, tree.time(u)}, y) * dt + drift_at(tree, p.drift, u);
    double e = 0.0;
    for (NodeId c : tree.children(u)) {
      e += tree.probability(c) * s.dm[c];
      const double rebuilt = s.y[c] - s.dm[c] + g + dk - da;
      r.backward_identity = std::max(r.backward_identity, std::abs(y - rebuilt));
    }
    r.martingale = std::max(r.martingale, std::abs(e));
  }
  return r;
}

}  // namespace orbsde
