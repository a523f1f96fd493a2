#include "orbsde/oblique_system.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace orbsde {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double x) {
  std::ostringstream out;
  out.precision(10);
  out << x;
  return out.str();
}

std::string mode_name(int j) { return std::to_string(j + 1); }

double drift_at(const EventTree& tree, const ObliqueProblem& p, int j, NodeId u) {
  if (p.drift.empty() || p.drift[static_cast<std::size_t>(j)].empty()) return 0.0;
  return p.drift[static_cast<std::size_t>(j)].at_parent(tree, u);
}

double generator_at(const ObliqueProblem& p, int j, GeneratorPoint at, std::span<const double> y) {
  if (p.generators.empty()) return 0.0;
  const auto& f = p.generators[static_cast<std::size_t>(j)];
  return f ? f(at, y) : 0.0;
}

// Lowest and highest finite data values, used to place generator probes and the subsolution corner.
std::pair<double, double> data_range(const EventTree& tree, const ObliqueProblem& p) {
  double lo = kInf;
  double hi = -kInf;
  auto widen = [&](double x) {
    if (std::isfinite(x)) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  };
  for (int j = 0; j < p.modes; ++j) {
    for (NodeId leaf : tree.leaves()) widen(p.terminal[static_cast<std::size_t>(j)][leaf]);
    for (NodeId u = 0; u < tree.size(); ++u) widen(p.upper[static_cast<std::size_t>(j)][u]);
  }
  if (!(lo <= hi)) return {-1.0, 1.0};
  return {lo, hi};
}

bool sizes_ok(const EventTree& tree, const ObliqueProblem& p, ValidationReport& report) {
  const auto d = static_cast<std::size_t>(p.modes);
  const auto n = tree.size();
  auto fail = [&](const std::string& msg) { report.add({"structure", msg, {}, {}, {}}); };
  if (p.modes < 2) fail("need at least 2 modes, got " + std::to_string(p.modes));
  if (p.terminal.size() != d) fail("expected " + std::to_string(d) + " terminal conditions");
  if (p.upper.size() != d) fail("expected " + std::to_string(d) + " upper barriers");
  if (!p.generators.empty() && p.generators.size() != d) fail("expected " + std::to_string(d) + " generators");
  if (!p.drift.empty() && p.drift.size() != d) fail("expected " + std::to_string(d) + " drift processes");
  if (!p.custom_obstacle && p.costs.modes() != p.modes) fail("cost matrix size does not match the number of modes");
  for (const auto& x : p.terminal) {
    if (x.size() != n) fail("terminal condition size does not match tree");
  }
  for (const auto& x : p.upper) {
    if (x.size() != n) fail("upper barrier size does not match tree");
  }
  for (const auto& x : p.drift) {
    if (!x.empty() && x.size() != n) fail("drift size does not match tree");
  }
  if (p.subsolution) {
    if (p.subsolution->size() != d) fail("expected " + std::to_string(d) + " subsolution processes");
    for (const auto& x : *p.subsolution) {
      if (x.size() != n) fail("subsolution size does not match tree");
    }
  }
  return report.ok();
}

void check_costs(const EventTree& tree, const ObliqueProblem& p, ValidationReport& report) {
  const int d = p.modes;
  double worst_total = 0.0;
  for (int t = 0; t <= tree.horizon(); ++t) {
    const double s = tree.dt() * t;
    double worst_step = 0.0;
    for (int j = 0; j < d; ++j) {
      for (int k = 0; k < d; ++k) {
        if (j == k) continue;
        const double c = p.costs(j, k, s);
        worst_step = std::max(worst_step, std::abs(c));
        if (!(c > 0.0)) {
          report.add({"cost-positivity",
                      "c[" + mode_name(j) + "][" + mode_name(k) + "](" + fmt(s) + ") = " + fmt(c) + " is not positive",
                      {}, t, j});
        }
        for (int i = 0; i < d; ++i) {
          if (i == j || i == k) continue;
          const double lhs = p.costs(i, j, s) + c;
          const double rhs = p.costs(i, k, s);
          if (!(lhs > rhs)) {
            report.add({"triangle",
                        "c[" + mode_name(i) + "][" + mode_name(j) + "] + c[" + mode_name(j) + "][" + mode_name(k) +
                            "] ≤ c[" + mode_name(i) + "][" + mode_name(k) + "] at t=" + fmt(s) + ": " +
                            fmt(p.costs(i, j, s)) + " + " + fmt(c) + " ≤ " + fmt(rhs),
                        {}, t, i});
          }
        }
      }
    }
    if (t > 0) worst_total += worst_step;
  }
  report.notes.push_back("worst-case switching cost along a path (one switch per step): " + fmt(worst_total));
}

void check_barriers(const EventTree& tree, const ObliqueProblem& p, ValidationReport& report) {
  const int d = p.modes;
  for (NodeId u = 0; u < tree.size(); ++u) {
    const double s = tree.physical_time(u);
    const auto up = state_vector(p.upper, u);
    const auto h = evaluate_H(p, s, up);
    for (int j = 0; j < d; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      if (std::isnan(up[jj])) {
        report.add({"upper-barrier", "U^" + mode_name(j) + " is NaN", u, tree.time(u), j});
      } else if (h[jj] > up[jj]) {
        report.add({"H(U) > U",
                    "H(U) ≰ U: H^" + mode_name(j) + "(U) = " + fmt(h[jj]) + " > U^" + mode_name(j) + " = " +
                        fmt(up[jj]) + " at t=" + fmt(s),
                    u, tree.time(u), j});
      }
    }
    if (p.subsolution) {
      for (int j = 0; j < d; ++j) {
        const double y = (*p.subsolution)[static_cast<std::size_t>(j)][u];
        if (!(y <= up[static_cast<std::size_t>(j)])) {
          report.add({"subsolution", "explicit subsolution above U^" + mode_name(j), u, tree.time(u), j});
        } else if (tree.is_leaf(u) && !(y <= p.terminal[static_cast<std::size_t>(j)][u])) {
          report.add({"subsolution", "explicit subsolution above ξ^" + mode_name(j), u, tree.time(u), j});
        }
      }
    }
    if (!tree.is_leaf(u)) continue;
    const auto xi = state_vector(p.terminal, u);
    const auto hx = evaluate_H(p, s, xi);
    for (int j = 0; j < d; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      if (!std::isfinite(xi[jj])) {
        report.add({"terminal", "ξ^" + mode_name(j) + " is not finite", u, tree.time(u), j});
      } else if (hx[jj] > xi[jj] || xi[jj] > up[jj]) {
        report.add({"terminal-sandwich",
                    "H(ξ) ≤ ξ ≤ U fails for mode " + mode_name(j) + ": " + fmt(hx[jj]) + ", " + fmt(xi[jj]) + ", " +
                        fmt(up[jj]),
                    u, tree.time(u), j});
      }
    }
  }
}

// Finite-difference probes of the generators on a small grid around the data.
void check_generators(const EventTree& tree, const ObliqueProblem& p, ValidationReport& report) {
  if (p.generators.empty()) return;
  const int d = p.modes;
  const auto [lo, hi] = data_range(tree, p);
  const double pad = 1.0 + 0.5 * (hi - lo);
  const std::vector<double> levels = {lo - pad, 0.5 * (lo + hi), hi + pad};
  const double step = 0.5 * (hi - lo) + pad;
  const int per_axis = d <= 4 ? 3 : 2;
  std::size_t combos = 1;
  for (int j = 0; j < d; ++j) combos *= static_cast<std::size_t>(per_axis);

  const auto& nodes = tree.backward_order();
  const std::size_t stride = std::max<std::size_t>(1, nodes.size() / 512);
  std::vector<double> y(static_cast<std::size_t>(d));
  std::vector<double> z(static_cast<std::size_t>(d));
  for (std::size_t idx = 0; idx < nodes.size(); idx += stride) {
    const NodeId u = nodes[idx];
    const GeneratorPoint at{u, tree.time(u)};
    for (int j = 0; j < d; ++j) {
      if (!p.generators[static_cast<std::size_t>(j)]) continue;
      bool reported_a2 = false;
      bool reported_a3 = false;
      bool reported_cont = false;
      for (std::size_t c = 0; c < combos; ++c) {
        std::size_t code = c;
        for (int k = 0; k < d; ++k) {
          y[static_cast<std::size_t>(k)] = levels[code % static_cast<std::size_t>(per_axis)];
          code /= static_cast<std::size_t>(per_axis);
        }
        const double f0 = generator_at(p, j, at, y);
        if (!std::isfinite(f0)) {
          report.add({"generator-finite", "f^" + mode_name(j) + " is not finite", u, at.time, j});
          break;
        }
        for (int k = 0; k < d; ++k) {
          const auto kk = static_cast<std::size_t>(k);
          z = y;
          z[kk] += step;
          const double f1 = generator_at(p, j, at, z);
          const double scale = 1e-12 * (1.0 + std::abs(f0) + std::abs(f1));
          if (k == j && f1 > f0 + scale && !reported_a2) {
            report.add({"generator-on-diagonal", "f^" + mode_name(j) + " increases in its own component", u,
                        at.time, j});
            reported_a2 = true;
          }
          if (k != j && f1 < f0 - scale && !reported_a3) {
            report.add({"generator-off-diagonal",
                        "f^" + mode_name(j) + " decreases in component " + mode_name(k), u, at.time, j});
            reported_a3 = true;
          }
          z[kk] = y[kk] + 1e-7 * (1.0 + std::abs(y[kk]));
          const double fe = generator_at(p, j, at, z);
          if (!(std::abs(fe - f0) <= 1e-3 * (1.0 + std::abs(f0))) && !reported_cont) {
            report.add({"generator-continuity",
                        "f^" + mode_name(j) + " jumps in component " + mode_name(k), u, at.time, j});
            reported_cont = true;
          }
        }
      }
    }
  }
}

// Y of mode j at every node, given the current iterate of all modes.
ScalarSolution finalize_mode(const EventTree& tree, const ObliqueProblem& p, const std::vector<AdaptedProcess>& y,
                             int j) {
  const auto n = tree.size();
  const auto& yj = y[static_cast<std::size_t>(j)];
  ScalarSolution s{yj, AdaptedProcess(n), PredictableIncrements(n), PredictableIncrements(n)};
  for (NodeId u : tree.backward_order()) {
    const double expected = conditional_expectation(tree, yj, u);
    const auto yu = state_vector(y, u);
    const double phi =
        yj[u] - generator_at(p, j, {u, tree.time(u)}, yu) * tree.dt() - expected - drift_at(tree, p, j, u);
    s.dk.set_at_parent(tree, u, (phi > 0.0 ? phi : 0.0));
    s.da.set_at_parent(tree, u, (phi < 0.0 ? -phi : 0.0));
    for (NodeId c : tree.children(u)) s.dm[c] = yj[c] - expected;
  }
  return s;
}

std::vector<AdaptedProcess> values_of(const std::vector<ScalarSolution>& modes) {
  std::vector<AdaptedProcess> y;
  y.reserve(modes.size());
  for (const auto& m : modes) y.push_back(m.y);
  return y;
}

}  // namespace

double Polynomial::operator()(double t) const {
  double v = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) v = v * t + *it;
  return v;
}

CostMatrix::CostMatrix(int modes, double constant)
    : modes_(modes), entries_(static_cast<std::size_t>(modes * modes), Polynomial{{constant}}) {
  for (int j = 0; j < modes; ++j) entries_[index(j, j)] = Polynomial{{0.0}};
}

CostMatrix CostMatrix::from_constants(const std::vector<std::vector<double>>& c) {
  const int d = static_cast<int>(c.size());
  CostMatrix m(d, 0.0);
  for (int j = 0; j < d; ++j) {
    if (static_cast<int>(c[static_cast<std::size_t>(j)].size()) != d) {
      throw PreconditionError("cost matrix must be square");
    }
    for (int k = 0; k < d; ++k) {
      if (j != k) m.set(j, k, Polynomial{{c[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]}});
    }
  }
  return m;
}

std::vector<double> evaluate_H(const CostMatrix& costs, double t, std::span<const double> y) {
  const int d = static_cast<int>(y.size());
  std::vector<double> h(y.size(), -kInf);
  for (int j = 0; j < d; ++j) {
    for (int k = 0; k < d; ++k) {
      if (k != j) h[static_cast<std::size_t>(j)] = std::max(h[static_cast<std::size_t>(j)], y[static_cast<std::size_t>(k)] - costs(j, k, t));
    }
  }
  return h;
}

std::vector<double> evaluate_H(const ObliqueProblem& problem, double t, std::span<const double> y) {
  if (!problem.custom_obstacle) return evaluate_H(problem.costs, t, y);
  std::vector<double> h(y.size());
  for (int j = 0; j < static_cast<int>(y.size()); ++j) h[static_cast<std::size_t>(j)] = problem.custom_obstacle(j, t, y);
  return h;
}

std::vector<double> state_vector(const std::vector<AdaptedProcess>& y, NodeId u) {
  std::vector<double> v(y.size());
  for (std::size_t j = 0; j < y.size(); ++j) v[j] = y[j][u];
  return v;
}

ValidationReport validate_problem(const EventTree& tree, const ObliqueProblem& problem) {
  ValidationReport report;
  if (!sizes_ok(tree, problem, report)) return report;
  if (problem.custom_obstacle) {
    report.notes.push_back("general obstacle: cost checks skipped, uniqueness not asserted");
  } else {
    check_costs(tree, problem, report);
  }
  check_barriers(tree, problem, report);
  check_generators(tree, problem, report);
  return report;
}

Subsolution build_subsolution(const EventTree& tree, const ObliqueProblem& problem, int restart) {
  const int d = problem.modes;
  const auto n = tree.size();
  Subsolution sub;
  if (problem.subsolution) {
    for (int j = 0; j < d; ++j) {
      const auto& y = (*problem.subsolution)[static_cast<std::size_t>(j)];
      sub.modes.push_back({y, AdaptedProcess(n), PredictableIncrements(n), PredictableIncrements(n)});
    }
    return sub;
  }

  const double margin = (1.0 + problem.subsolution_slack) * std::pow(10.0, restart);
  sub.corner.assign(static_cast<std::size_t>(d), kInf);
  for (NodeId u = 0; u < n; ++u) {
    const auto up = state_vector(problem.upper, u);
    const auto h = evaluate_H(problem, tree.physical_time(u), up);
    for (int j = 0; j < d; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      double& c = sub.corner[jj];
      if (std::isfinite(up[jj])) c = std::min(c, up[jj]);
      if (std::isfinite(h[jj])) c = std::min(c, h[jj]);
      if (tree.is_leaf(u)) c = std::min(c, problem.terminal[jj][u]);
    }
  }
  for (auto& c : sub.corner) c -= margin;

  for (int j = 0; j < d; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    ScalarProblem sp;
    sp.terminal = problem.terminal[jj];
    if (!problem.generators.empty() && problem.generators[jj]) {
      sp.generator = [f = problem.generators[jj], y = sub.corner, j](GeneratorPoint at, double c) mutable {
        const double keep = y[static_cast<std::size_t>(j)];
        y[static_cast<std::size_t>(j)] = c;
        const double v = f(at, y);
        y[static_cast<std::size_t>(j)] = keep;
        return v;
      };
    }
    if (!problem.drift.empty()) sp.drift = problem.drift[jj];
    sp.upper = problem.upper[jj];
    sub.modes.push_back(solve_upper(tree, sp));
  }
  return sub;
}

std::vector<AdaptedProcess> SystemSolution::values() const { return values_of(modes); }

ScalarProblem mode_problem(const EventTree& tree, const ObliqueProblem& problem, const std::vector<AdaptedProcess>& y,
                           int mode) {
  const auto jj = static_cast<std::size_t>(mode);
  const auto d = static_cast<std::size_t>(problem.modes);
  ScalarProblem sp;
  sp.terminal = problem.terminal[jj];
  if (!problem.generators.empty() && problem.generators[jj]) {
    // flat copy of the frozen iterate, one row per node
    std::vector<double> frozen(tree.size() * d);
    for (NodeId u = 0; u < tree.size(); ++u) {
      for (std::size_t k = 0; k < d; ++k) frozen[u * d + k] = y[k][u];
    }
    sp.generator = [f = problem.generators[jj], frozen = std::move(frozen), d, jj,
                    buf = std::vector<double>(d)](GeneratorPoint at, double c) mutable {
      std::copy_n(frozen.begin() + static_cast<std::ptrdiff_t>(at.node * d), d, buf.begin());
      buf[jj] = c;
      return f(at, buf);
    };
  }
  if (!problem.drift.empty()) sp.drift = problem.drift[jj];
  AdaptedProcess lower(tree.size());
  for (NodeId u = 0; u < tree.size(); ++u) {
    lower[u] = evaluate_H(problem, tree.physical_time(u), state_vector(y, u))[jj];
  }
  sp.lower = std::move(lower);
  sp.upper = problem.upper[jj];
  return sp;
}

SystemSolution picard_solve(const EventTree& tree, const ObliqueProblem& problem, const PicardOptions& options) {
  if (!(options.tol > 0.0)) throw PreconditionError("tolerance must be positive");
  if (options.max_sweeps < 1) throw PreconditionError("max_sweeps must be at least 1");
  if (options.validate) {
    auto report = validate_problem(tree, problem);
    if (!report.ok()) throw ValidationError(std::move(report));
  }

  const int d = problem.modes;
  const int restarts = problem.subsolution ? 0 : options.max_restarts;
  SystemSolution out;

  for (int restart = 0; restart <= restarts; ++restart) {
    Subsolution sub = build_subsolution(tree, problem, restart);
    out.log.restarts = restart;
    out.log.corner = sub.corner;
    std::vector<AdaptedProcess> prev = values_of(sub.modes);
    bool restart_needed = false;
    int converged_at = 0;
    int polish = 0;

    for (int sweep = 1;; ++sweep) {
      std::vector<ScalarSolution> cur;
      cur.reserve(static_cast<std::size_t>(d));
      for (int j = 0; j < d; ++j) cur.push_back(solve_two_barrier(tree, mode_problem(tree, problem, prev, j)));

      SweepRecord rec{sweep, restart, 0.0, kInf};
      NodeId worst_node = 0;
      int worst_mode = 0;
      for (int j = 0; j < d; ++j) {
        for (NodeId u = 0; u < tree.size(); ++u) {
          const double inc = cur[static_cast<std::size_t>(j)].y[u] - prev[static_cast<std::size_t>(j)][u];
          rec.delta = std::max(rec.delta, std::abs(inc));
          if (inc < rec.min_increment) {
            rec.min_increment = inc;
            worst_node = u;
            worst_mode = j;
          }
        }
      }
      out.log.sweeps.push_back(rec);
      if (options.on_sweep) options.on_sweep(rec, cur);

      if (rec.min_increment < -options.monotone_slack) {
        if (restart < restarts) {
          restart_needed = true;
          break;
        }
        throw ConvergenceError(ConvergenceError::Kind::NonMonotoneSweep,
                               "sweep " + std::to_string(sweep) + " decreased mode " + mode_name(worst_mode) +
                                   " by " + fmt(-rec.min_increment) + " at node " + std::to_string(worst_node) +
                                   "; subsolution not low enough after " + std::to_string(restart) + " restart(s)",
                               sweep, rec.delta, worst_node, worst_mode);
      }
      prev = values_of(cur);

      if (converged_at == 0) {
        if (rec.delta <= options.tol) {
          converged_at = sweep;
        } else if (sweep >= options.max_sweeps) {
          throw ConvergenceError(ConvergenceError::Kind::MaxSweepsExhausted,
                                 "no convergence after " + std::to_string(sweep) + " sweeps, delta " + fmt(rec.delta),
                                 sweep, rec.delta);
        }
      } else {
        ++polish;
      }
      if (converged_at != 0 && (rec.delta == 0.0 || polish >= options.max_polish_sweeps)) break;
    }
    if (restart_needed) continue;

    out.log.sweeps_to_tolerance = converged_at;
    out.log.polish_sweeps = polish;
    out.modes.clear();
    for (int j = 0; j < d; ++j) out.modes.push_back(finalize_mode(tree, problem, prev, j));
    return out;
  }
  throw ConvergenceError(ConvergenceError::Kind::NonMonotoneSweep, "restarts exhausted", 0, 0.0);
}

std::vector<std::vector<int>> binding_cycles(const CostMatrix& costs, double t, std::span<const double> y, double tol) {
  const int d = static_cast<int>(y.size());
  auto binds = [&](int j, int k) {
    return std::abs(y[static_cast<std::size_t>(j)] - (y[static_cast<std::size_t>(k)] - costs(j, k, t))) <= tol;
  };
  std::vector<std::vector<int>> cycles;
  std::vector<int> state(static_cast<std::size_t>(d), 0);  // 0 new, 1 on stack, 2 done
  std::vector<int> stack;
  std::function<void(int)> visit = [&](int j) {
    state[static_cast<std::size_t>(j)] = 1;
    stack.push_back(j);
    for (int k = 0; k < d; ++k) {
      if (k == j || !binds(j, k)) continue;
      if (state[static_cast<std::size_t>(k)] == 1) {
        auto from = std::find(stack.begin(), stack.end(), k);
        cycles.emplace_back(from, stack.end());
      } else if (state[static_cast<std::size_t>(k)] == 0) {
        visit(k);
      }
    }
    stack.pop_back();
    state[static_cast<std::size_t>(j)] = 2;
  };
  for (int j = 0; j < d; ++j) {
    if (state[static_cast<std::size_t>(j)] == 0) visit(j);
  }
  return cycles;
}

double MinimalityReport::worst() const {
  return std::max({sandwich_lower, sandwich_upper, flat_off_k, flat_off_a, backward_identity, martingale,
                   negative_increment, predictable && cycles.empty() ? 0.0 : kInf});
}

MinimalityReport verify_minimality(const EventTree& tree, const ObliqueProblem& problem,
                                   const SystemSolution& solution, double tol) {
  MinimalityReport r;
  const int d = problem.modes;
  if (static_cast<int>(solution.modes.size()) != d) {
    r.violations.push_back({"structure", "solution has " + std::to_string(solution.modes.size()) + " modes", {}, {}, {}});
    r.predictable = false;
    return r;
  }
  const auto y = solution.values();
  auto note = [&](double& metric, double value, const char* code, const std::string& what, NodeId u, int j) {
    metric = std::max(metric, value);
    if (value > tol) r.violations.push_back({code, what + " = " + fmt(value), u, tree.time(u), j});
  };

  for (int j = 0; j < d; ++j) {
    const auto& s = solution.modes[static_cast<std::size_t>(j)];
    if (s.dk.first_unpredictable(tree) || s.da.first_unpredictable(tree)) {
      r.predictable = false;
      r.violations.push_back({"predictable", "K or A differs across sibling edges", {}, {}, j});
    }
  }

  for (NodeId u = 0; u < tree.size(); ++u) {
    const double t = tree.physical_time(u);
    const auto yu = state_vector(y, u);
    const auto h = evaluate_H(problem, t, yu);
    for (int j = 0; j < d; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      const auto& s = solution.modes[jj];
      const double up = problem.upper[jj][u];
      note(r.sandwich_lower, h[jj] - yu[jj], "sandwich-lower", "H^" + mode_name(j) + "(Y) − Y^" + mode_name(j), u, j);
      note(r.sandwich_upper, yu[jj] - up, "sandwich-upper", "Y^" + mode_name(j) + " − U^" + mode_name(j), u, j);
      if (tree.is_leaf(u)) {
        note(r.backward_identity, std::abs(yu[jj] - problem.terminal[jj][u]), "backward-identity",
             "|Y − ξ| for mode " + mode_name(j), u, j);
        continue;
      }
      const double dk = s.dk.at_parent(tree, u);
      const double da = s.da.at_parent(tree, u);
      note(r.negative_increment, std::max(-dk, -da), "negative-increment", "negative ΔK or ΔA", u, j);
      note(r.flat_off_k, std::min(dk, yu[jj] - h[jj]), "flat-off-K", "min(ΔK, Y − H(Y)) for mode " + mode_name(j),
           u, j);
      note(r.flat_off_a, std::min(da, up - yu[jj]), "flat-off-A", "min(ΔA, U − Y) for mode " + mode_name(j), u, j);
      const double drive = generator_at(problem, j, {u, tree.time(u)}, yu) * tree.dt() + drift_at(tree, problem, j, u);
      double e = 0.0;
      double worst_edge = 0.0;
      for (NodeId c : tree.children(u)) {
        e += tree.probability(c) * s.dm[c];
        worst_edge = std::max(worst_edge, std::abs(yu[jj] - (s.y[c] - s.dm[c] + drive + dk - da)));
      }
      note(r.backward_identity, worst_edge, "backward-identity", "backward identity residual for mode " + mode_name(j),
           u, j);
      note(r.martingale, std::abs(e), "martingale", "|E[ΔM | u]| for mode " + mode_name(j), u, j);
    }
    if (!problem.custom_obstacle) {
      for (auto& cycle : binding_cycles(problem.costs, t, yu, tol)) {
        std::string names;
        for (int j : cycle) names += (names.empty() ? "" : "→") + mode_name(j);
        r.violations.push_back({"binding-cycle", "modes " + names + " bind in a cycle", u, tree.time(u), cycle.front()});
        r.cycles.push_back({u, std::move(cycle)});
      }
    }
  }
  return r;
}

}  // namespace orbsde
