#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "orbsde/oblique_system.hpp"
#include "orbsde/switching.hpp"
#include "support/instances.hpp"

using namespace orbsde;
using namespace orbsde::testing;

namespace {

bool has_code(const ValidationReport& r, const std::string& code) {
  return std::any_of(r.violations.begin(), r.violations.end(), [&](const Violation& v) { return v.code == code; });
}

std::vector<AdaptedProcess> constant_modes(const EventTree& tree, int d, double v) {
  return std::vector<AdaptedProcess>(static_cast<std::size_t>(d), AdaptedProcess(tree.size(), v));
}

// The two-mode example with no solution: H(y) = (y² − 1, y¹ − 1), U = (2, t) on [0, 2], ξ = (2, 2).
ObliqueProblem counterexample(const EventTree& tree) {
  ObliqueProblem p;
  p.modes = 2;
  p.costs = CostMatrix(2, 1.0);
  p.terminal = constant_modes(tree, 2, 2.0);
  p.upper = {AdaptedProcess(tree.size(), 2.0), AdaptedProcess::from(tree, [&](NodeId u) { return tree.physical_time(u); })};
  return p;
}

ObliqueProblem zero_problem(const EventTree& tree, int d, double cost) {
  ObliqueProblem p;
  p.modes = d;
  p.costs = CostMatrix(d, cost);
  p.terminal = constant_modes(tree, d, 0.0);
  p.upper = constant_modes(tree, d, 10.0);
  return p;
}

ScalarProblem upper_only(const ObliqueProblem& p, int j) {
  const auto jj = static_cast<std::size_t>(j);
  ScalarProblem sp;
  sp.terminal = p.terminal[jj];
  if (!p.generators.empty() && p.generators[jj]) {
    sp.generator = [f = p.generators[jj], d = p.modes, j](GeneratorPoint at, double y) {
      std::vector<double> v(static_cast<std::size_t>(d), 0.0);
      v[static_cast<std::size_t>(j)] = y;
      return f(at, v);
    };
  }
  if (!p.drift.empty()) sp.drift = p.drift[jj];
  sp.upper = p.upper[jj];
  return sp;
}

}  // namespace

TEST_CASE("obstacle examples") {
  SUBCASE("two modes") {
    const auto c = CostMatrix(2, 1.0);
    const std::vector<double> y{5.0, 3.0};
    CHECK(evaluate_H(c, 0.0, y) == std::vector<double>{2.0, 4.0});
  }
  SUBCASE("three modes at zero") {
    const auto c = CostMatrix(3, 1.0);
    const std::vector<double> y{0.0, 0.0, 0.0};
    CHECK(evaluate_H(c, 0.0, y) == std::vector<double>{-1.0, -1.0, -1.0});
  }
  SUBCASE("raising one component") {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
      const int d = uniform_int(rng, 2, 4);
      CostMatrix c(d, 0.0);
      for (int j = 0; j < d; ++j) {
        for (int k = 0; k < d; ++k) {
          if (j != k) c.set(j, k, Polynomial{{uniform(rng, 0.1, 1.0), uniform(rng, 0.0, 0.1)}});
        }
      }
      std::vector<double> y(static_cast<std::size_t>(d));
      for (auto& v : y) v = uniform(rng, -1.0, 1.0);
      auto z = y;
      const int bumped = uniform_int(rng, 0, d - 1);
      z[static_cast<std::size_t>(bumped)] += uniform(rng, 0.0, 1.0);
      const double t = uniform(rng, 0.0, 2.0);
      const auto hy = evaluate_H(c, t, y);
      const auto hz = evaluate_H(c, t, z);
      for (int j = 0; j < d; ++j) {
        const auto jj = static_cast<std::size_t>(j);
        if (j == bumped) {
          CHECK(hz[jj] == hy[jj]);
        } else {
          CHECK(hz[jj] >= hy[jj]);
        }
      }
    }
  }
  SUBCASE("time-dependent costs") {
    CostMatrix c(2, 0.0);
    c.set(0, 1, Polynomial{{1.0, 2.0}});
    c.set(1, 0, Polynomial{{0.5}});
    const std::vector<double> y{1.0, 4.0};
    CHECK(evaluate_H(c, 0.5, y) == std::vector<double>{2.0, 0.5});
    CHECK(c(0, 0, 3.0) == 0.0);
  }
}

TEST_CASE("the two-mode counterexample is rejected at exactly the early nodes") {
  const auto tree = EventTree::chain(8, 0.25);
  const auto report = validate_problem(tree, counterexample(tree));
  std::vector<NodeId> flagged;
  for (const auto& v : report.violations) {
    REQUIRE(v.code == "H(U) > U");
    CHECK(v.mode == 1);
    CHECK(v.message.find("H(U) ≰ U") != std::string::npos);
    flagged.push_back(*v.node);
  }
  std::sort(flagged.begin(), flagged.end());
  std::vector<NodeId> early;
  for (NodeId u = 0; u < tree.size(); ++u) {
    if (tree.physical_time(u) < 1.0) early.push_back(u);
  }
  CHECK(flagged == early);
  CHECK(early.size() == 4);
  CHECK_THROWS_AS(picard_solve(tree, counterexample(tree)), ValidationError);
}

TEST_CASE("cost validation") {
  const auto tree = EventTree::uniform(2, 2, 1.0);
  SUBCASE("two modes have no triangle") {
    auto p = zero_problem(tree, 2, 1.0);
    CHECK(validate_problem(tree, p).ok());
  }
  SUBCASE("three modes with a shortcut") {
    auto p = zero_problem(tree, 3, 1.0);
    p.costs.set(0, 2, Polynomial{{3.0}});
    const auto r = validate_problem(tree, p);
    REQUIRE(has_code(r, "triangle"));
    bool found = false;
    for (const auto& v : r.violations) found = found || v.message.find("1 + 1 ≤ 3") != std::string::npos;
    CHECK(found);
  }
  SUBCASE("equality in the triangle is a violation") {
    auto p = zero_problem(tree, 3, 1.0);
    p.costs.set(0, 2, Polynomial{{2.0}});
    CHECK(has_code(validate_problem(tree, p), "triangle"));
  }
  SUBCASE("costs that turn negative in time") {
    auto p = zero_problem(tree, 2, 1.0);
    p.costs.set(1, 0, Polynomial{{1.0, -0.75}});
    const auto r = validate_problem(tree, p);
    REQUIRE(has_code(r, "cost-positivity"));
    CHECK(r.violations.front().time == 2);
  }
  SUBCASE("a worst-case switching cost note is always present") {
    auto p = zero_problem(tree, 2, 1.5);
    const auto r = validate_problem(tree, p);
    REQUIRE(r.notes.size() == 1);
    CHECK(r.notes[0].find("3") != std::string::npos);
  }
}

TEST_CASE("barrier and generator validation") {
  const auto tree = EventTree::uniform(2, 2, 1.0);
  SUBCASE("terminal above U") {
    auto p = zero_problem(tree, 2, 1.0);
    p.terminal[0][4] = 11.0;
    CHECK(has_code(validate_problem(tree, p), "terminal-sandwich"));
  }
  SUBCASE("terminal below H") {
    auto p = zero_problem(tree, 2, 1.0);
    p.terminal[0][4] = 3.0;
    p.terminal[1][4] = 1.0;
    CHECK(has_code(validate_problem(tree, p), "terminal-sandwich"));
  }
  SUBCASE("generator increasing in its own component") {
    auto p = zero_problem(tree, 2, 1.0);
    p.generators = {[](GeneratorPoint, std::span<const double> y) { return y[0]; }, {}};
    const auto r = validate_problem(tree, p);
    CHECK(has_code(r, "generator-on-diagonal"));
    CHECK_FALSE(has_code(r, "generator-off-diagonal"));
  }
  SUBCASE("generator decreasing in another component") {
    auto p = zero_problem(tree, 2, 1.0);
    p.generators = {[](GeneratorPoint, std::span<const double> y) { return -y[1]; }, {}};
    CHECK(has_code(validate_problem(tree, p), "generator-off-diagonal"));
  }
  SUBCASE("discontinuous generator") {
    auto p = zero_problem(tree, 2, 1.0);
    // sawtooth with a fine period, so every probe straddles jumps
    p.generators = {[](GeneratorPoint, std::span<const double> y) {
                      const double x = y[0] * 3e6;
                      return -10.0 * (x - std::floor(x));
                    },
                    {}};
    CHECK(has_code(validate_problem(tree, p), "generator-continuity"));
  }
  SUBCASE("size mismatch") {
    auto p = zero_problem(tree, 2, 1.0);
    p.upper.pop_back();
    CHECK(has_code(validate_problem(tree, p), "structure"));
  }
}

TEST_CASE("subsolution examples") {
  Rng rng(42);
  SUBCASE("decoupled generators give the upper-barrier solves") {
    for (int trial = 0; trial < 10; ++trial) {
      auto inst = random_oblique(rng, {{3, 1, 3, 0.5, false}, 2, false, true, true});
      const auto sub = build_subsolution(inst.tree, inst.problem);
      for (int j = 0; j < 2; ++j) {
        const auto ref = solve_upper(inst.tree, upper_only(inst.problem, j));
        CHECK(sub.modes[static_cast<std::size_t>(j)].y == ref.y);
      }
    }
  }
  SUBCASE("zero generator is the projected conditional expectation") {
    const auto tree = EventTree::uniform(2, 2, 1.0);
    auto p = zero_problem(tree, 2, 1.0);
    p.terminal[0] = AdaptedProcess(std::vector<double>{0, 0, 0, 4.0, 2.0, 0.0, 0.0});
    p.terminal[1] = p.terminal[0];
    p.upper[0] = AdaptedProcess(std::vector<double>{10, 2.5, 10, 10, 10, 10, 10});
    p.upper[1] = AdaptedProcess(std::vector<double>{10, 2.6, 10, 10, 10, 10, 10});
    REQUIRE(validate_problem(tree, p).ok());
    const auto sub = build_subsolution(tree, p);
    CHECK(sub.modes[0].y[1] == 2.5);
    CHECK(sub.modes[0].y[2] == 0.0);
    CHECK(sub.modes[0].y[0] == 1.25);
    CHECK(sub.modes[1].y[0] == 1.3);
  }
  SUBCASE("coupled subsolution lies below the limit") {
    for (int trial = 0; trial < 10; ++trial) {
      auto inst = random_oblique(rng, {{2, 2, 2, 0.5, false}, 2, true, true, true});
      const auto sub = build_subsolution(inst.tree, inst.problem);
      const auto sol = picard_solve(inst.tree, inst.problem);
      for (std::size_t j = 0; j < 2; ++j) {
        for (NodeId u = 0; u < inst.tree.size(); ++u) CHECK(sub.modes[j].y[u] <= sol.modes[j].y[u] + 1e-12);
      }
    }
  }
}

TEST_CASE("huge costs decouple the system") {
  Rng rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    auto inst = random_oblique(rng, {{3, 1, 3, 0.5, false}, 2, false, true, false});
    inst.problem.costs = CostMatrix(2, 1e6);
    const auto sol = picard_solve(inst.tree, inst.problem);
    for (int j = 0; j < 2; ++j) {
      const auto ref = solve_upper(inst.tree, upper_only(inst.problem, j));
      const auto& s = sol.modes[static_cast<std::size_t>(j)];
      for (NodeId u = 0; u < inst.tree.size(); ++u) {
        CHECK(std::abs(s.y[u] - ref.y[u]) <= 1e-12);
        CHECK(s.dk.edge(u) <= 1e-12);
      }
    }
  }
}

TEST_CASE("exchangeable modes have equal values") {
  Rng rng(44);
  for (int trial = 0; trial < 10; ++trial) {
    const auto tree = random_tree(rng, {3, 1, 3, 0.5, false});
    ObliqueProblem p;
    p.modes = 2;
    p.costs = CostMatrix(2, uniform(rng, 0.1, 0.5));
    const auto xi = random_process(tree, rng, 0.0, 1.0);
    const auto up = AdaptedProcess::from(tree, [&](NodeId u) { return 1.2 + 0.1 * std::sin(static_cast<double>(u)); });
    p.terminal = {xi, xi};
    p.upper = {up, up};
    const auto a = random_process(tree, rng, -1.0, 1.0);
    for (std::size_t j = 0; j < 2; ++j) {
      p.generators.push_back([a, j](GeneratorPoint at, std::span<const double> y) {
        return a[at.node] - 0.5 * y[j] + 0.2 * y[1 - j];
      });
    }
    const auto sol = picard_solve(tree, p);
    for (NodeId u = 0; u < tree.size(); ++u) CHECK(std::abs(sol.modes[0].y[u] - sol.modes[1].y[u]) <= 1e-14);
  }
}

TEST_CASE("Picard root values match the switching brute force") {
  Rng rng(45);
  for (int trial = 0; trial < 10; ++trial) {
    const auto tree = EventTree::uniform(2, 2, 0.5);
    ObliqueProblem p;
    p.modes = 2;
    p.costs = CostMatrix::from_constants({{0.0, uniform(rng, 0.05, 0.5)}, {uniform(rng, 0.05, 0.5), 0.0}});
    p.upper = {AdaptedProcess(tree.size(), 2.0), AdaptedProcess(tree.size(), 2.0)};
    p.terminal = {random_process(tree, rng, 0.0, 1.0), random_process(tree, rng, 0.0, 1.0)};
    // keep H(ξ) ≤ ξ
    for (NodeId leaf : tree.leaves()) {
      const double lo = std::max(p.terminal[0][leaf] - p.costs(1, 0, 1.0), p.terminal[1][leaf]);
      p.terminal[1][leaf] = lo;
      p.terminal[0][leaf] = std::max(p.terminal[0][leaf], p.terminal[1][leaf] - p.costs(0, 1, 1.0));
    }
    REQUIRE(validate_problem(tree, p).ok());
    const auto sol = picard_solve(tree, p);
    for (int j = 0; j < 2; ++j) {
      const auto bf = brute_force_value(tree, p, tree.root(), j);
      CHECK(std::abs(sol.modes[static_cast<std::size_t>(j)].y[tree.root()] - bf.value) <= 1e-8);
    }
  }
}

TEST_CASE("Picard output passes the minimality checks") {
  Rng rng(46);
  for (int trial = 0; trial < 40; ++trial) {
    const int d = trial % 2 == 0 ? 2 : 3;
    auto inst = random_oblique(rng, {{uniform_int(rng, 1, 4), 1, 3, uniform(rng, 0.1, 1.0), trial % 4 < 2}, d,
                                     trial % 3 != 0, true, true});
    REQUIRE(validate_problem(inst.tree, inst.problem).ok());
    const auto sol = picard_solve(inst.tree, inst.problem);
    const auto r = verify_minimality(inst.tree, inst.problem, sol);
    CHECK(r.ok());
    CHECK(r.worst() <= 1e-10);
    CHECK(r.cycles.empty());
    CHECK(sol.log.sweeps_to_tolerance >= 1);
    CHECK(sol.log.sweeps_to_tolerance <= 200);
  }
}

TEST_CASE("corrupted solutions are caught") {
  Rng rng(47);
  auto inst = random_oblique(rng, {{3, 2, 2, 0.5, false}, 2, true, true, true});
  const auto& tree = inst.tree;
  const auto sol = picard_solve(tree, inst.problem);
  REQUIRE(verify_minimality(tree, inst.problem, sol).ok());

  SUBCASE("extra push where the obstacle is slack") {
    auto bad = sol;
    const auto y = sol.values();
    std::optional<NodeId> target;
    for (NodeId u : tree.backward_order()) {
      const auto h = evaluate_H(inst.problem, tree.physical_time(u), state_vector(y, u));
      if (y[0][u] - h[0] > 1e-3) target = u;
    }
    REQUIRE(target);
    bad.modes[0].dk.set_at_parent(tree, *target, bad.modes[0].dk.at_parent(tree, *target) + 1.0);
    const auto r = verify_minimality(tree, inst.problem, bad);
    CHECK(r.flat_off_k >= 1e-3);
    const bool located = std::any_of(r.violations.begin(), r.violations.end(), [&](const Violation& v) {
      return v.code == "flat-off-K" && v.node == target && v.mode == 0;
    });
    CHECK(located);
  }
  SUBCASE("value below the obstacle") {
    auto bad = sol;
    const NodeId u = tree.root();
    const auto h = evaluate_H(inst.problem, 0.0, state_vector(sol.values(), u));
    bad.modes[1].y[u] = h[1] - 0.5;
    const auto r = verify_minimality(tree, inst.problem, bad);
    const bool located = std::any_of(r.violations.begin(), r.violations.end(), [&](const Violation& v) {
      return v.code == "sandwich-lower" && v.node == u && v.mode == 1;
    });
    CHECK(located);
  }
  SUBCASE("martingale defect") {
    auto bad = sol;
    bad.modes[0].dm[tree.children(tree.root())[0]] += 0.1;
    CHECK(verify_minimality(tree, inst.problem, bad).martingale >= 0.01);
  }
}

TEST_CASE("sweeps increase and upper pushes grow") {
  Rng rng(48);
  for (int trial = 0; trial < 30; ++trial) {
    const int d = trial % 2 == 0 ? 2 : 3;
    auto inst = random_oblique(rng, {{uniform_int(rng, 1, 4), 1, 3, 0.5, false}, d, true, true, true});
    std::vector<std::vector<ScalarSolution>> history;
    PicardOptions opt;
    opt.on_sweep = [&](const SweepRecord&, const std::vector<ScalarSolution>& cur) { history.push_back(cur); };
    const auto sol = picard_solve(inst.tree, inst.problem, opt);
    REQUIRE(sol.log.restarts == 0);
    for (const auto& rec : sol.log.sweeps) CHECK(rec.min_increment >= -1e-12);
    for (std::size_t n = 1; n < history.size(); ++n) {
      for (std::size_t j = 0; j < history[n].size(); ++j) {
        for (NodeId u = 0; u < inst.tree.size(); ++u) {
          CHECK(history[n][j].y[u] >= history[n - 1][j].y[u] - 1e-12);
          CHECK(history[n - 1][j].da.edge(u) <= history[n][j].da.edge(u) + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("limits from different subsolutions agree") {
  Rng rng(49);
  for (int trial = 0; trial < 15; ++trial) {
    auto inst = random_oblique(rng, {{3, 1, 3, 0.5, false}, 2 + trial % 2, false, true, true});
    const auto first = picard_solve(inst.tree, inst.problem);
    auto p = inst.problem;
    double floor = 0.0;
    for (const auto& m : first.log.corner) floor = std::min(floor, m);
    p.subsolution = constant_modes(inst.tree, p.modes, floor - 5.0);
    const auto second = picard_solve(inst.tree, p);
    for (std::size_t j = 0; j < first.modes.size(); ++j) {
      for (NodeId u = 0; u < inst.tree.size(); ++u) CHECK(std::abs(first.modes[j].y[u] - second.modes[j].y[u]) <= 1e-8);
    }
  }
}

TEST_CASE("binding cycles") {
  SUBCASE("positive costs cannot close a cycle") {
    Rng rng(50);
    for (int trial = 0; trial < 20; ++trial) {
      auto inst = random_oblique(rng, {{3, 1, 2, 0.5, false}, 3, trial % 2 == 0, true, true});
      const auto sol = picard_solve(inst.tree, inst.problem);
      const auto y = sol.values();
      for (NodeId u = 0; u < inst.tree.size(); ++u) {
        CHECK(binding_cycles(inst.problem.costs, inst.tree.physical_time(u), state_vector(y, u)).empty());
      }
    }
  }
  SUBCASE("a zero-sum cost pair binds both ways") {
    auto c = CostMatrix::from_constants({{0.0, 1.0}, {-1.0, 0.0}});
    const std::vector<double> y{0.0, 1.0};
    const auto cycles = binding_cycles(c, 0.0, y);
    REQUIRE(cycles.size() == 1);
    CHECK(cycles[0].size() == 2);
  }
  SUBCASE("a one-way binding is not a cycle") {
    auto c = CostMatrix(2, 1.0);
    const std::vector<double> y{0.0, 1.0};
    CHECK(binding_cycles(c, 0.0, y).empty());
  }
}

TEST_CASE("iteration failures") {
  Rng rng(51);
  auto inst = random_oblique(rng, {{3, 2, 2, 0.5, false}, 2, true, true, true});
  SUBCASE("a subsolution that is too high") {
    auto p = inst.problem;
    p.subsolution = p.upper;
    for (NodeId leaf : inst.tree.leaves()) {
      for (std::size_t j = 0; j < 2; ++j) (*p.subsolution)[j][leaf] = p.terminal[j][leaf];
    }
    try {
      picard_solve(inst.tree, p);
      FAIL("expected a convergence error");
    } catch (const ConvergenceError& e) {
      CHECK(e.kind() == ConvergenceError::Kind::NonMonotoneSweep);
      CHECK(e.sweep() == 1);
      CHECK(e.node().has_value());
    }
  }
  SUBCASE("too few sweeps") {
    PicardOptions opt;
    opt.max_sweeps = 1;
    try {
      picard_solve(inst.tree, inst.problem, opt);
      FAIL("expected a convergence error");
    } catch (const ConvergenceError& e) {
      CHECK(e.kind() == ConvergenceError::Kind::MaxSweepsExhausted);
      CHECK(e.delta() > opt.tol);
    }
  }
  SUBCASE("bad options") {
    PicardOptions opt;
    opt.tol = 0.0;
    CHECK_THROWS_AS(picard_solve(inst.tree, inst.problem, opt), PreconditionError);
  }
}

TEST_CASE("general obstacle functions") {
  Rng rng(52);
  auto inst = random_oblique(rng, {{3, 1, 2, 0.5, false}, 2, false, true, false});
  auto p = inst.problem;
  const auto costs = p.costs;
  p.custom_obstacle = [costs](int mode, double t, std::span<const double> y) {
    return evaluate_H(costs, t, y)[static_cast<std::size_t>(mode)];
  };
  const auto r = validate_problem(inst.tree, p);
  CHECK(r.ok());
  CHECK(std::any_of(r.notes.begin(), r.notes.end(),
                    [](const std::string& n) { return n.find("uniqueness not asserted") != std::string::npos; }));
  const auto a = picard_solve(inst.tree, p);
  const auto b = picard_solve(inst.tree, inst.problem);
  for (std::size_t j = 0; j < 2; ++j) CHECK(a.modes[j].y == b.modes[j].y);
}
