#include "orbsde/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace orbsde {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  ValidationReport report;
  report.add({"scenario", path + ": " + message, {}, {}, {}});
  throw ValidationError(std::move(report));
}

const json& member(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) fail(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(path + "/" + key, "missing");
  return *it;
}

double number(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  return v.get<double>();
}

double number_or(const json& obj, const std::string& key, double fallback, const std::string& path) {
  auto it = obj.find(key);
  return it == obj.end() ? fallback : number(*it, path + "/" + key);
}

long long integer(const json& v, const std::string& path) {
  if (!v.is_number_integer()) fail(path, "expected an integer");
  return v.get<long long>();
}

long long integer_or(const json& obj, const std::string& key, long long fallback, const std::string& path) {
  auto it = obj.find(key);
  return it == obj.end() ? fallback : integer(*it, path + "/" + key);
}

std::string text(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "expected a string");
  return v.get<std::string>();
}

std::vector<double> numbers(const json& v, const std::string& path) {
  if (!v.is_array()) fail(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number(v[i], path + "/" + std::to_string(i)));
  return out;
}

const json& array_of(const json& v, std::size_t size, const std::string& path) {
  if (!v.is_array()) fail(path, "expected an array");
  if (v.size() != size) fail(path, "expected " + std::to_string(size) + " entries, got " + std::to_string(v.size()));
  return v;
}

TreeSpec parse_tree(const json& v, const std::string& path) {
  TreeSpec t;
  t.type = text(member(v, "type", path), path + "/type");
  t.steps = static_cast<int>(integer(member(v, "steps", path), path + "/steps"));
  t.dt = number_or(v, "dt", 1.0, path);
  if (t.steps < 1) fail(path + "/steps", "must be at least 1");
  if (!(t.dt > 0.0)) fail(path + "/dt", "must be positive");
  if (t.type == "uniform") {
    t.branching = static_cast<int>(integer_or(v, "branching", 2, path));
    if (t.branching < 1) fail(path + "/branching", "must be at least 1");
  } else if (t.type == "chain") {
    t.branching = 1;
  } else if (t.type == "binomial") {
    t.p_up = number(member(v, "p_up", path), path + "/p_up");
    t.s0 = number_or(v, "s0", 1.0, path);
    t.up = number(member(v, "up", path), path + "/up");
    t.down = number(member(v, "down", path), path + "/down");
    if (!(t.p_up > 0.0 && t.p_up < 1.0)) fail(path + "/p_up", "must lie in (0, 1)");
  } else if (t.type == "explicit") {
    const auto& nodes = member(v, "nodes", path);
    if (!nodes.is_array() || nodes.empty()) fail(path + "/nodes", "expected a non-empty array");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const std::string np = path + "/nodes/" + std::to_string(i);
      const auto& n = nodes[i];
      NodeSpec spec;
      const long long id = integer(member(n, "id", np), np + "/id");
      if (id < 0) fail(np + "/id", "must be non-negative");
      spec.id = static_cast<NodeId>(id);
      if (auto it = n.find("parent"); it != n.end() && !it->is_null()) {
        const long long parent = integer(*it, np + "/parent");
        if (parent < 0) fail(np + "/parent", "must be non-negative");
        spec.parent = static_cast<NodeId>(parent);
      }
      spec.probability = number_or(n, "p", 1.0, np);
      if (auto it = n.find("time"); it != n.end()) spec.time = static_cast<int>(integer(*it, np + "/time"));
      spec.state = number_or(n, "state", 0.0, np);
      t.nodes.push_back(spec);
    }
  } else {
    fail(path + "/type", "unknown tree type '" + t.type + "'");
  }
  return t;
}

GeneratorSpec parse_generator(const json& v, int modes, int mode, int steps, const std::string& path) {
  GeneratorSpec g;
  g.family = text(member(v, "family", path), path + "/family");
  if (g.family == "constant") {
    g.a = number_or(v, "a", 0.0, path);
  } else if (g.family == "linear" || g.family == "affine-coupled") {
    g.a = number_or(v, "a", 0.0, path);
    g.b = number_or(v, "b", 0.0, path);
    if (g.b < 0.0) fail(path + "/b", "must be non-negative (f must be non-increasing in its own component)");
    if (g.family == "affine-coupled") {
      g.g = numbers(array_of(member(v, "g", path), static_cast<std::size_t>(modes), path + "/g"), path + "/g");
      g.g[static_cast<std::size_t>(mode)] = 0.0;
      for (std::size_t k = 0; k < g.g.size(); ++k) {
        if (g.g[k] < 0.0) {
          fail(path + "/g/" + std::to_string(k), "must be non-negative (f must be non-decreasing in other components)");
        }
      }
    }
  } else if (g.family == "table") {
    g.grid = numbers(member(v, "y", path), path + "/y");
    if (g.grid.size() < 2) fail(path + "/y", "need at least two grid points");
    for (std::size_t i = 1; i < g.grid.size(); ++i) {
      if (!(g.grid[i] > g.grid[i - 1])) fail(path + "/y", "grid must be strictly increasing");
    }
    const auto& rows = member(v, "values", path);
    if (!rows.is_array() || (rows.size() != 1 && rows.size() != static_cast<std::size_t>(steps))) {
      fail(path + "/values", "expected 1 row or one row per time step (" + std::to_string(steps) + ")");
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::string rp = path + "/values/" + std::to_string(r);
      auto row = numbers(array_of(rows[r], g.grid.size(), rp), rp);
      for (std::size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[i - 1]) fail(rp, "table generator must be non-increasing in y");
      }
      g.values.push_back(std::move(row));
    }
  } else {
    fail(path + "/family", "unknown generator family '" + g.family + "'");
  }
  return g;
}

ProcessSpec parse_process(const json& v, const std::vector<std::string>& allowed, const std::string& path) {
  ProcessSpec p;
  if (v.is_number()) {
    p.value = v.get<double>();
    if (std::find(allowed.begin(), allowed.end(), "constant") == allowed.end()) fail(path, "constant not allowed");
    return p;
  }
  p.type = text(member(v, "type", path), path + "/type");
  if (std::find(allowed.begin(), allowed.end(), p.type) == allowed.end()) {
    fail(path + "/type", "unsupported type '" + p.type + "'");
  }
  if (p.type == "constant") {
    p.value = number(member(v, "value", path), path + "/value");
  } else if (p.type == "linear" || p.type == "state-linear") {
    p.a = number_or(v, "a", 0.0, path);
    p.b = number_or(v, "b", 0.0, path);
  } else if (p.type == "table") {
    p.values = numbers(member(v, "values", path), path + "/values");
  }
  return p;
}

Polynomial parse_cost(const json& v, const std::string& path) {
  if (v.is_number()) return Polynomial{{v.get<double>()}};
  auto coeffs = numbers(member(v, "poly", path), path + "/poly");
  if (coeffs.empty()) fail(path + "/poly", "need at least one coefficient");
  return Polynomial{std::move(coeffs)};
}

json cost_json(const Polynomial& p) {
  if (p.coeffs.size() == 1) return p.coeffs.front();
  return json{{"poly", p.coeffs}};
}

json process_json(const ProcessSpec& p) {
  json out{{"type", p.type}};
  if (p.type == "constant") out["value"] = p.value;
  if (p.type == "linear" || p.type == "state-linear") {
    out["a"] = p.a;
    out["b"] = p.b;
  }
  if (p.type == "table") out["values"] = p.values;
  return out;
}

double process_value(const ProcessSpec& p, const EventTree& tree, NodeId u) {
  if (p.type == "zero") return 0.0;
  if (p.type == "constant") return p.value;
  if (p.type == "linear") return p.a + p.b * tree.physical_time(u);
  if (p.type == "state-linear") return p.a + p.b * tree.state(u);
  return p.values[u];
}

void check_table(const ProcessSpec& p, const EventTree& tree, const std::string& path) {
  if (p.type == "table" && p.values.size() != tree.size()) {
    fail(path + "/values", "expected one value per node (" + std::to_string(tree.size()) + "), got " +
                               std::to_string(p.values.size()));
  }
}

SystemGenerator make_generator(const GeneratorSpec& g, int mode) {
  const auto j = static_cast<std::size_t>(mode);
  if (g.family == "constant") {
    return [a = g.a](GeneratorPoint, std::span<const double>) { return a; };
  }
  if (g.family == "linear") {
    return [a = g.a, b = g.b, j](GeneratorPoint, std::span<const double> y) { return a - b * y[j]; };
  }
  if (g.family == "affine-coupled") {
    return [a = g.a, b = g.b, w = g.g, j](GeneratorPoint, std::span<const double> y) {
      double v = a - b * y[j];
      for (std::size_t k = 0; k < w.size(); ++k) {
        if (k != j) v += w[k] * y[k];
      }
      return v;
    };
  }
  return [grid = g.grid, rows = g.values, j](GeneratorPoint at, std::span<const double> y) {
    const auto& row = rows[std::min<std::size_t>(static_cast<std::size_t>(at.time), rows.size() - 1)];
    const double x = y[j];
    if (x <= grid.front()) return row.front();
    if (x >= grid.back()) return row.back();
    const auto hi = static_cast<std::size_t>(std::upper_bound(grid.begin(), grid.end(), x) - grid.begin());
    const double w = (x - grid[hi - 1]) / (grid[hi] - grid[hi - 1]);
    return row[hi - 1] + w * (row[hi] - row[hi - 1]);
  };
}

}  // namespace

Scenario parse_scenario(const json& doc) {
  Scenario s;
  if (!doc.is_object()) fail("", "scenario must be a JSON object");
  s.format = static_cast<int>(integer(member(doc, "format", ""), "/format"));
  if (s.format != 1) fail("/format", "unsupported format " + std::to_string(s.format));
  if (auto it = doc.find("name"); it != doc.end()) s.name = text(*it, "/name");
  s.modes = static_cast<int>(integer(member(doc, "modes", ""), "/modes"));
  if (s.modes < 2) fail("/modes", "need at least 2 modes");
  const auto d = static_cast<std::size_t>(s.modes);
  s.tree = parse_tree(member(doc, "tree", ""), "/tree");

  if (auto it = doc.find("generators"); it != doc.end()) {
    array_of(*it, d, "/generators");
    for (std::size_t j = 0; j < d; ++j) {
      s.generators.push_back(
          parse_generator((*it)[j], s.modes, static_cast<int>(j), s.tree.steps, "/generators/" + std::to_string(j)));
    }
  } else {
    s.generators.assign(d, GeneratorSpec{});
  }

  const auto& costs = array_of(member(doc, "costs", ""), d, "/costs");
  for (std::size_t j = 0; j < d; ++j) {
    const std::string rp = "/costs/" + std::to_string(j);
    array_of(costs[j], d, rp);
    std::vector<Polynomial> row;
    for (std::size_t k = 0; k < d; ++k) {
      row.push_back(j == k ? Polynomial{{0.0}} : parse_cost(costs[j][k], rp + "/" + std::to_string(k)));
    }
    s.costs.push_back(std::move(row));
  }

  const auto& upper = array_of(member(doc, "upper", ""), d, "/upper");
  const auto& terminal = array_of(member(doc, "terminal", ""), d, "/terminal");
  for (std::size_t j = 0; j < d; ++j) {
    s.upper.push_back(parse_process(upper[j], {"constant", "linear", "table"}, "/upper/" + std::to_string(j)));
    s.terminal.push_back(
        parse_process(terminal[j], {"constant", "table", "state-linear", "linear"}, "/terminal/" + std::to_string(j)));
  }
  if (auto it = doc.find("drift"); it != doc.end()) {
    array_of(*it, d, "/drift");
    for (std::size_t j = 0; j < d; ++j) {
      s.drift.push_back(parse_process((*it)[j], {"zero", "constant", "table"}, "/drift/" + std::to_string(j)));
    }
  } else {
    ProcessSpec zero;
    zero.type = "zero";
    s.drift.assign(d, zero);
  }

  if (auto it = doc.find("solver"); it != doc.end()) {
    const auto& v = *it;
    if (!v.is_object()) fail("/solver", "expected an object");
    s.solver.tol = number_or(v, "tol", s.solver.tol, "/solver");
    s.solver.max_sweeps = static_cast<int>(integer_or(v, "max_sweeps", s.solver.max_sweeps, "/solver"));
    s.solver.subsolution_slack = number_or(v, "subsolution_slack", s.solver.subsolution_slack, "/solver");
    s.solver.max_strategies = static_cast<std::size_t>(
        integer_or(v, "max_strategies", static_cast<long long>(s.solver.max_strategies), "/solver"));
    s.solver.max_stopping_depth =
        static_cast<int>(integer_or(v, "max_stopping_depth", s.solver.max_stopping_depth, "/solver"));
    s.solver.max_stopping_times = static_cast<std::size_t>(
        integer_or(v, "max_stopping_times", static_cast<long long>(s.solver.max_stopping_times), "/solver"));
    if (auto lit = v.find("penalty_ladder"); lit != v.end()) {
      s.solver.penalty_ladder = numbers(*lit, "/solver/penalty_ladder");
    }
    if (!(s.solver.tol > 0.0)) fail("/solver/tol", "must be positive");
    if (s.solver.max_sweeps < 1) fail("/solver/max_sweeps", "must be at least 1");
    if (s.solver.subsolution_slack < 0.0) fail("/solver/subsolution_slack", "must be non-negative");
    for (double p : s.solver.penalty_ladder) {
      if (p < 0.0) fail("/solver/penalty_ladder", "weights must be non-negative");
    }
  }
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read scenario file " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    fail("", std::string("invalid JSON: ") + e.what());
  }
  return parse_scenario(doc);
}

json to_json(const Scenario& s) {
  json tree{{"type", s.tree.type}, {"steps", s.tree.steps}, {"dt", s.tree.dt}};
  if (s.tree.type == "uniform") tree["branching"] = s.tree.branching;
  if (s.tree.type == "binomial") {
    tree["p_up"] = s.tree.p_up;
    tree["s0"] = s.tree.s0;
    tree["up"] = s.tree.up;
    tree["down"] = s.tree.down;
  }
  if (s.tree.type == "explicit") {
    json nodes = json::array();
    for (const auto& n : s.tree.nodes) {
      json node{{"id", n.id}, {"parent", nullptr}, {"p", n.probability}, {"state", n.state}};
      if (n.parent) node["parent"] = *n.parent;
      if (n.time) node["time"] = *n.time;
      nodes.push_back(std::move(node));
    }
    tree["nodes"] = std::move(nodes);
  }

  json generators = json::array();
  for (const auto& g : s.generators) {
    json v{{"family", g.family}};
    if (g.family != "table") v["a"] = g.a;
    if (g.family == "linear" || g.family == "affine-coupled") v["b"] = g.b;
    if (g.family == "affine-coupled") v["g"] = g.g;
    if (g.family == "table") {
      v["y"] = g.grid;
      v["values"] = g.values;
    }
    generators.push_back(std::move(v));
  }

  json costs = json::array();
  for (const auto& row : s.costs) {
    json r = json::array();
    for (const auto& c : row) r.push_back(cost_json(c));
    costs.push_back(std::move(r));
  }

  json upper = json::array();
  json terminal = json::array();
  json drift = json::array();
  for (const auto& p : s.upper) upper.push_back(process_json(p));
  for (const auto& p : s.terminal) terminal.push_back(process_json(p));
  for (const auto& p : s.drift) drift.push_back(process_json(p));

  json solver{{"tol", s.solver.tol},
              {"max_sweeps", s.solver.max_sweeps},
              {"subsolution_slack", s.solver.subsolution_slack},
              {"max_strategies", s.solver.max_strategies},
              {"max_stopping_depth", s.solver.max_stopping_depth},
              {"max_stopping_times", s.solver.max_stopping_times},
              {"penalty_ladder", s.solver.penalty_ladder}};

  return json{{"format", s.format}, {"name", s.name},   {"modes", s.modes},       {"tree", std::move(tree)},
              {"generators", std::move(generators)},  {"costs", std::move(costs)}, {"upper", std::move(upper)},
              {"terminal", std::move(terminal)},      {"drift", std::move(drift)}, {"solver", std::move(solver)}};
}

BuiltScenario build(const Scenario& s) {
  const auto& t = s.tree;
  EventTree tree = [&] {
    if (t.type == "uniform") return EventTree::uniform(t.branching, t.steps, t.dt);
    if (t.type == "chain") return EventTree::chain(t.steps, t.dt);
    if (t.type == "binomial") return EventTree::binomial(t.steps, t.dt, t.p_up, t.s0, t.up, t.down);
    return EventTree::build(TreeDescription{t.nodes, t.steps, t.dt});
  }();

  const auto d = static_cast<std::size_t>(s.modes);
  const auto n = tree.size();
  ObliqueProblem p;
  p.modes = s.modes;
  p.costs = CostMatrix(s.modes, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < d; ++k) {
      if (j != k) p.costs.set(static_cast<int>(j), static_cast<int>(k), s.costs[j][k]);
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    const std::string idx = std::to_string(j);
    check_table(s.upper[j], tree, "/upper/" + idx);
    check_table(s.terminal[j], tree, "/terminal/" + idx);
    check_table(s.drift[j], tree, "/drift/" + idx);
    p.upper.push_back(AdaptedProcess::from(tree, [&](NodeId u) { return process_value(s.upper[j], tree, u); }));
    p.terminal.push_back(AdaptedProcess::from(tree, [&](NodeId u) { return process_value(s.terminal[j], tree, u); }));
    if (s.drift[j].type == "zero") {
      p.drift.emplace_back(n);
    } else {
      p.drift.push_back(
          PredictableIncrements::from_parent(tree, [&](NodeId u) { return process_value(s.drift[j], tree, u); }));
    }
    p.generators.push_back(make_generator(s.generators[j], static_cast<int>(j)));
  }
  p.subsolution_slack = s.solver.subsolution_slack;
  return BuiltScenario{std::move(tree), std::move(p)};
}

}  // namespace orbsde
