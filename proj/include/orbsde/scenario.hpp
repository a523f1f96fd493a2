#pragma once

// Scenario files (JSON, "format": 1) and their translation into a tree and an
// oblique problem. See docs/scenario_format.md.

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "orbsde/oblique_system.hpp"

namespace orbsde {

struct TreeSpec {
  std::string type = "uniform";  // uniform | chain | binomial | explicit
  int steps = 1;
  double dt = 1.0;
  int branching = 2;
  double p_up = 0.5;
  double s0 = 1.0;
  double up = 1.0;
  double down = 1.0;
  std::vector<NodeSpec> nodes;  // explicit only
};

struct GeneratorSpec {
  std::string family = "constant";  // constant | linear | affine-coupled | table
  double a = 0.0;
  double b = 0.0;
  std::vector<double> g;                    // affine-coupled: one weight per mode, own slot 0
  std::vector<double> grid;                 // table: increasing y grid
  std::vector<std::vector<double>> values;  // table: one row per time index, or a single row
};

/// A per-node quantity: U, ξ or ΔV.
struct ProcessSpec {
  std::string type = "constant";  // constant | linear | table | state-linear | zero
  double value = 0.0;
  double a = 0.0;
  double b = 0.0;
  std::vector<double> values;  // table: one entry per node id
};

struct SolverSpec {
  double tol = 1e-10;
  int max_sweeps = 200;
  double subsolution_slack = 0.0;
  std::size_t max_strategies = 1'000'000;
  int max_stopping_depth = 4;
  std::size_t max_stopping_times = 1'000'000;
  std::vector<double> penalty_ladder = {1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6};
};

struct Scenario {
  int format = 1;
  std::string name;
  int modes = 2;
  TreeSpec tree;
  std::vector<GeneratorSpec> generators;
  std::vector<std::vector<Polynomial>> costs;
  std::vector<ProcessSpec> upper;
  std::vector<ProcessSpec> terminal;
  std::vector<ProcessSpec> drift;
  SolverSpec solver;
};

/// Throws ValidationError naming the offending JSON path.
Scenario parse_scenario(const nlohmann::json& doc);
/// Throws std::runtime_error when the file cannot be read, ValidationError otherwise.
Scenario load_scenario(const std::string& path);
/// Normalized form: every field present, defaults spelled out.
nlohmann::json to_json(const Scenario& scenario);

struct BuiltScenario {
  EventTree tree;
  ObliqueProblem problem;
};

/// Throws ValidationError for tree or table inconsistencies.
BuiltScenario build(const Scenario& scenario);

}  // namespace orbsde
