#pragma once

// One-dimensional reflected BSDEs on an event tree.
//
// Every solver runs the same backward recursion. At a non-leaf node u with time
// index t the implicit step solves
//
//     y = E[Y | u] + g(u, t, y) Δt + ΔV(u)
//
// and the result is projected onto [L(u), U(u)]. The reflecting increments ΔK and
// ΔA live on the edges leaving u (they are decided at u), and the martingale
// increment on edge u→c is ΔM(c) = Y(c) − E[Y | u].

#include <functional>
#include <optional>

#include "orbsde/filtration_tree.hpp"

namespace orbsde {

/// Where a generator is evaluated: the parent node of the step and its time index.
struct GeneratorPoint {
  NodeId node;
  int time;
};

/// g(point, y); must be non-increasing in y.
using ScalarGenerator = std::function<double(GeneratorPoint, double)>;

struct ScalarProblem {
  AdaptedProcess terminal;      // ξ, read at leaves only
  ScalarGenerator generator;    // empty means g ≡ 0
  PredictableIncrements drift;  // ΔV; empty means V ≡ 0
  std::optional<AdaptedProcess> lower;
  std::optional<AdaptedProcess> upper;
};

struct ScalarSolution {
  AdaptedProcess y;
  AdaptedProcess dm;          // martingale increment on the edge into each node
  PredictableIncrements dk;   // pushes up, ≥ 0
  PredictableIncrements da;   // pushes down, ≥ 0
};

struct PenalizationParams {
  double p = 0.0;  // weight on (L − y)⁺
  double q = 0.0;  // weight on (y − U)⁺
};

/// Penalized solution: `path.dk` / `path.da` hold p(L − Y)⁺Δt and q(Y − U)⁺Δt per edge.
struct PenalizedSolution {
  ScalarSolution path;
  double lower_mass = 0.0;  // E Σ p(L − Y)⁺ Δt
  double upper_mass = 0.0;  // E Σ q(Y − U)⁺ Δt
};

/// Unique root of φ(y) = y − g(t, y)Δt − expected_next − dv.
/// Throws ImplicitStepError when no bracket is found after 64 expansions.
double implicit_step(double expected_next, const ScalarGenerator& g, GeneratorPoint at, double dv, double dt);

/// Checks sizes, barrier ordering (L ≤ U, L_T ≤ ξ ≤ U_T) and spot-checks that g is
/// non-increasing on a grid. Throws ValidationError.
void validate_scalar_problem(const EventTree& tree, const ScalarProblem& problem);

ScalarSolution solve_two_barrier(const EventTree& tree, const ScalarProblem& problem);
/// Lower barrier only; `problem.upper` must be empty. A ≡ 0.
ScalarSolution solve_lower(const EventTree& tree, const ScalarProblem& problem);
/// Upper barrier only, via solve_lower on (−ξ, −g(·,−y), −V, −U). K ≡ 0.
ScalarSolution solve_upper(const EventTree& tree, const ScalarProblem& problem);
/// No barriers at all.
ScalarSolution solve_unreflected(const EventTree& tree, const ScalarProblem& problem);

/// Same recursion with g̃ = g + p(L − y)⁺ − q(y − U)⁺ and no projection.
PenalizedSolution solve_penalized(const EventTree& tree, const ScalarProblem& problem,
                                  const PenalizationParams& params);

/// Largest |Y(u) − sup_σ E[Σ_{r<σ}(g(r,Y_r)Δt + ΔV_r − ΔA_r) + L_σ 1{σ<T} + ξ 1{σ=T} | u]| over
/// all nodes, with σ ranging over every stopping time of the subtree at u.
/// The problem must have a lower barrier. Throws EnumerationCapError.
double verify_snell_representation(const EventTree& tree, const ScalarProblem& problem,
                                   const ScalarSolution& solution, const EnumerationCaps& caps = {});

struct ScalarResiduals {
  double backward_identity = 0.0;  // per edge
  double barrier = 0.0;            // distance outside [L, U]
  double flat_off_k = 0.0;         // max min(ΔK, Y − L)
  double flat_off_a = 0.0;         // max min(ΔA, U − Y)
  double negative_increment = 0.0;
  double martingale = 0.0;         // max |E[ΔM | u]|
  bool predictable = true;

  double worst() const;
};

ScalarResiduals scalar_residuals(const EventTree& tree, const ScalarProblem& problem, const ScalarSolution& s);

}  // namespace orbsde
