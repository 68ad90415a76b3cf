#pragma once

#include <array>
#include <utility>
#include <vector>

#include "scnas/cell.hpp"
#include "scnas/network.hpp"

namespace scnas {

// Exponential temperature annealing, clipped at tau_min, updated per epoch.
// The decay rate is chosen so the schedule reaches tau_min at the last epoch.
struct TemperatureSchedule {
  Real tau_start = 1.0;
  Real tau_min = 0.05;
  int epochs = 1;

  Real at(int epoch) const;
};

// Continuous relaxation of one edge: softmax((alpha + eps) / tau). The result
// stays differentiable w.r.t. the logits; eps enters as a constant.
Tensor relax(const Tensor& logits, const std::vector<Real>& eps, Real tau);

// Pair enumeration order shared by probabilities and sampling: (a, b), a < b,
// lexicographic.
std::vector<std::pair<int, int>> unordered_pairs(int n);

// q over all unordered pairs: (z_a + z_b) / (|O| - 1). Sums to one exactly.
std::vector<Real> pair_probabilities(const std::vector<Real>& z_bar);

// Record of one stochastic sampling pass, sufficient to rebuild the exact
// same selections for a different set of logit values (gradient checks,
// replays).
struct SamplePlan {
  struct Edge {
    std::vector<Real> eps;
    int op_a = 0, op_b = 0;  // catalog indices, op_a < op_b
  };
  std::array<std::vector<Edge>, kNumCellTypes> edges;
  Real tau = 1.0;
};

// Draws Gumbel noise and a two-operation pair per edge (Algorithm: relax,
// enumerate pair probabilities, sample a pair, rescale its two weights to sum
// to one).
SamplePlan draw_plan(const ArchitectureParams& params, Real tau, Rng& rng);

// Builds the differentiable selections for a recorded plan. The two sampled
// weights are graph nodes downstream of the logits.
SelectionMap build_selections(const ArchitectureParams& params, const SamplePlan& plan);

// draw_plan + build_selections in one call.
SelectionMap sample_architecture(const ArchitectureParams& params, Real tau, Rng& rng,
                                 SamplePlan* plan_out = nullptr);

// Pair sampling for a single edge (exposed for tests).
EdgeSelection sample_pair(const Tensor& logits, Real tau, Rng& rng);

// Mean entropy of softmax(logits) across the edges of one cell type.
Real mean_entropy(const ArchitectureParams& params, CellType type);

}  // namespace scnas
