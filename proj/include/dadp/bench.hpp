#pragma once

#include <cstdint>
#include <map>
#include <memory>

#include "dadp/dp.hpp"
#include "dadp/model.hpp"
#include "dadp/scenario.hpp"

namespace dadp {

// ---------------------------------------------------------------------------
// Three-unit problem: two hydro stocks with small quadratic release costs and
// one stockless thermal unit meeting demand. Defaults keep a 2-D joint DP
// tractable as the reference solve.
struct ThreeUnitParams {
    int T = 25;
    double eps = 0.01;         // hydro quadratic cost weight (> 0 for strong convexity)
    double thermal_quad = 1.0; // L_t(u) = thermal_quad * u^2
    double stock_lo = 0.0, stock_hi = 10.0;
    double x0 = 5.0;
    double u_hi = 3.0;        // hydro release bound
    double thermal_u_hi = 6.0; // grid range for the thermal control
    Vec demand_support = {2.0, 4.0, 6.0};
    Vec demand_probs = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    Vec inflow_support = {0.0, 0.5, 1.0};
    Vec inflow_probs = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    double k_coeff = 0.1; // K(x) = k_coeff * (x - k_ref)^2
    double k_ref = 5.0;
};

// noise layout: w = (demand, inflow_1, inflow_2); thermal carries -d_t
ProblemSpec make_three_unit(const ThreeUnitParams& params);

// ---------------------------------------------------------------------------
// Strugarek's analytic example: n reservoirs share a demand, quadratic
// release costs c_j u^2/2, terminal deviation weights gamma_j = alpha c_j,
// no bound constraints. The final inflow is folded into the terminal cost by
// exact expectation, so the artifact horizon is T-1 decision stages.
struct StrugarekParams {
    int n = 2;
    Vec c = {1.0, 2.0};
    double alpha = 0.5;
    Vec gamma; // optional; when set it must equal alpha * c exactly
    int T = 3; // problem horizon (decisions at times 1..T-1)
    Vec x1 = {5.0, 5.0};
    // joint two-or-more-point supports per decision time t=1..T-1:
    // each point is (d_t, a_t^1..a_t^n); the inflow entries of the stage-1
    // point are ignored (x_1 is given)
    std::vector<StageDist> stage_noise;
    // final inflow a_T distribution: points are (a_T^1..a_T^n)
    StageDist final_inflow;

    static StrugarekParams default_two_unit();
};

ProblemSpec make_strugarek(const StrugarekParams& params);

// Closed-form optimal price dynamics evaluated along one scenario; prices
// are oriented as marginal cost of demand. Scenario stages follow the
// make_strugarek layout (stage k carries (d_{k+1}, a_{k+1})).
Vec strugarek_price_oracle(const StrugarekParams& params, const Scenario& scenario);

// ---------------------------------------------------------------------------
// Synthetic multi-stock problem: N one-dimensional stocks plus a stockless
// thermal unit whose quadratic coefficient is driven by a random
// availability factor. Desk-scale defaults N=7, T=12.
ProblemSpec make_multistock(int N, int T, std::uint64_t seed);

// N uncoupled one-stock units, optionally sharing the global noise; used by
// the additivity checks.
ProblemSpec make_independent_suite(int N, bool shared_noise);

// ---------------------------------------------------------------------------
// Exhaustive scenario-tree solver.

struct TreeProblem {
    const ProblemSpec* spec = nullptr;
    std::vector<int> control_nodes{11}; // per control dimension (broadcast ok)
    long long eval_cap = 10000000;
    bool filter_coupling = true;  // enforce |sum g| <= tol on grid combos
    double coupling_tol = 1e-9;
};

struct TreeSolution {
    double value = 0.0;
    // per stage, per node: controls per unit; prices only on the KKT route
    // (orientation: marginal cost of demand)
    std::vector<std::vector<std::vector<Vec>>> controls; // [t][node][unit]
    std::vector<std::vector<Vec>> price;                 // [t][node]
};

// Exact optimum over grid-restricted non-anticipative policies by backward
// induction over the tree with memoized reachable states.
TreeSolution tree_exact_solve(const TreeProblem& tp);

// Continuous exact solve with coupling multipliers for affine-quadratic
// instances with inactive bounds (KKT system is linear).
TreeSolution tree_kkt_solve(const ProblemSpec& spec, bool want_duals = true);

// Exact priced-subproblem solve for one unit on the exhaustive tree:
// minimize E[C_i + multiplier^T g_i + K_i] with per-node multipliers in the
// coordination orientation. Same affine-quadratic eligibility as
// tree_kkt_solve.
struct UnitTreeSolve {
    double value = 0.0;                     // optimal priced objective
    std::vector<std::vector<Vec>> controls; // [t][node]
    std::vector<std::vector<Vec>> states;   // [t][node], t = 0..T (T: terminal)
};
UnitTreeSolve tree_kkt_solve_unit(const ProblemSpec& spec, int unit,
                                  const std::vector<std::vector<Vec>>& multiplier);

// exhaustive-tree node bookkeeping shared by the tree solvers and the
// perfect-memory coordination mode
struct TreeIndex {
    std::vector<int> stage_counts; // nodes per stage
    int nodes_at(int t) const { return stage_counts[static_cast<size_t>(t)]; }
    static TreeIndex build(const NoiseModel& noise);
    // node visited at stage t by an exhaustively enumerated scenario
    // (stage-major order, matching enumerate_scenarios)
    static int node_of_path(const NoiseModel& noise, int path, int t);
    double node_prob(const NoiseModel& noise, int t, int node) const;
    const Vec& node_noise(const NoiseModel& noise, int t, int node) const;
};

} // namespace dadp
