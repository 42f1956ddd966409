#pragma once

#include <optional>
#include <string>

#include "dadp/bench.hpp"
#include "dadp/condexp.hpp"
#include "dadp/dp.hpp"
#include "dadp/info.hpp"
#include "dadp/model.hpp"
#include "dadp/scenario.hpp"

namespace dadp {

// Per-stage, per-scenario multiplier samples lambda_t^{k,s}.
struct MultiplierStore {
    int T = 0, S = 0, d = 0;
    int iteration = 0;
    std::vector<Vec> lam; // [t*S + s], each of dimension d

    static MultiplierStore zeros(int T, int S, int d);
    Vec& at(int t, int s) { return lam[static_cast<size_t>(t) * S + s]; }
    const Vec& at(int t, int s) const { return lam[static_cast<size_t>(t) * S + s]; }
};

// componentwise lambda + rho_t * r; input store unchanged, counter bumped
MultiplierStore multiplier_update(const MultiplierStore& store,
                                  const std::vector<std::vector<Vec>>& residuals,
                                  const Vec& rho);

struct Histogram {
    Vec edges; // size bins+1
    Vec mass;  // sums to 1
};

struct StageStat {
    double resid_mean = 0.0;
    double resid_sd = 0.0;
    double deviance = std::numeric_limits<double>::quiet_NaN(); // NaN: undefined
    Histogram hist;
};

struct IterationReport {
    int k = 0;
    MonteCarloEstimate dual;
    MonteCarloEstimate primal;
    std::vector<StageStat> stages;
    double wall_seconds = 0.0;
    long long clip_events = 0;
    long long slack_violations = 0;
};

enum class CoordinationMode { Sampled, ExhaustiveTree };
enum class SubproblemSolver { GridDp, ExactKkt };

struct UzawaConfig {
    Vec rho{0.05}; // per-stage step sizes (single entry broadcasts)
    int max_iters = 20;
    int scenario_count = 500;
    std::uint64_t seed = 1;
    double gap_tol = 0.0;   // <= 0 disables the duality-gap stop
    double resid_tol = 0.0; // <= 0 disables the residual stop
    std::optional<double> alpha;     // strong-convexity modulus, user supplied
    std::optional<double> lipschitz; // coupling Lipschitz constant
    EstimatorKind estimator = EstimatorKind::Binned;
    int bins = 10;
    Vec bandwidth; // kernel mode; empty = rule-of-thumb
    CoordinationMode coordination = CoordinationMode::Sampled;
    SubproblemSolver sub_solver = SubproblemSolver::GridDp;
    int slack_unit = -1; // feasibility recovery unit; < 0 disables
    int histogram_bins = 20;
    DpOptions dp;

    void validate(int T) const;
};

struct StepSizeReport {
    bool ok = false;
    double bound = 0.0; // 2 alpha / c^2
    Vec margins;        // bound - rho_t
    std::string to_string() const;
};

// 0 < rho_t < 2 alpha / c^2, strictly
StepSizeReport check_step_size(double alpha, double c, const Vec& rho);

struct PriceProjection {
    PricedTerm price;
    Vec deviance_per_stage; // NaN where undefined
};

// Fit E[lambda_t | y_t] per stage from the paired samples (y_t^s, lambda_t^s).
// Constant info returns the stage mean. Not defined for Path info (the tree
// loop projects by node grouping internally).
PriceProjection project_price(const MultiplierStore& store, const ScenarioSet& scenarios,
                              const InformationSpec& info, const UzawaConfig& cfg);

// E[sum_i C_i + price^T g_i + K_i] under the priced-subproblem policies
MonteCarloEstimate dual_value(const ProblemSpec& spec, const PricedTerm& price,
                              const InformationSpec& info, const ScenarioSet& scenarios,
                              const UzawaConfig& cfg);

// expected true cost after feasibility recovery through the slack unit
MonteCarloEstimate primal_value(const ProblemSpec& spec, const PricedTerm& price,
                                const InformationSpec& info, const ScenarioSet& scenarios,
                                int slack_unit, const UzawaConfig& cfg);

struct DadpResult {
    MultiplierStore store;
    PricedTerm price;                       // final projected price (non-path modes)
    std::vector<SubproblemPolicy> policies; // grid-DP subproblem policies
    std::vector<std::vector<std::vector<Vec>>> tree_controls; // [unit][t][node] (tree mode)
    std::vector<IterationReport> reports;
    std::string stop_reason;
    ScenarioSet scenarios; // the fixed coordination set
};

// The coordination loop: project prices, solve subproblems, simulate on the
// fixed coordination scenarios, update multipliers scenario-wise; stops on
// max iterations, duality gap, or stage-residual tolerance.
DadpResult run_dadp(const ProblemSpec& spec, const InformationSpec& info,
                    const UzawaConfig& cfg);

void export_iteration_trace_csv(const std::vector<IterationReport>& reports, int T,
                                const std::string& path);
void export_residual_histogram_csv(const IterationReport& report, int t,
                                   const std::string& path);

} // namespace dadp
