#pragma once

#include <memory>
#include <string>

#include "dadp/condexp.hpp"
#include "dadp/grid.hpp"
#include "dadp/info.hpp"
#include "dadp/model.hpp"
#include "dadp/scenario.hpp"

namespace dadp {

// Per-stage price function lambda_hat_t(y) ~ E[lambda_t | y_t]. Constant
// prices ignore y; estimator-backed prices evaluate the fitted conditional
// mean; the zero price recovers the uncoupled subproblem.
class PricedTerm {
public:
    static PricedTerm zero(int T, int d);
    static PricedTerm constants(std::vector<Vec> per_stage);
    static PricedTerm estimators(std::vector<Estimator> per_stage, int d);

    Vec at(int t, std::span<const double> y) const;
    int dim() const { return d_; }
    bool is_zero() const { return zero_; }
    const Estimator* estimator(int t) const {
        return ests_.empty() ? nullptr : &ests_[static_cast<size_t>(t)];
    }

private:
    int d_ = 0;
    bool zero_ = false;
    std::vector<Vec> consts_;
    std::vector<Estimator> ests_;
};

// Time-indexed value tables on grid nodes, multilinear interpolation.
// Markovian solves append the info axes after the state axes.
struct ValueFunction {
    Grid grid;
    int state_dims = 0;               // leading axes that are state coordinates
    std::vector<Vec> values;          // stages 0..T; values[T] = terminal cost
    double at_stage(int t, std::span<const double> x) const {
        return grid.interpolate(values[static_cast<size_t>(t)], x);
    }
};

// exact at nodes; +inf propagates; errors outside the box
double interpolate_value(const ValueFunction& vf, int t, std::span<const double> x);

void export_value_function_csv(const ValueFunction& vf, const std::string& path);

struct DpOptions {
    std::vector<int> state_nodes{21};   // per state dimension (broadcast if one entry)
    std::vector<int> control_nodes{11}; // per control dimension (broadcast if one entry)
    long long eval_cap = 400000000;     // nodes x support x combos x stages guard
    bool parallel = true;
    double coupling_tol = 1e-9; // GridFilter admissibility
};

enum class CouplingMode { None, Eliminate, GridFilter };

struct GlobalDpOptions : DpOptions {
    CouplingMode coupling = CouplingMode::None;
    int slack_unit = -1; // Eliminate: unit whose control absorbs the residual
};

// Feedback policies are realized by re-solving the stage minimization at
// query time over the control grid against the interpolated continuation.
class GlobalPolicy {
public:
    GlobalPolicy() = default;
    GlobalPolicy(const ProblemSpec* spec, std::shared_ptr<const ValueFunction> vf,
                 GlobalDpOptions opts)
        : spec_(spec), vf_(std::move(vf)), opts_(std::move(opts)) {}

    // joint argmin at (t, x, w); concatenated controls in unit order
    std::vector<Vec> controls(int t, const std::vector<Vec>& x_per_unit,
                              std::span<const double> w) const;

private:
    const ProblemSpec* spec_ = nullptr;
    std::shared_ptr<const ValueFunction> vf_;
    GlobalDpOptions opts_;
};

struct GlobalSolve {
    std::shared_ptr<ValueFunction> vf;
    GlobalPolicy policy;
    double value_at_x0 = 0.0;
};

GlobalSolve solve_global_dp(const ProblemSpec& spec, const GlobalDpOptions& opts);

class SubproblemPolicy {
public:
    SubproblemPolicy() = default;
    SubproblemPolicy(const SubsystemSpec* sub, const NoiseModel* noise,
                     std::shared_ptr<const ValueFunction> vf, PricedTerm price,
                     InformationSpec info, DpOptions opts)
        : sub_(sub), noise_(noise), vf_(std::move(vf)), price_(std::move(price)),
          info_(std::move(info)), opts_(std::move(opts)) {}

    Vec control(int t, std::span<const double> x, std::span<const double> w,
                std::span<const double> y_prev) const;
    UnitFeedback feedback() const;

private:
    const SubsystemSpec* sub_ = nullptr;
    const NoiseModel* noise_ = nullptr;
    std::shared_ptr<const ValueFunction> vf_;
    PricedTerm price_;
    InformationSpec info_;
    DpOptions opts_;
};

struct SubproblemSolve {
    std::shared_ptr<ValueFunction> vf;
    SubproblemPolicy policy;
    double value_at_x0 = 0.0;
};

// Priced subproblem DP: stage objective C_t + lambda_hat_t(y)^T g_t + V_{t+1}.
// Memoryless info (Constant/NoiseFn) keeps the state = x; Markovian info
// indexes the table by (x, y_{t-1}) and the policy by (x, w_t, y_{t-1}).
SubproblemSolve solve_priced_subproblem(const SubsystemSpec& sub, const NoiseModel& noise,
                                        const PricedTerm& price, const InformationSpec& info,
                                        const DpOptions& opts);

// control grid actually used at stage t for a unit (exposed for oracles/tests)
std::vector<Vec> control_points(const SubsystemSpec& sub, int t,
                                const std::vector<int>& control_nodes);

} // namespace dadp
