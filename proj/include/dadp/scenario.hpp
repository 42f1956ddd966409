#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "dadp/model.hpp"

namespace dadp {

struct Scenario {
    std::vector<Vec> w; // per-stage noise realization, each of noise dim
};

enum class ScenarioSource { Sampled, Exhaustive };

struct ScenarioSet {
    std::vector<Scenario> scenarios;
    ScenarioSource source = ScenarioSource::Sampled;
    std::uint64_t seed = 0;
    Vec path_prob; // exhaustive enumeration only; sums to 1

    int count() const { return static_cast<int>(scenarios.size()); }
    double weight(int s) const {
        return source == ScenarioSource::Exhaustive ? path_prob[static_cast<size_t>(s)]
                                                    : 1.0 / static_cast<double>(count());
    }
};

// i.i.d. stage-wise draws; identical seed reproduces bit-identical output
ScenarioSet sample_scenarios(const NoiseModel& noise, int count, std::uint64_t seed);

// every support combination with its path probability; throws above cap
ScenarioSet enumerate_scenarios(const NoiseModel& noise, std::size_t cap = 1000000);

// ---------------------------------------------------------------------------

struct MonteCarloEstimate {
    double mean = 0.0;
    double half_width = 0.0; // 1.96 * sample sd / sqrt(S); 0 for exact estimates
    int samples = 0;
};

struct UnitPath {
    std::vector<Vec> x;      // states x_0..x_T
    std::vector<Vec> u;      // controls u_0..u_{T-1}
    Vec stage_cost;          // per stage
    double final_cost = 0.0;
    std::vector<char> clipped; // per stage: control clipped to bounds
};

struct ScenarioTrajectory {
    std::vector<UnitPath> units;
    std::vector<Vec> residual; // per stage, coupling dimension
    std::vector<char> slack_violation;
    Vec slack_violation_mag;

    double total_cost() const {
        double c = 0.0;
        for (const auto& up : units) {
            for (double sc : up.stage_cost) c += sc;
            c += up.final_cost;
        }
        return c;
    }
};

struct TrajectoryBundle {
    std::vector<ScenarioTrajectory> trajectories;
    const ProblemSpec* spec = nullptr;
    ScenarioSource source = ScenarioSource::Sampled;
    Vec weights; // per scenario; uniform when sampled
};

// Feedback of one unit: (t, x_i, w_t, y_{t-1}) -> u_i. The info argument is
// empty unless the policy was built in markovian info mode.
using UnitFeedback =
    std::function<Vec(int t, std::span<const double> x, std::span<const double> w,
                      std::span<const double> y_prev)>;

// Evolves the information variable alongside the simulation; identity-free
// policies ignore it. y has fixed dimension (possibly 0).
struct InfoEvolution {
    int dim = 0;
    std::function<Vec(int t, std::span<const double> y_prev, std::span<const double> w)> step;
};

struct SimulateOptions {
    bool parallel = true;
    InfoEvolution info; // optional; dim 0 disables
};

// Hazard-decision forward simulation. Controls outside bounds are clipped
// (recorded); non-finite controls raise with (scenario, stage, unit).
TrajectoryBundle simulate_policy(const ProblemSpec& spec,
                                 const std::vector<UnitFeedback>& policies,
                                 const ScenarioSet& scenarios,
                                 const SimulateOptions& opts = {});

// same simulation driven by a joint feedback (e.g. a global DP policy whose
// argmin needs the whole state vector)
using JointFeedback = std::function<std::vector<Vec>(int t, const std::vector<Vec>& x_per_unit,
                                                     std::span<const double> w)>;
TrajectoryBundle simulate_joint(const ProblemSpec& spec, const JointFeedback& policy,
                                const ScenarioSet& scenarios, const SimulateOptions& opts = {});

// mean and 95% confidence half-width of total cost over the bundle
MonteCarloEstimate estimate_cost(const TrajectoryBundle& bundle);

// Overwrite the slack unit's control so the stage residual vanishes (clip
// and flag when its bounds bind), then rebuild that unit's path and costs.
// Requires the slack coupling to be affine invertible in the control.
TrajectoryBundle recover_feasibility(const TrajectoryBundle& bundle, int slack_unit,
                                     const ScenarioSet& scenarios);

// CSV interfaces
void export_scenarios_csv(const ScenarioSet& set, const std::string& path);
ScenarioSet import_scenarios_csv(const std::string& path, int noise_dim);
void export_trajectories_csv(const TrajectoryBundle& bundle, const std::string& path);

} // namespace dadp
