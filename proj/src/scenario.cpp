#include "dadp/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dadp/csv.hpp"
#include "dadp/rng.hpp"

namespace dadp {

ScenarioSet sample_scenarios(const NoiseModel& noise, int count, std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("sample_scenarios: count must be >= 1");
    ScenarioSet set;
    set.source = ScenarioSource::Sampled;
    set.seed = seed;
    set.scenarios.resize(static_cast<size_t>(count));
    CounterRng rng(seed);
    for (int s = 0; s < count; ++s) {
        Scenario& sc = set.scenarios[static_cast<size_t>(s)];
        sc.w.resize(static_cast<size_t>(noise.horizon));
        for (int t = 0; t < noise.horizon; ++t) {
            const auto& st = noise.stages[static_cast<size_t>(t)];
            double v = rng.uniform(static_cast<std::uint64_t>(s) * 0x10001ULL + static_cast<std::uint64_t>(t));
            double acc = 0.0;
            size_t pick = st.points.size() - 1;
            for (size_t k = 0; k < st.probs.size(); ++k) {
                acc += st.probs[k];
                if (v < acc) {
                    pick = k;
                    break;
                }
            }
            sc.w[static_cast<size_t>(t)] = st.points[pick];
        }
    }
    return set;
}

ScenarioSet enumerate_scenarios(const NoiseModel& noise, std::size_t cap) {
    std::size_t total = 1;
    for (const auto& st : noise.stages) {
        total *= st.points.size();
        if (total > cap)
            throw std::runtime_error("enumerate_scenarios: tree size exceeds cap");
    }
    ScenarioSet set;
    set.source = ScenarioSource::Exhaustive;
    set.scenarios.resize(total);
    set.path_prob.resize(total);
    std::vector<size_t> idx(static_cast<size_t>(noise.horizon), 0);
    for (std::size_t s = 0; s < total; ++s) {
        Scenario& sc = set.scenarios[s];
        sc.w.resize(static_cast<size_t>(noise.horizon));
        double p = 1.0;
        for (int t = 0; t < noise.horizon; ++t) {
            const auto& st = noise.stages[static_cast<size_t>(t)];
            sc.w[static_cast<size_t>(t)] = st.points[idx[static_cast<size_t>(t)]];
            p *= st.probs[idx[static_cast<size_t>(t)]];
        }
        set.path_prob[s] = p;
        // odometer increment, last stage fastest
        for (int t = noise.horizon - 1; t >= 0; --t) {
            auto& k = idx[static_cast<size_t>(t)];
            if (++k < noise.stages[static_cast<size_t>(t)].points.size()) break;
            k = 0;
        }
    }
    return set;
}

namespace {

using JointEval = std::function<std::vector<Vec>(int t, const std::vector<Vec>& x_per_unit,
                                                 std::span<const double> w,
                                                 std::span<const double> y_prev)>;

ScenarioTrajectory simulate_one(const ProblemSpec& spec, const JointEval& eval_controls,
                                const Scenario& sc, int scenario_id,
                                const InfoEvolution& info) {
    const int T = spec.horizon();
    const int N = spec.units();
    const int d = spec.coupling_dim;
    ScenarioTrajectory traj;
    traj.units.resize(static_cast<size_t>(N));
    traj.residual.assign(static_cast<size_t>(T), Vec(static_cast<size_t>(d), 0.0));

    for (int i = 0; i < N; ++i) {
        auto& up = traj.units[static_cast<size_t>(i)];
        up.x.assign(static_cast<size_t>(T) + 1, Vec());
        up.u.assign(static_cast<size_t>(T), Vec());
        up.stage_cost.assign(static_cast<size_t>(T), 0.0);
        up.clipped.assign(static_cast<size_t>(T), 0);
        up.x[0] = spec.subsystems[static_cast<size_t>(i)].x0;
    }

    Vec y_prev; // info memory (empty at t=0 unless evolution defines y_{-1})
    std::vector<Vec> x_now(static_cast<size_t>(N));
    for (int t = 0; t < T; ++t) {
        const Vec& w = sc.w[static_cast<size_t>(t)];
        for (int i = 0; i < N; ++i) x_now[static_cast<size_t>(i)] = traj.units[static_cast<size_t>(i)].x[static_cast<size_t>(t)];
        std::vector<Vec> controls = eval_controls(t, x_now, w, y_prev);
        if (static_cast<int>(controls.size()) != N)
            throw std::runtime_error("policy returned wrong number of unit controls (scenario " +
                                     std::to_string(scenario_id) + ", stage " + std::to_string(t) + ")");
        for (int i = 0; i < N; ++i) {
            const auto& sub = spec.subsystems[static_cast<size_t>(i)];
            auto& up = traj.units[static_cast<size_t>(i)];
            Vec u = std::move(controls[static_cast<size_t>(i)]);
            if (static_cast<int>(u.size()) != sub.control_dim)
                throw std::runtime_error("policy returned wrong control dimension (scenario " +
                                         std::to_string(scenario_id) + ", stage " + std::to_string(t) +
                                         ", subsystem " + std::to_string(i) + ")");
            const Vec& lo = sub.u_lo.at(t);
            const Vec& hi = sub.u_hi.at(t);
            for (int k = 0; k < sub.control_dim; ++k) {
                double v = u[static_cast<size_t>(k)];
                if (!std::isfinite(v))
                    throw std::runtime_error("policy returned non-finite control (scenario " +
                                             std::to_string(scenario_id) + ", stage " +
                                             std::to_string(t) + ", subsystem " + std::to_string(i) + ")");
                double c = std::clamp(v, lo[static_cast<size_t>(k)], hi[static_cast<size_t>(k)]);
                if (c != v) up.clipped[static_cast<size_t>(t)] = 1;
                u[static_cast<size_t>(k)] = c;
            }
            up.u[static_cast<size_t>(t)] = std::move(u);
            up.stage_cost[static_cast<size_t>(t)] =
                sub.stage_cost(t, up.x[static_cast<size_t>(t)], up.u[static_cast<size_t>(t)], w);
            Vec xn(static_cast<size_t>(sub.state_dim), 0.0);
            sub.dynamics.next_state(t, up.x[static_cast<size_t>(t)], up.u[static_cast<size_t>(t)], w, xn);
            up.x[static_cast<size_t>(t) + 1] = std::move(xn);
        }
        // coupling residual at this stage
        Vec& r = traj.residual[static_cast<size_t>(t)];
        for (int i = 0; i < N; ++i) {
            const auto& sub = spec.subsystems[static_cast<size_t>(i)];
            const auto& up = traj.units[static_cast<size_t>(i)];
            sub.coupling.eval_add(t, up.x[static_cast<size_t>(t)], up.u[static_cast<size_t>(t)], w, r);
        }
        if (info.dim > 0) y_prev = info.step(t, y_prev, w);
    }
    for (int i = 0; i < N; ++i) {
        auto& up = traj.units[static_cast<size_t>(i)];
        up.final_cost = spec.subsystems[static_cast<size_t>(i)].terminal_cost(up.x[static_cast<size_t>(T)]);
    }
    return traj;
}

} // namespace

namespace {

TrajectoryBundle simulate_impl(const ProblemSpec& spec, const JointEval& eval_controls,
                               const ScenarioSet& scenarios, const SimulateOptions& opts) {
    TrajectoryBundle bundle;
    bundle.spec = &spec;
    bundle.source = scenarios.source;
    const int S = scenarios.count();
    bundle.trajectories.resize(static_cast<size_t>(S));
    bundle.weights.resize(static_cast<size_t>(S));
    for (int s = 0; s < S; ++s) bundle.weights[static_cast<size_t>(s)] = scenarios.weight(s);

    std::exception_ptr err;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (opts.parallel)
#endif
    for (int s = 0; s < S; ++s) {
        try {
            bundle.trajectories[static_cast<size_t>(s)] = simulate_one(
                spec, eval_controls, scenarios.scenarios[static_cast<size_t>(s)], s, opts.info);
        } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);
    return bundle;
}

} // namespace

TrajectoryBundle simulate_policy(const ProblemSpec& spec,
                                 const std::vector<UnitFeedback>& policies,
                                 const ScenarioSet& scenarios, const SimulateOptions& opts) {
    if (static_cast<int>(policies.size()) != spec.units())
        throw std::invalid_argument("simulate_policy: one policy per subsystem required");
    JointEval eval = [&policies, &spec](int t, const std::vector<Vec>& x, std::span<const double> w,
                                        std::span<const double> y_prev) {
        std::vector<Vec> u(static_cast<size_t>(spec.units()));
        for (int i = 0; i < spec.units(); ++i)
            u[static_cast<size_t>(i)] = policies[static_cast<size_t>(i)](t, x[static_cast<size_t>(i)], w, y_prev);
        return u;
    };
    return simulate_impl(spec, eval, scenarios, opts);
}

TrajectoryBundle simulate_joint(const ProblemSpec& spec, const JointFeedback& policy,
                                const ScenarioSet& scenarios, const SimulateOptions& opts) {
    JointEval eval = [&policy](int t, const std::vector<Vec>& x, std::span<const double> w,
                               std::span<const double>) { return policy(t, x, w); };
    return simulate_impl(spec, eval, scenarios, opts);
}

MonteCarloEstimate estimate_cost(const TrajectoryBundle& bundle) {
    const int S = static_cast<int>(bundle.trajectories.size());
    if (S == 0) throw std::invalid_argument("estimate_cost: empty bundle");
    MonteCarloEstimate est;
    est.samples = S;
    if (bundle.source == ScenarioSource::Exhaustive) {
        double m = 0.0;
        for (int s = 0; s < S; ++s)
            m += bundle.weights[static_cast<size_t>(s)] * bundle.trajectories[static_cast<size_t>(s)].total_cost();
        est.mean = m;
        est.half_width = 0.0;
        return est;
    }
    double sum = 0.0;
    for (int s = 0; s < S; ++s) sum += bundle.trajectories[static_cast<size_t>(s)].total_cost();
    est.mean = sum / S;
    if (S > 1) {
        double ss = 0.0;
        for (int s = 0; s < S; ++s) {
            double dv = bundle.trajectories[static_cast<size_t>(s)].total_cost() - est.mean;
            ss += dv * dv;
        }
        double sd = std::sqrt(ss / (S - 1));
        est.half_width = 1.96 * sd / std::sqrt(static_cast<double>(S));
    }
    return est;
}

TrajectoryBundle recover_feasibility(const TrajectoryBundle& bundle, int slack_unit,
                                     const ScenarioSet& scenarios) {
    if (!bundle.spec) throw std::invalid_argument("recover_feasibility: bundle has no spec");
    const ProblemSpec& spec = *bundle.spec;
    if (slack_unit < 0 || slack_unit >= spec.units())
        throw std::invalid_argument("recover_feasibility: invalid slack unit");
    const auto& slack = spec.subsystems[static_cast<size_t>(slack_unit)];
    const int d = spec.coupling_dim;
    if (slack.control_dim != d)
        throw std::invalid_argument(
            "recover_feasibility: slack coupling must be square in its control");
    // invertibility of P is checked per stage below (1x1 cases in practice)
    if (d != 1)
        throw std::invalid_argument("recover_feasibility: only scalar couplings supported");

    TrajectoryBundle out = bundle;
    const int T = spec.horizon();
    for (size_t s = 0; s < out.trajectories.size(); ++s) {
        auto& traj = out.trajectories[s];
        auto& up = traj.units[static_cast<size_t>(slack_unit)];
        const Scenario& sc = scenarios.scenarios[s];
        traj.slack_violation.assign(static_cast<size_t>(T), 0);
        traj.slack_violation_mag.assign(static_cast<size_t>(T), 0.0);
        for (int t = 0; t < T; ++t) {
            const Vec& w = sc.w[static_cast<size_t>(t)];
            const Mat& P = slack.coupling.P.at(t);
            double p = P(0, 0);
            if (p == 0.0)
                throw std::invalid_argument("recover_feasibility: slack coupling not invertible");
            // residual of the other units plus the slack map at u = current,
            // with the slack state already updated by earlier recoveries
            Vec r(1, 0.0);
            for (int i = 0; i < spec.units(); ++i) {
                const auto& sub = spec.subsystems[static_cast<size_t>(i)];
                const auto& upi = traj.units[static_cast<size_t>(i)];
                sub.coupling.eval_add(t, upi.x[static_cast<size_t>(t)], upi.u[static_cast<size_t>(t)], w, r);
            }
            double u_req = up.u[static_cast<size_t>(t)][0] - r[0] / p;
            const double lo = slack.u_lo.at(t)[0];
            const double hi = slack.u_hi.at(t)[0];
            double u_new = std::clamp(u_req, lo, hi);
            if (u_new != u_req) {
                traj.slack_violation[static_cast<size_t>(t)] = 1;
                traj.slack_violation_mag[static_cast<size_t>(t)] = (u_req - u_new) * p;
            }
            up.u[static_cast<size_t>(t)][0] = u_new;
            up.stage_cost[static_cast<size_t>(t)] =
                slack.stage_cost(t, up.x[static_cast<size_t>(t)], up.u[static_cast<size_t>(t)], w);
            Vec xn(static_cast<size_t>(slack.state_dim), 0.0);
            slack.dynamics.next_state(t, up.x[static_cast<size_t>(t)], up.u[static_cast<size_t>(t)], w, xn);
            up.x[static_cast<size_t>(t) + 1] = std::move(xn);
            // post-recovery residual (zero unless the slack bound binds)
            Vec r2(1, 0.0);
            for (int i = 0; i < spec.units(); ++i) {
                const auto& sub = spec.subsystems[static_cast<size_t>(i)];
                const auto& upi = traj.units[static_cast<size_t>(i)];
                sub.coupling.eval_add(t, upi.x[static_cast<size_t>(t)], upi.u[static_cast<size_t>(t)], w, r2);
            }
            traj.residual[static_cast<size_t>(t)] = r2;
        }
        up.final_cost = slack.terminal_cost(up.x[static_cast<size_t>(T)]);
    }
    return out;
}

void export_scenarios_csv(const ScenarioSet& set, const std::string& path) {
    CsvWriter csv(path);
    std::vector<std::string> hdr = {"scenario_id", "t"};
    int dim = set.scenarios.empty() ? 0
                                    : static_cast<int>(set.scenarios[0].w.empty() ? 0 : set.scenarios[0].w[0].size());
    for (int j = 0; j < dim; ++j) hdr.push_back("w" + std::to_string(j));
    csv.header(hdr);
    for (size_t s = 0; s < set.scenarios.size(); ++s)
        for (size_t t = 0; t < set.scenarios[s].w.size(); ++t) {
            csv.field(static_cast<long long>(s));
            csv.field(static_cast<long long>(t));
            for (double v : set.scenarios[s].w[t]) csv.field(v);
            csv.endrow();
        }
}

ScenarioSet import_scenarios_csv(const std::string& path, int noise_dim) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario file: " + path);
    ScenarioSet set;
    set.source = ScenarioSource::Sampled;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) { // header
            first = false;
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
        if (static_cast<int>(vals.size()) != 2 + noise_dim)
            throw std::runtime_error("scenario row has wrong arity in " + path);
        size_t sid = static_cast<size_t>(vals[0]);
        size_t t = static_cast<size_t>(vals[1]);
        if (set.scenarios.size() <= sid) set.scenarios.resize(sid + 1);
        auto& w = set.scenarios[sid].w;
        if (w.size() <= t) w.resize(t + 1);
        w[t] = Vec(vals.begin() + 2, vals.end());
    }
    return set;
}

void export_trajectories_csv(const TrajectoryBundle& bundle, const std::string& path) {
    CsvWriter csv(path);
    const ProblemSpec& spec = *bundle.spec;
    int max_state = 0, max_ctrl = 0;
    for (const auto& sub : spec.subsystems) {
        max_state = std::max(max_state, sub.state_dim);
        max_ctrl = std::max(max_ctrl, sub.control_dim);
    }
    std::vector<std::string> hdr = {"scenario_id", "t", "subsystem"};
    for (int j = 0; j < max_state; ++j) hdr.push_back("x" + std::to_string(j));
    for (int j = 0; j < max_ctrl; ++j) hdr.push_back("u" + std::to_string(j));
    hdr.push_back("stage_cost");
    for (int j = 0; j < spec.coupling_dim; ++j) hdr.push_back("residual" + std::to_string(j));
    csv.header(hdr);
    for (size_t s = 0; s < bundle.trajectories.size(); ++s) {
        const auto& traj = bundle.trajectories[s];
        for (int t = 0; t < spec.horizon(); ++t)
            for (int i = 0; i < spec.units(); ++i) {
                const auto& up = traj.units[static_cast<size_t>(i)];
                csv.field(static_cast<long long>(s));
                csv.field(t);
                csv.field(i);
                for (int j = 0; j < max_state; ++j)
                    csv.field(j < static_cast<int>(up.x[static_cast<size_t>(t)].size())
                                  ? up.x[static_cast<size_t>(t)][static_cast<size_t>(j)]
                                  : 0.0);
                for (int j = 0; j < max_ctrl; ++j)
                    csv.field(j < static_cast<int>(up.u[static_cast<size_t>(t)].size())
                                  ? up.u[static_cast<size_t>(t)][static_cast<size_t>(j)]
                                  : 0.0);
                csv.field(up.stage_cost[static_cast<size_t>(t)]);
                for (int j = 0; j < spec.coupling_dim; ++j)
                    csv.field(i == 0 ? traj.residual[static_cast<size_t>(t)][static_cast<size_t>(j)] : 0.0);
                csv.endrow();
            }
    }
}

} // namespace dadp
