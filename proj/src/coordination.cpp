#include "dadp/coordination.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "dadp/csv.hpp"

namespace dadp {

MultiplierStore MultiplierStore::zeros(int T, int S, int d) {
    MultiplierStore st;
    st.T = T;
    st.S = S;
    st.d = d;
    st.lam.assign(static_cast<size_t>(T) * S, Vec(static_cast<size_t>(d), 0.0));
    return st;
}

MultiplierStore multiplier_update(const MultiplierStore& store,
                                  const std::vector<std::vector<Vec>>& residuals,
                                  const Vec& rho) {
    if (static_cast<int>(residuals.size()) != store.T)
        throw std::invalid_argument("multiplier_update: residual stages mismatch");
    MultiplierStore out = store;
    out.iteration = store.iteration + 1;
    for (int t = 0; t < store.T; ++t) {
        if (static_cast<int>(residuals[static_cast<size_t>(t)].size()) != store.S)
            throw std::invalid_argument("multiplier_update: residual scenarios mismatch");
        double rt = rho.size() == 1 ? rho[0] : rho[static_cast<size_t>(t)];
        for (int s = 0; s < store.S; ++s) {
            const Vec& r = residuals[static_cast<size_t>(t)][static_cast<size_t>(s)];
            Vec& l = out.at(t, s);
            for (int j = 0; j < store.d; ++j) {
                if (!std::isfinite(r[static_cast<size_t>(j)]))
                    throw std::invalid_argument("multiplier_update: non-finite residual at (t=" +
                                                std::to_string(t) + ", s=" + std::to_string(s) + ")");
                l[static_cast<size_t>(j)] += rt * r[static_cast<size_t>(j)];
            }
        }
    }
    return out;
}

StepSizeReport check_step_size(double alpha, double c, const Vec& rho) {
    if (!(alpha > 0.0)) throw std::invalid_argument("check_step_size: alpha must be positive");
    if (!(c > 0.0)) throw std::invalid_argument("check_step_size: c must be positive");
    StepSizeReport rep;
    rep.bound = 2.0 * alpha / (c * c);
    rep.ok = true;
    for (double r : rho) {
        rep.margins.push_back(rep.bound - r);
        if (!(r > 0.0) || !(r < rep.bound)) rep.ok = false;
    }
    return rep;
}

std::string StepSizeReport::to_string() const {
    std::string s = ok ? "ok" : "violated";
    s += " (bound " + format_double(bound) + "; margins:";
    for (double m : margins) s += " " + format_double(m);
    s += ")";
    return s;
}

void UzawaConfig::validate(int T) const {
    for (double r : rho)
        if (!(r > 0.0)) throw std::invalid_argument("uzawa: step sizes must be positive");
    if (rho.size() != 1 && static_cast<int>(rho.size()) != T)
        throw std::invalid_argument("uzawa: need one step size or one per stage");
    if (max_iters < 1) throw std::invalid_argument("uzawa: max_iters >= 1 required");
    if (scenario_count < 1) throw std::invalid_argument("uzawa: scenario_count >= 1 required");
}

// ---------------------------------------------------------------------------

namespace {

// info values y_t^s for every scenario; control-independent by construction
std::vector<std::vector<Vec>> info_values(const InformationSpec& info,
                                          const ScenarioSet& scenarios, int T) {
    std::vector<std::vector<Vec>> y(static_cast<size_t>(T),
                                    std::vector<Vec>(static_cast<size_t>(scenarios.count())));
    for (int s = 0; s < scenarios.count(); ++s) {
        Vec prev;
        for (int t = 0; t < T; ++t) {
            prev = info.evolve(t, prev, scenarios.scenarios[static_cast<size_t>(s)].w[static_cast<size_t>(t)]);
            y[static_cast<size_t>(t)][static_cast<size_t>(s)] = prev;
        }
    }
    return y;
}

StageStat stage_stat(const std::vector<Vec>& resid, const Vec& weights, int hist_bins) {
    StageStat st;
    const int S = static_cast<int>(resid.size());
    double wsum = 0.0, mean = 0.0;
    for (int s = 0; s < S; ++s) {
        wsum += weights[static_cast<size_t>(s)];
        mean += weights[static_cast<size_t>(s)] * resid[static_cast<size_t>(s)][0];
    }
    mean /= wsum;
    double var = 0.0;
    for (int s = 0; s < S; ++s) {
        double d = resid[static_cast<size_t>(s)][0] - mean;
        var += weights[static_cast<size_t>(s)] * d * d;
    }
    var /= wsum;
    st.resid_mean = mean;
    st.resid_sd = std::sqrt(var);

    double lo = kInf, hi = -kInf;
    for (int s = 0; s < S; ++s) {
        lo = std::min(lo, resid[static_cast<size_t>(s)][0]);
        hi = std::max(hi, resid[static_cast<size_t>(s)][0]);
    }
    if (!(hi > lo)) hi = lo + 1.0;
    st.hist.edges.resize(static_cast<size_t>(hist_bins) + 1);
    st.hist.mass.assign(static_cast<size_t>(hist_bins), 0.0);
    for (int b = 0; b <= hist_bins; ++b)
        st.hist.edges[static_cast<size_t>(b)] = lo + (hi - lo) * b / hist_bins;
    for (int s = 0; s < S; ++s) {
        int b = static_cast<int>((resid[static_cast<size_t>(s)][0] - lo) / (hi - lo) * hist_bins);
        b = std::clamp(b, 0, hist_bins - 1);
        st.hist.mass[static_cast<size_t>(b)] += weights[static_cast<size_t>(s)] / wsum;
    }
    return st;
}

std::vector<std::vector<Vec>> residuals_of(const TrajectoryBundle& bundle, int T) {
    std::vector<std::vector<Vec>> r(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
        r[static_cast<size_t>(t)].resize(bundle.trajectories.size());
        for (size_t s = 0; s < bundle.trajectories.size(); ++s)
            r[static_cast<size_t>(t)][s] = bundle.trajectories[s].residual[static_cast<size_t>(t)];
    }
    return r;
}

// Lagrangian value estimate: per-scenario true cost plus the price term
MonteCarloEstimate lagrangian_estimate(const TrajectoryBundle& bundle, const PricedTerm& price,
                                       const std::vector<std::vector<Vec>>& y, int T) {
    const int S = static_cast<int>(bundle.trajectories.size());
    Vec vals(static_cast<size_t>(S));
    for (int s = 0; s < S; ++s) {
        double v = bundle.trajectories[static_cast<size_t>(s)].total_cost();
        for (int t = 0; t < T; ++t) {
            Vec pr = price.at(t, y[static_cast<size_t>(t)][static_cast<size_t>(s)]);
            const Vec& r = bundle.trajectories[static_cast<size_t>(s)].residual[static_cast<size_t>(t)];
            for (size_t j = 0; j < pr.size(); ++j) v += pr[j] * r[j];
        }
        vals[static_cast<size_t>(s)] = v;
    }
    MonteCarloEstimate est;
    est.samples = S;
    if (bundle.source == ScenarioSource::Exhaustive) {
        double m = 0.0;
        for (int s = 0; s < S; ++s) m += bundle.weights[static_cast<size_t>(s)] * vals[static_cast<size_t>(s)];
        est.mean = m;
        return est;
    }
    double sum = 0.0;
    for (double v : vals) sum += v;
    est.mean = sum / S;
    if (S > 1) {
        double ss = 0.0;
        for (double v : vals) ss += (v - est.mean) * (v - est.mean);
        est.half_width = 1.96 * std::sqrt(ss / (S - 1)) / std::sqrt(static_cast<double>(S));
    }
    return est;
}

InfoEvolution make_info_evolution(const InformationSpec& info) {
    InfoEvolution ev;
    ev.dim = info.ydim();
    if (ev.dim > 0) {
        InformationSpec copy = info;
        ev.step = [copy](int t, std::span<const double> y_prev, std::span<const double> w) {
            return copy.evolve(t, y_prev, w);
        };
    }
    return ev;
}

} // namespace

PriceProjection project_price(const MultiplierStore& store, const ScenarioSet& scenarios,
                              const InformationSpec& info, const UzawaConfig& cfg) {
    if (info.mode == InformationSpec::Mode::Path)
        throw std::invalid_argument(
            "project_price: path info is projected by node grouping in the tree loop");
    const int T = store.T;
    auto y = info_values(info, scenarios, T);
    std::vector<Estimator> ests;
    Vec devs(static_cast<size_t>(T), std::numeric_limits<double>::quiet_NaN());
    for (int t = 0; t < T; ++t) {
        SampleTable table;
        table.y = y[static_cast<size_t>(t)];
        table.lam.resize(static_cast<size_t>(store.S));
        for (int s = 0; s < store.S; ++s) table.lam[static_cast<size_t>(s)] = store.at(t, s);
        if (scenarios.source == ScenarioSource::Exhaustive) table.weight = scenarios.path_prob;
        EstimatorKind kind = info.mode == InformationSpec::Mode::Constant ? EstimatorKind::Constant
                                                                          : cfg.estimator;
        Estimator est;
        if (kind == EstimatorKind::Binned)
            est = fit_estimator(table, kind, equal_width_bins(table, cfg.bins));
        else if (kind == EstimatorKind::Kernel)
            est = fit_estimator(table, kind, {}, KernelOptions{cfg.bandwidth});
        else
            est = fit_estimator(table, kind);
        try {
            devs[static_cast<size_t>(t)] = deviance(est, table);
        } catch (const std::domain_error&) {
            // zero target variance (e.g. the all-zero first iterate)
        }
        ests.push_back(std::move(est));
    }
    PriceProjection out{PricedTerm::estimators(std::move(ests), store.d), std::move(devs)};
    return out;
}

MonteCarloEstimate dual_value(const ProblemSpec& spec, const PricedTerm& price,
                              const InformationSpec& info, const ScenarioSet& scenarios,
                              const UzawaConfig& cfg) {
    std::vector<UnitFeedback> policies;
    for (int i = 0; i < spec.units(); ++i) {
        auto solve = solve_priced_subproblem(spec.subsystems[static_cast<size_t>(i)], spec.noise,
                                             price, info, cfg.dp);
        policies.push_back(solve.policy.feedback());
    }
    SimulateOptions opts;
    opts.info = make_info_evolution(info);
    auto bundle = simulate_policy(spec, policies, scenarios, opts);
    auto y = info_values(info, scenarios, spec.horizon());
    return lagrangian_estimate(bundle, price, y, spec.horizon());
}

MonteCarloEstimate primal_value(const ProblemSpec& spec, const PricedTerm& price,
                                const InformationSpec& info, const ScenarioSet& scenarios,
                                int slack_unit, const UzawaConfig& cfg) {
    std::vector<UnitFeedback> policies;
    for (int i = 0; i < spec.units(); ++i) {
        auto solve = solve_priced_subproblem(spec.subsystems[static_cast<size_t>(i)], spec.noise,
                                             price, info, cfg.dp);
        policies.push_back(solve.policy.feedback());
    }
    SimulateOptions opts;
    opts.info = make_info_evolution(info);
    auto bundle = simulate_policy(spec, policies, scenarios, opts);
    if (slack_unit >= 0) bundle = recover_feasibility(bundle, slack_unit, scenarios);
    return estimate_cost(bundle);
}

// ---------------------------------------------------------------------------

namespace {

// bundle assembled from per-node tree controls (exhaustive coordination)
TrajectoryBundle bundle_from_tree(const ProblemSpec& spec, const ScenarioSet& scenarios,
                                  const std::vector<std::vector<std::vector<Vec>>>& unit_controls) {
    const int T = spec.horizon();
    TrajectoryBundle bundle;
    bundle.spec = &spec;
    bundle.source = scenarios.source;
    const int S = scenarios.count();
    bundle.trajectories.resize(static_cast<size_t>(S));
    bundle.weights.resize(static_cast<size_t>(S));
    for (int s = 0; s < S; ++s) bundle.weights[static_cast<size_t>(s)] = scenarios.weight(s);
    for (int s = 0; s < S; ++s) {
        auto& traj = bundle.trajectories[static_cast<size_t>(s)];
        traj.units.resize(static_cast<size_t>(spec.units()));
        traj.residual.assign(static_cast<size_t>(T), Vec(static_cast<size_t>(spec.coupling_dim), 0.0));
        for (int i = 0; i < spec.units(); ++i) {
            auto& up = traj.units[static_cast<size_t>(i)];
            const auto& sub = spec.subsystems[static_cast<size_t>(i)];
            up.x.assign(static_cast<size_t>(T) + 1, Vec());
            up.u.assign(static_cast<size_t>(T), Vec());
            up.stage_cost.assign(static_cast<size_t>(T), 0.0);
            up.clipped.assign(static_cast<size_t>(T), 0);
            up.x[0] = sub.x0;
            for (int t = 0; t < T; ++t) {
                int node = TreeIndex::node_of_path(spec.noise, s, t);
                const Vec& w = scenarios.scenarios[static_cast<size_t>(s)].w[static_cast<size_t>(t)];
                up.u[static_cast<size_t>(t)] =
                    unit_controls[static_cast<size_t>(i)][static_cast<size_t>(t)][static_cast<size_t>(node)];
                up.stage_cost[static_cast<size_t>(t)] =
                    sub.stage_cost(t, up.x[static_cast<size_t>(t)], up.u[static_cast<size_t>(t)], w);
                Vec xn(static_cast<size_t>(sub.state_dim), 0.0);
                sub.dynamics.next_state(t, up.x[static_cast<size_t>(t)], up.u[static_cast<size_t>(t)], w, xn);
                up.x[static_cast<size_t>(t) + 1] = std::move(xn);
            }
            up.final_cost = sub.terminal_cost(up.x[static_cast<size_t>(T)]);
        }
        for (int t = 0; t < T; ++t) {
            const Vec& w = scenarios.scenarios[static_cast<size_t>(s)].w[static_cast<size_t>(t)];
            Vec& r = traj.residual[static_cast<size_t>(t)];
            for (int i = 0; i < spec.units(); ++i) {
                const auto& sub = spec.subsystems[static_cast<size_t>(i)];
                const auto& up = traj.units[static_cast<size_t>(i)];
                sub.coupling.eval_add(t, up.x[static_cast<size_t>(t)], up.u[static_cast<size_t>(t)], w, r);
            }
        }
    }
    return bundle;
}

DadpResult run_dadp_tree(const ProblemSpec& spec, const InformationSpec& info,
                         const UzawaConfig& cfg) {
    const int T = spec.horizon();
    const int d = spec.coupling_dim;
    if (cfg.sub_solver != SubproblemSolver::ExactKkt)
        throw std::invalid_argument(
            "exhaustive-tree coordination requires the exact KKT subproblem solver");
    ScenarioSet scenarios = enumerate_scenarios(spec.noise);
    const int S = scenarios.count();
    TreeIndex idx = TreeIndex::build(spec.noise);

    DadpResult res;
    res.scenarios = scenarios;
    res.store = MultiplierStore::zeros(T, S, d);
    std::string stop = "max iterations reached";

    for (int k = 1; k <= cfg.max_iters; ++k) {
        auto t_start = std::chrono::steady_clock::now();
        // project by node grouping: probability-weighted mean per (t, node)
        std::vector<std::vector<Vec>> mult(static_cast<size_t>(T));
        for (int t = 0; t < T; ++t) {
            auto& row = mult[static_cast<size_t>(t)];
            row.assign(static_cast<size_t>(idx.nodes_at(t)), Vec(static_cast<size_t>(d), 0.0));
            Vec wsum(static_cast<size_t>(idx.nodes_at(t)), 0.0);
            for (int s = 0; s < S; ++s) {
                int node = TreeIndex::node_of_path(spec.noise, s, t);
                double w = scenarios.path_prob[static_cast<size_t>(s)];
                wsum[static_cast<size_t>(node)] += w;
                for (int j = 0; j < d; ++j)
                    row[static_cast<size_t>(node)][static_cast<size_t>(j)] +=
                        w * res.store.at(t, s)[static_cast<size_t>(j)];
            }
            for (int n = 0; n < idx.nodes_at(t); ++n)
                for (int j = 0; j < d; ++j)
                    row[static_cast<size_t>(n)][static_cast<size_t>(j)] /= wsum[static_cast<size_t>(n)];
        }

        // exact subproblem solves; dual value is the sum of unit optima
        double dual = 0.0;
        std::vector<std::vector<std::vector<Vec>>> unit_controls(static_cast<size_t>(spec.units()));
        for (int i = 0; i < spec.units(); ++i) {
            auto us = tree_kkt_solve_unit(spec, i, mult);
            dual += us.value;
            unit_controls[static_cast<size_t>(i)] = std::move(us.controls);
        }

        auto bundle = bundle_from_tree(spec, scenarios, unit_controls);
        auto residuals = residuals_of(bundle, T);

        IterationReport rep;
        rep.k = k;
        rep.dual.mean = dual;
        rep.dual.samples = S;
        TrajectoryBundle primal_bundle = bundle;
        if (cfg.slack_unit >= 0)
            primal_bundle = recover_feasibility(bundle, cfg.slack_unit, scenarios);
        rep.primal = estimate_cost(primal_bundle);
        for (const auto& traj : primal_bundle.trajectories)
            for (char v : traj.slack_violation) rep.slack_violations += v;
        for (int t = 0; t < T; ++t)
            rep.stages.push_back(stage_stat(residuals[static_cast<size_t>(t)], bundle.weights,
                                            cfg.histogram_bins));
        // deviance per stage: exact per-node conditioning reproduces lambda,
        // so the indicator is 1 whenever the samples vary at all
        for (int t = 0; t < T; ++t) {
            double var = 0.0, mean = 0.0;
            for (int s = 0; s < S; ++s)
                mean += scenarios.path_prob[static_cast<size_t>(s)] * res.store.at(t, s)[0];
            for (int s = 0; s < S; ++s) {
                double dv = res.store.at(t, s)[0] - mean;
                var += scenarios.path_prob[static_cast<size_t>(s)] * dv * dv;
            }
            if (var > 0.0) rep.stages[static_cast<size_t>(t)].deviance = 1.0;
        }
        rep.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        res.reports.push_back(std::move(rep));
        res.tree_controls = std::move(unit_controls);

        double gap = std::abs(res.reports.back().primal.mean - res.reports.back().dual.mean);
        double max_resid = 0.0;
        for (const auto& st : res.reports.back().stages)
            max_resid = std::max(max_resid, std::abs(st.resid_mean));
        if (cfg.gap_tol > 0.0 && gap <= cfg.gap_tol) {
            stop = "duality gap below tolerance";
            break;
        }
        if (cfg.resid_tol > 0.0 && max_resid <= cfg.resid_tol) {
            stop = "stage residuals below tolerance";
            break;
        }
        if (k < cfg.max_iters) res.store = multiplier_update(res.store, residuals, cfg.rho);
    }
    res.stop_reason = stop;
    return res;
}

} // namespace

DadpResult run_dadp(const ProblemSpec& spec, const InformationSpec& info,
                    const UzawaConfig& cfg) {
    auto report = validate_problem(spec);
    if (!report.ok())
        throw std::invalid_argument("run_dadp: problem spec invalid:\n" + report.to_string());
    cfg.validate(spec.horizon());
    if (cfg.coordination == CoordinationMode::ExhaustiveTree || info.mode == InformationSpec::Mode::Path)
        return run_dadp_tree(spec, info, cfg);

    const int T = spec.horizon();
    const int d = spec.coupling_dim;
    ScenarioSet scenarios = sample_scenarios(spec.noise, cfg.scenario_count, cfg.seed);
    const int S = scenarios.count();
    auto y = info_values(info, scenarios, T);

    DadpResult res;
    res.scenarios = scenarios;
    res.store = MultiplierStore::zeros(T, S, d);
    std::string stop = "max iterations reached";

    for (int k = 1; k <= cfg.max_iters; ++k) {
        auto t_start = std::chrono::steady_clock::now();
        auto proj = project_price(res.store, scenarios, info, cfg);

        std::vector<SubproblemPolicy> policies;
        std::vector<UnitFeedback> feedbacks;
        for (int i = 0; i < spec.units(); ++i) {
            auto solve = solve_priced_subproblem(spec.subsystems[static_cast<size_t>(i)],
                                                 spec.noise, proj.price, info, cfg.dp);
            policies.push_back(solve.policy);
            feedbacks.push_back(policies.back().feedback());
        }
        SimulateOptions sopts;
        sopts.parallel = cfg.dp.parallel;
        sopts.info = make_info_evolution(info);
        auto bundle = simulate_policy(spec, feedbacks, scenarios, sopts);
        auto residuals = residuals_of(bundle, T);

        IterationReport rep;
        rep.k = k;
        rep.dual = lagrangian_estimate(bundle, proj.price, y, T);
        TrajectoryBundle primal_bundle = bundle;
        if (cfg.slack_unit >= 0)
            primal_bundle = recover_feasibility(bundle, cfg.slack_unit, scenarios);
        rep.primal = estimate_cost(primal_bundle);
        for (const auto& traj : bundle.trajectories)
            for (const auto& up : traj.units)
                for (char c : up.clipped) rep.clip_events += c;
        for (const auto& traj : primal_bundle.trajectories)
            for (char v : traj.slack_violation) rep.slack_violations += v;
        for (int t = 0; t < T; ++t) {
            rep.stages.push_back(stage_stat(residuals[static_cast<size_t>(t)], bundle.weights,
                                            cfg.histogram_bins));
            rep.stages.back().deviance = proj.deviance_per_stage[static_cast<size_t>(t)];
        }
        rep.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        res.reports.push_back(std::move(rep));
        res.price = proj.price;
        res.policies = policies;

        double gap = std::abs(res.reports.back().primal.mean - res.reports.back().dual.mean);
        double max_resid = 0.0;
        for (const auto& st : res.reports.back().stages)
            max_resid = std::max(max_resid, std::abs(st.resid_mean));
        if (cfg.gap_tol > 0.0 && gap <= cfg.gap_tol) {
            stop = "duality gap below tolerance";
            break;
        }
        if (cfg.resid_tol > 0.0 && max_resid <= cfg.resid_tol) {
            stop = "stage residuals below tolerance";
            break;
        }
        if (k < cfg.max_iters) res.store = multiplier_update(res.store, residuals, cfg.rho);
    }
    res.stop_reason = stop;
    return res;
}

// ---------------------------------------------------------------------------

void export_iteration_trace_csv(const std::vector<IterationReport>& reports, int T,
                                const std::string& path) {
    // wall time stays out of the body so identical runs are byte-identical
    CsvWriter csv(path);
    std::vector<std::string> hdr = {"k",         "dual",  "dual_ci", "primal",
                                    "primal_ci", "clips", "slack_violations"};
    for (int t = 0; t < T; ++t) {
        hdr.push_back("res_mean_t" + std::to_string(t));
        hdr.push_back("res_sd_t" + std::to_string(t));
        hdr.push_back("deviance_t" + std::to_string(t));
    }
    csv.header(hdr);
    for (const auto& rep : reports) {
        csv.field(rep.k);
        csv.field(rep.dual.mean);
        csv.field(rep.dual.half_width);
        csv.field(rep.primal.mean);
        csv.field(rep.primal.half_width);
        csv.field(rep.clip_events);
        csv.field(rep.slack_violations);
        for (const auto& st : rep.stages) {
            csv.field(st.resid_mean);
            csv.field(st.resid_sd);
            csv.field(st.deviance);
        }
        csv.endrow();
    }
}

void export_residual_histogram_csv(const IterationReport& report, int t,
                                   const std::string& path) {
    CsvWriter csv(path);
    csv.header({"k", "t", "bin_lo", "bin_hi", "mass"});
    const auto& h = report.stages[static_cast<size_t>(t)].hist;
    for (size_t b = 0; b + 1 < h.edges.size(); ++b) {
        csv.field(report.k);
        csv.field(t);
        csv.field(h.edges[b]);
        csv.field(h.edges[b + 1]);
        csv.field(h.mass[b]);
        csv.endrow();
    }
}

} // namespace dadp
