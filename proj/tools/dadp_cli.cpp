// Command-line front end: load problem/config files, run solves and
// simulations, export plot-ready CSV tables plus a run manifest.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dadp/bench.hpp"
#include "dadp/coordination.hpp"
#include "dadp/csv.hpp"
#include "dadp/dp.hpp"
#include "dadp/problem_json.hpp"
#include "dadp/scenario.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dadp;

namespace {

constexpr const char* kVersion = "dadp 0.1.0";

struct CommonArgs {
    std::string problem;
    std::string out_dir = ".";
    int state_nodes = 41;
    int control_nodes = 13;
    int threads = 0;
    bool serial = false;
};

ProblemSpec load_or_exit(const std::string& path) {
    auto loaded = load_problem_json(path);
    if (!loaded.ok()) {
        std::cerr << "problem validation failed for " << path << ":\n"
                  << loaded.report.to_string();
        std::exit(2);
    }
    return std::move(*loaded.spec);
}

void apply_threads(const CommonArgs& c) {
#ifdef _OPENMP
    if (c.threads > 0) omp_set_num_threads(c.threads);
#else
    (void)c;
#endif
}

void write_manifest(const fs::path& dir, const std::string& command, const json& config,
                    const std::vector<std::string>& artifacts) {
    json m;
    m["version"] = kVersion;
    m["command"] = command;
    m["config"] = config;
    m["artifacts"] = artifacts;
    m["written_at_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << m.dump(2) << "\n";
}

InformationSpec make_info(const std::string& name, const ProblemSpec& spec) {
    InformationSpec info;
    if (name == "mean" || name == "constant") {
        info.mode = InformationSpec::Mode::Constant;
    } else if (name == "demand") {
        info.mode = InformationSpec::Mode::NoiseFn;
        for (int j = 0; j < spec.noise.dim; ++j)
            if (spec.noise.partition.owner[static_cast<size_t>(j)] == NoisePartition::kGlobal)
                info.noise_coords.push_back(j);
        if (info.noise_coords.empty())
            throw std::runtime_error("--info demand: the problem has no global noise coordinate");
    } else if (name.rfind("coords:", 0) == 0) {
        info.mode = InformationSpec::Mode::NoiseFn;
        std::stringstream ss(name.substr(7));
        std::string tok;
        while (std::getline(ss, tok, ',')) info.noise_coords.push_back(std::stoi(tok));
    } else if (name == "path") {
        info.mode = InformationSpec::Mode::Path;
    } else {
        throw std::runtime_error("unknown info variable '" + name +
                                 "' (use mean, demand, coords:<j,...>, or path)");
    }
    return info;
}

StrugarekParams load_strugarek_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    json j = json::parse(in);
    StrugarekParams p;
    p.n = j.at("n").get<int>();
    p.c = j.at("c").get<Vec>();
    p.alpha = j.at("alpha").get<double>();
    if (j.contains("gamma")) p.gamma = j["gamma"].get<Vec>();
    p.T = j.at("T").get<int>();
    p.x1 = j.at("x1").get<Vec>();
    auto parse_dist = [](const json& js) {
        StageDist st;
        for (const auto& pt : js.at("points")) st.points.push_back(pt.get<Vec>());
        st.probs = js.at("probs").get<Vec>();
        return st;
    };
    for (const auto& js : j.at("stage_noise")) p.stage_noise.push_back(parse_dist(js));
    p.final_inflow = parse_dist(j.at("final_inflow"));
    return p;
}

json strugarek_params_json(const StrugarekParams& p) {
    json j;
    j["n"] = p.n;
    j["c"] = p.c;
    j["alpha"] = p.alpha;
    j["T"] = p.T;
    j["x1"] = p.x1;
    auto dump_dist = [](const StageDist& st) {
        json js;
        js["points"] = st.points;
        js["probs"] = st.probs;
        return js;
    };
    json sn = json::array();
    for (const auto& st : p.stage_noise) sn.push_back(dump_dist(st));
    j["stage_noise"] = sn;
    j["final_inflow"] = dump_dist(p.final_inflow);
    return j;
}

int cmd_validate(const std::string& path) {
    auto loaded = load_problem_json(path);
    if (loaded.ok()) {
        std::cout << "OK\n";
        return 0;
    }
    std::cout << loaded.report.to_string();
    return 2;
}

int cmd_solve_dp(const CommonArgs& c, const std::string& coupling, int slack_unit) {
    apply_threads(c);
    auto spec = load_or_exit(c.problem);
    fs::create_directories(c.out_dir);
    GlobalDpOptions opts;
    opts.state_nodes = {c.state_nodes};
    opts.control_nodes = {c.control_nodes};
    opts.parallel = !c.serial;
    if (coupling == "eliminate") {
        opts.coupling = CouplingMode::Eliminate;
        opts.slack_unit = slack_unit;
    } else if (coupling == "grid-filter") {
        opts.coupling = CouplingMode::GridFilter;
    } else if (coupling != "none") {
        throw std::runtime_error("unknown coupling mode '" + coupling + "'");
    }
    auto sol = solve_global_dp(spec, opts);
    fs::path dir(c.out_dir);
    export_value_function_csv(*sol.vf, (dir / "value_function.csv").string());
    json cfg{{"problem", c.problem},
             {"state_nodes", c.state_nodes},
             {"control_nodes", c.control_nodes},
             {"coupling", coupling},
             {"slack_unit", slack_unit},
             {"threads", c.threads},
             {"serial", c.serial}};
    write_manifest(dir, "solve-dp", cfg, {"value_function.csv"});
    std::cout << "value at x0: " << format_double(sol.value_at_x0) << "\n";
    return 0;
}

int cmd_simulate(const CommonArgs& c, int scenarios, std::uint64_t seed,
                 const std::string& policy, int slack_unit, bool recover) {
    apply_threads(c);
    auto spec = load_or_exit(c.problem);
    fs::create_directories(c.out_dir);
    fs::path dir(c.out_dir);
    auto set = sample_scenarios(spec.noise, scenarios, seed);
    export_scenarios_csv(set, (dir / "scenarios.csv").string());

    TrajectoryBundle bundle;
    SimulateOptions sopts;
    sopts.parallel = !c.serial;
    if (policy == "global" || policy == "global-eliminate") {
        GlobalDpOptions opts;
        opts.state_nodes = {c.state_nodes};
        opts.control_nodes = {c.control_nodes};
        opts.parallel = !c.serial;
        if (policy == "global-eliminate") {
            opts.coupling = CouplingMode::Eliminate;
            opts.slack_unit = slack_unit;
        }
        auto sol = solve_global_dp(spec, opts);
        GlobalPolicy pol = sol.policy;
        bundle = simulate_joint(
            spec,
            [pol](int t, const std::vector<Vec>& x, std::span<const double> w) {
                return pol.controls(t, x, w);
            },
            set, sopts);
    } else if (policy == "uncoupled") {
        DpOptions opts;
        opts.state_nodes = {c.state_nodes};
        opts.control_nodes = {c.control_nodes};
        opts.parallel = !c.serial;
        InformationSpec info;
        auto zero = PricedTerm::zero(spec.horizon(), spec.coupling_dim);
        std::vector<UnitFeedback> pols;
        for (int i = 0; i < spec.units(); ++i)
            pols.push_back(solve_priced_subproblem(spec.subsystems[static_cast<size_t>(i)],
                                                   spec.noise, zero, info, opts)
                               .policy.feedback());
        bundle = simulate_policy(spec, pols, set, sopts);
    } else {
        throw std::runtime_error("unknown policy '" + policy +
                                 "' (use global, global-eliminate, or uncoupled)");
    }
    if (recover) bundle = recover_feasibility(bundle, slack_unit, set);
    export_trajectories_csv(bundle, (dir / "trajectories.csv").string());
    auto est = estimate_cost(bundle);
    json cfg{{"problem", c.problem}, {"scenarios", scenarios},
             {"seed", seed},         {"policy", policy},
             {"recover", recover},   {"slack_unit", slack_unit},
             {"state_nodes", c.state_nodes}, {"control_nodes", c.control_nodes}};
    write_manifest(dir, "simulate", cfg, {"scenarios.csv", "trajectories.csv"});
    std::cout << "cost estimate: " << format_double(est.mean) << " +- "
              << format_double(est.half_width) << " (95% CI, " << est.samples << " scenarios)\n";
    return 0;
}

int cmd_solve_dadp(const CommonArgs& c, const std::string& info_name,
                   const std::string& estimator, int bins, double bandwidth, int iters,
                   int scenarios, std::uint64_t seed, double rho, const std::string& coordination,
                   const std::string& subsolver, int slack_unit, double gap_tol,
                   double resid_tol, double alpha, double lipschitz, bool dump_estimators,
                   bool residual_hists) {
    apply_threads(c);
    auto spec = load_or_exit(c.problem);
    fs::create_directories(c.out_dir);
    fs::path dir(c.out_dir);

    InformationSpec info = make_info(info_name, spec);
    UzawaConfig cfg;
    cfg.rho = {rho};
    cfg.max_iters = iters;
    cfg.scenario_count = scenarios;
    cfg.seed = seed;
    cfg.gap_tol = gap_tol;
    cfg.resid_tol = resid_tol;
    cfg.slack_unit = slack_unit;
    cfg.bins = bins;
    if (bandwidth > 0.0)
        cfg.bandwidth.assign(static_cast<size_t>(info.ydim() > 0 ? info.ydim() : 1), bandwidth);
    if (estimator == "constant")
        cfg.estimator = EstimatorKind::Constant;
    else if (estimator == "binned")
        cfg.estimator = EstimatorKind::Binned;
    else if (estimator == "kernel")
        cfg.estimator = EstimatorKind::Kernel;
    else
        throw std::runtime_error("unknown estimator '" + estimator + "'");
    cfg.coordination = coordination == "tree" ? CoordinationMode::ExhaustiveTree
                                              : CoordinationMode::Sampled;
    cfg.sub_solver = subsolver == "kkt" ? SubproblemSolver::ExactKkt : SubproblemSolver::GridDp;
    cfg.dp.state_nodes = {c.state_nodes};
    cfg.dp.control_nodes = {c.control_nodes};
    cfg.dp.parallel = !c.serial;

    if (alpha > 0.0 && lipschitz > 0.0) {
        cfg.alpha = alpha;
        cfg.lipschitz = lipschitz;
        auto rep = check_step_size(alpha, lipschitz, cfg.rho);
        std::cout << "step-size check: " << rep.to_string() << "\n";
        if (!rep.ok)
            std::cout << "warning: step sizes violate 0 < rho < 2*alpha/c^2; "
                         "convergence is not guaranteed\n";
    }

    auto res = run_dadp(spec, info, cfg);
    std::vector<std::string> artifacts = {"iterations.csv"};
    export_iteration_trace_csv(res.reports, spec.horizon(), (dir / "iterations.csv").string());
    if (residual_hists) {
        const auto& last = res.reports.back();
        for (int t = 0; t < spec.horizon(); ++t) {
            std::string name =
                "residuals_k" + std::to_string(last.k) + "_t" + std::to_string(t) + ".csv";
            export_residual_histogram_csv(last, t, (dir / name).string());
            artifacts.push_back(name);
        }
    }
    if (dump_estimators && info.mode != InformationSpec::Mode::Path) {
        for (int t = 0; t < spec.horizon(); ++t) {
            if (const Estimator* est = res.price.estimator(t)) {
                std::string name = "estimator_t" + std::to_string(t) + ".csv";
                est->dump_csv((dir / name).string());
                artifacts.push_back(name);
            }
        }
    }
    json cfgj{{"problem", c.problem},
              {"info", info_name},
              {"estimator", estimator},
              {"bins", bins},
              {"bandwidth", bandwidth},
              {"iters", iters},
              {"scenarios", scenarios},
              {"seed", seed},
              {"rho", rho},
              {"coordination", coordination},
              {"subsolver", subsolver},
              {"slack_unit", slack_unit},
              {"gap_tol", gap_tol},
              {"resid_tol", resid_tol},
              {"alpha", alpha},
              {"lipschitz", lipschitz},
              {"state_nodes", c.state_nodes},
              {"control_nodes", c.control_nodes},
              {"threads", c.threads},
              {"serial", c.serial}};
    write_manifest(dir, "solve-dadp", cfgj, artifacts);

    for (const auto& rep : res.reports)
        std::cout << "iter " << rep.k << ": dual " << format_double(rep.dual.mean) << " +- "
                  << format_double(rep.dual.half_width) << ", primal "
                  << format_double(rep.primal.mean) << " +- "
                  << format_double(rep.primal.half_width) << "\n";
    std::cout << "stopped: " << res.stop_reason << "\n";
    return 0;
}

int cmd_oracle(const std::string& params_path, const std::string& scenario_path,
               const std::string& out_dir) {
    auto params = load_strugarek_params(params_path);
    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    auto set = import_scenarios_csv(scenario_path, 1 + params.n);
    CsvWriter csv((dir / "price.csv").string());
    csv.header({"scenario_id", "t", "price"});
    for (int s = 0; s < set.count(); ++s) {
        auto lam = strugarek_price_oracle(params, set.scenarios[static_cast<size_t>(s)]);
        for (size_t t = 0; t < lam.size(); ++t) {
            csv.field(static_cast<long long>(s));
            csv.field(static_cast<long long>(t));
            csv.field(lam[t]);
            csv.endrow();
        }
    }
    json cfg{{"params", params_path}, {"scenario", scenario_path}};
    write_manifest(dir, "oracle", cfg, {"price.csv"});
    std::cout << "wrote price trajectories for " << set.count() << " scenarios\n";
    return 0;
}

int cmd_make(const std::string& kind, const std::string& out, int units, int horizon,
             std::uint64_t seed, const std::string& params_out) {
    ProblemSpec spec;
    if (kind == "three-unit") {
        ThreeUnitParams p;
        if (horizon > 0) p.T = horizon;
        spec = make_three_unit(p);
    } else if (kind == "strugarek") {
        auto p = StrugarekParams::default_two_unit();
        spec = make_strugarek(p);
        if (!params_out.empty()) {
            std::ofstream po(params_out, std::ios::binary);
            po << strugarek_params_json(p).dump(2) << "\n";
        }
    } else if (kind == "multistock") {
        spec = make_multistock(units > 0 ? units : 7, horizon > 0 ? horizon : 12, seed);
    } else if (kind == "independent") {
        spec = make_independent_suite(units > 0 ? units : 2, true);
    } else {
        throw std::runtime_error("unknown benchmark kind '" + kind + "'");
    }
    save_problem_json(spec, out);
    std::cout << "wrote " << out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(kVersion) +
                 " - price-decomposition solver for decomposable stochastic optimal control"};
    app.require_subcommand(1);

    // validate
    std::string validate_path;
    auto* sv = app.add_subcommand("validate", "check a problem file against the schema");
    sv->add_option("problem", validate_path, "problem JSON file")->required();

    auto add_common = [](CLI::App* cmd, CommonArgs& c) {
        cmd->add_option("--problem", c.problem, "problem JSON file")->required();
        cmd->add_option("--out", c.out_dir, "output directory (default .)");
        cmd->add_option("--state-nodes", c.state_nodes, "grid nodes per state dimension");
        cmd->add_option("--control-nodes", c.control_nodes, "grid nodes per control dimension");
        cmd->add_option("--threads", c.threads, "cap worker threads (0 = library default)");
        cmd->add_flag("--serial", c.serial, "disable parallel kernels");
    };

    // solve-dp
    CommonArgs cdp;
    std::string coupling = "none";
    int slack_unit = -1;
    auto* sdp = app.add_subcommand("solve-dp", "joint dynamic-programming solve");
    add_common(sdp, cdp);
    sdp->add_option("--coupling", coupling, "none | eliminate | grid-filter");
    sdp->add_option("--slack-unit", slack_unit, "slack unit for eliminate coupling");

    // solve-dadp
    CommonArgs cdadp;
    std::string info_name = "mean", estimator = "binned", coordination = "sampled",
                subsolver = "grid";
    int bins = 10, iters = 20, scen_count = 500;
    std::uint64_t seed = 1;
    double rho = 0.012, bandwidth = 0.0, gap_tol = 0.0, resid_tol = 0.0, alpha = 0.0,
           lipschitz = 0.0;
    bool dump_estimators = false, residual_hists = false;
    auto* sda = app.add_subcommand("solve-dadp", "price-decomposition coordination loop");
    add_common(sda, cdadp);
    sda->add_option("--info", info_name, "information variable: mean | demand | coords:<j,..> | path");
    sda->add_option("--estimator", estimator, "constant | binned | kernel");
    sda->add_option("--bins", bins, "bins per info dimension (binned estimator)");
    sda->add_option("--bandwidth", bandwidth, "kernel bandwidth (0 = rule of thumb)");
    sda->add_option("--iters", iters, "maximum iterations");
    sda->add_option("--scenarios", scen_count, "coordination scenario count (sampled mode)");
    sda->add_option("--seed", seed, "scenario seed");
    sda->add_option("--rho", rho, "multiplier step size");
    sda->add_option("--coordination", coordination, "sampled | tree");
    sda->add_option("--subsolver", subsolver, "grid | kkt");
    sda->add_option("--slack-unit", slack_unit, "feasibility-recovery unit (-1 disables)");
    sda->add_option("--gap-tol", gap_tol, "stop when |primal - dual| falls below");
    sda->add_option("--resid-tol", resid_tol, "stop when max |mean residual| falls below");
    sda->add_option("--alpha", alpha, "strong-convexity modulus for the step-size check");
    sda->add_option("--lipschitz", lipschitz, "coupling Lipschitz constant for the check");
    sda->add_flag("--dump-estimators", dump_estimators, "write per-stage estimator CSVs");
    sda->add_flag("--residual-hists", residual_hists,
                  "write final-iteration residual histograms per stage");

    // simulate
    CommonArgs csim;
    int sim_count = 500;
    std::uint64_t sim_seed = 1;
    std::string policy = "global";
    int sim_slack = -1;
    bool recover = false;
    auto* ssim = app.add_subcommand("simulate", "solve and simulate a feedback policy");
    add_common(ssim, csim);
    ssim->add_option("--scenarios", sim_count, "scenario count");
    ssim->add_option("--seed", sim_seed, "scenario seed");
    ssim->add_option("--policy", policy, "global | global-eliminate | uncoupled");
    ssim->add_option("--slack-unit", sim_slack, "slack unit (eliminate/recovery)");
    ssim->add_flag("--recover", recover, "apply feasibility recovery after simulation");

    // oracle
    std::string oracle_params, oracle_scenario, oracle_out = ".";
    auto* sor = app.add_subcommand("oracle", "closed-form price trajectories");
    sor->add_option("--strugarek", oracle_params, "analytic-example parameter JSON")->required();
    sor->add_option("--scenario", oracle_scenario, "scenario CSV")->required();
    sor->add_option("--out", oracle_out, "output directory");

    // make
    std::string make_kind, make_out = "problem.json", make_params_out;
    int make_units = 0, make_horizon = 0;
    std::uint64_t make_seed = 1;
    auto* smk = app.add_subcommand("make", "generate a benchmark problem file");
    smk->add_option("--kind", make_kind, "three-unit | strugarek | multistock | independent")
        ->required();
    smk->add_option("--out", make_out, "output problem file");
    smk->add_option("--units", make_units, "unit count (multistock/independent)");
    smk->add_option("--horizon", make_horizon, "stage count");
    smk->add_option("--seed", make_seed, "generator seed (multistock)");
    smk->add_option("--params-out", make_params_out, "also write oracle parameters (strugarek)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sv->parsed()) return cmd_validate(validate_path);
        if (sdp->parsed()) return cmd_solve_dp(cdp, coupling, slack_unit);
        if (sda->parsed())
            return cmd_solve_dadp(cdadp, info_name, estimator, bins, bandwidth, iters,
                                  scen_count, seed, rho, coordination, subsolver, slack_unit,
                                  gap_tol, resid_tol, alpha, lipschitz, dump_estimators,
                                  residual_hists);
        if (ssim->parsed())
            return cmd_simulate(csim, sim_count, sim_seed, policy, sim_slack, recover);
        if (sor->parsed()) return cmd_oracle(oracle_params, oracle_scenario, oracle_out);
        if (smk->parsed())
            return cmd_make(make_kind, make_out, make_units, make_horizon, make_seed,
                            make_params_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
