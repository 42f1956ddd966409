#include "dadp/bench.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <Eigen/Dense>

#include "dadp/detail/stage_kernel.hpp"
#include "dadp/rng.hpp"

namespace dadp {

namespace {

Mat row_select(int cols, int coord, double value) {
    Mat m(1, cols);
    m(0, coord) = value;
    return m;
}

SubsystemSpec hydro_unit(const std::string& name, double x0, double lo, double hi,
                         double u_hi, double eps, double k_coeff, double k_ref,
                         int noise_dim, int inflow_coord) {
    SubsystemSpec sub;
    sub.name = name;
    sub.state_dim = 1;
    sub.control_dim = 1;
    sub.x0 = {x0};
    sub.x_lo = Stagewise<Vec>(Vec{lo});
    sub.x_hi = Stagewise<Vec>(Vec{hi});
    sub.u_lo = Stagewise<Vec>(Vec{0.0});
    sub.u_hi = Stagewise<Vec>(Vec{u_hi});
    sub.dynamics.A = Stagewise<Mat>(Mat::identity(1));
    Mat B(1, 1);
    B(0, 0) = -1.0;
    sub.dynamics.B = Stagewise<Mat>(B);
    sub.dynamics.C = Stagewise<Mat>(row_select(noise_dim, inflow_coord, 1.0));
    sub.dynamics.b = Stagewise<Vec>(Vec{0.0});
    sub.cost = Stagewise<CostTerms>(CostTerms{QuadControlTerm{{eps}, {0.0}, {}}});
    sub.final_cost = {QuadStateTerm{{k_coeff}, {k_ref}}};
    sub.coupling.P = Stagewise<Mat>(row_select(1, 0, 1.0));
    sub.coupling.Q = Stagewise<Mat>(Mat(1, 1));
    sub.coupling.R = Stagewise<Mat>(Mat(1, noise_dim));
    sub.coupling.r = Stagewise<Vec>(Vec{0.0});
    return sub;
}

SubsystemSpec thermal_unit(const std::string& name, double u_hi, double quad,
                           int noise_dim, int demand_coord,
                           std::optional<NoiseScale> scale = {}) {
    SubsystemSpec sub;
    sub.name = name;
    sub.state_dim = 0;
    sub.control_dim = 1;
    sub.x_lo = Stagewise<Vec>(Vec{});
    sub.x_hi = Stagewise<Vec>(Vec{});
    sub.u_lo = Stagewise<Vec>(Vec{0.0});
    sub.u_hi = Stagewise<Vec>(Vec{u_hi});
    sub.dynamics.A = Stagewise<Mat>(Mat(0, 0));
    sub.dynamics.B = Stagewise<Mat>(Mat(0, 1));
    sub.dynamics.C = Stagewise<Mat>(Mat(0, noise_dim));
    sub.dynamics.b = Stagewise<Vec>(Vec{});
    sub.cost = Stagewise<CostTerms>(CostTerms{QuadControlTerm{{quad}, {0.0}, scale}});
    sub.final_cost = {};
    // g = u - d: the demand constraint is folded into this unit's map
    sub.coupling.P = Stagewise<Mat>(row_select(1, 0, 1.0));
    sub.coupling.Q = Stagewise<Mat>(Mat(1, 0));
    sub.coupling.R = Stagewise<Mat>(row_select(noise_dim, demand_coord, -1.0));
    sub.coupling.r = Stagewise<Vec>(Vec{0.0});
    return sub;
}

StageDist product_dist(const std::vector<std::pair<Vec, Vec>>& coords) {
    // coords: per noise coordinate, (support values, probabilities)
    StageDist out;
    std::vector<size_t> idx(coords.size(), 0);
    while (true) {
        Vec pt(coords.size());
        double p = 1.0;
        for (size_t j = 0; j < coords.size(); ++j) {
            pt[j] = coords[j].first[idx[j]];
            p *= coords[j].second[idx[j]];
        }
        out.points.push_back(std::move(pt));
        out.probs.push_back(p);
        int j = static_cast<int>(coords.size()) - 1;
        for (; j >= 0; --j) {
            if (++idx[static_cast<size_t>(j)] < coords[static_cast<size_t>(j)].first.size()) break;
            idx[static_cast<size_t>(j)] = 0;
        }
        if (j < 0) break;
    }
    return out;
}

} // namespace

ProblemSpec make_three_unit(const ThreeUnitParams& p) {
    if (!(p.eps > 0.0)) throw std::invalid_argument("strong convexity requires eps > 0");
    if (p.T < 1) throw std::invalid_argument("three-unit: T must be positive");
    ProblemSpec spec;
    spec.coupling_dim = 1;
    spec.noise.horizon = p.T;
    spec.noise.dim = 3;
    spec.noise.partition.owner = {NoisePartition::kGlobal, 0, 1};
    StageDist st = product_dist({{p.demand_support, p.demand_probs},
                                 {p.inflow_support, p.inflow_probs},
                                 {p.inflow_support, p.inflow_probs}});
    spec.noise.stages.assign(static_cast<size_t>(p.T), st);

    spec.subsystems.push_back(hydro_unit("hydro1", p.x0, p.stock_lo, p.stock_hi, p.u_hi,
                                         p.eps, p.k_coeff, p.k_ref, 3, 1));
    spec.subsystems.push_back(hydro_unit("hydro2", p.x0, p.stock_lo, p.stock_hi, p.u_hi,
                                         p.eps, p.k_coeff, p.k_ref, 3, 2));
    spec.subsystems.push_back(thermal_unit("thermal", p.thermal_u_hi, p.thermal_quad, 3, 0));
    return spec;
}

// ---------------------------------------------------------------------------

StrugarekParams StrugarekParams::default_two_unit() {
    StrugarekParams p;
    p.n = 2;
    p.c = {1.0, 2.0};
    p.alpha = 0.5;
    p.T = 3;
    p.x1 = {5.0, 3.0};
    StageDist s1;
    s1.points = {{3.0, 0.0, 0.0}, {5.0, 0.0, 0.0}};
    s1.probs = {0.5, 0.5};
    StageDist s2;
    s2.points = {{2.0, 2.0, 1.0}, {6.0, 1.0, 1.0}};
    s2.probs = {0.5, 0.5};
    p.stage_noise = {s1, s2};
    p.final_inflow.points = {{0.0, 1.0}, {2.0, 3.0}};
    p.final_inflow.probs = {0.5, 0.5};
    return p;
}

ProblemSpec make_strugarek(const StrugarekParams& p) {
    if (p.n < 1) throw std::invalid_argument("strugarek: n >= 1 required");
    if (!(p.alpha > 0.0)) throw std::invalid_argument("strugarek: alpha > 0 required");
    for (double cj : p.c)
        if (!(cj > 0.0)) throw std::invalid_argument("strugarek: costs must be positive");
    if (static_cast<int>(p.c.size()) != p.n || static_cast<int>(p.x1.size()) != p.n)
        throw std::invalid_argument("strugarek: c and x1 must have n entries");
    if (!p.gamma.empty()) {
        if (static_cast<int>(p.gamma.size()) != p.n)
            throw std::invalid_argument("strugarek: gamma must have n entries");
        for (int j = 0; j < p.n; ++j)
            if (p.gamma[static_cast<size_t>(j)] != p.alpha * p.c[static_cast<size_t>(j)])
                throw std::invalid_argument(
                    "strugarek: gamma_j = alpha * c_j proportionality violated");
    }
    const int Tart = p.T - 1; // decision stages
    if (Tart < 1) throw std::invalid_argument("strugarek: T >= 2 required");
    if (static_cast<int>(p.stage_noise.size()) != Tart)
        throw std::invalid_argument("strugarek: need stage noise for every decision time");

    ProblemSpec spec;
    spec.coupling_dim = 1;
    spec.noise.horizon = Tart;
    spec.noise.dim = 1 + p.n;
    spec.noise.partition.owner.assign(static_cast<size_t>(1 + p.n), NoisePartition::kGlobal);
    for (int j = 0; j < p.n; ++j) spec.noise.partition.owner[static_cast<size_t>(1 + j)] = j;
    spec.noise.stages = p.stage_noise;

    // mean and variance of the final inflow, folded into the terminal cost
    Vec aT_mean(static_cast<size_t>(p.n), 0.0), aT_var(static_cast<size_t>(p.n), 0.0);
    {
        double psum = 0.0;
        for (double q : p.final_inflow.probs) psum += q;
        if (std::abs(psum - 1.0) > 1e-12)
            throw std::invalid_argument("strugarek: final inflow probabilities must sum to 1");
        for (size_t k = 0; k < p.final_inflow.points.size(); ++k)
            for (int j = 0; j < p.n; ++j)
                aT_mean[static_cast<size_t>(j)] +=
                    p.final_inflow.probs[k] * p.final_inflow.points[k][static_cast<size_t>(j)];
        for (size_t k = 0; k < p.final_inflow.points.size(); ++k)
            for (int j = 0; j < p.n; ++j) {
                double dv = p.final_inflow.points[k][static_cast<size_t>(j)] - aT_mean[static_cast<size_t>(j)];
                aT_var[static_cast<size_t>(j)] += p.final_inflow.probs[k] * dv * dv;
            }
    }

    for (int j = 0; j < p.n; ++j) {
        SubsystemSpec sub;
        sub.name = "reservoir" + std::to_string(j + 1);
        sub.state_dim = 1;
        sub.control_dim = 1;
        sub.x0 = {p.x1[static_cast<size_t>(j)]};
        sub.x_lo = Stagewise<Vec>(Vec{-kInf});
        sub.x_hi = Stagewise<Vec>(Vec{kInf});
        sub.u_lo = Stagewise<Vec>(Vec{-kInf});
        sub.u_hi = Stagewise<Vec>(Vec{kInf});
        // stage 0 sees no inflow (the initial stock is given); later stages
        // add the inflow observed with the stage noise
        sub.dynamics.A.v.assign(static_cast<size_t>(Tart), Mat::identity(1));
        Mat B(1, 1);
        B(0, 0) = -1.0;
        sub.dynamics.B.v.assign(static_cast<size_t>(Tart), B);
        sub.dynamics.C.v.assign(static_cast<size_t>(Tart), row_select(1 + p.n, 1 + j, 1.0));
        sub.dynamics.C.v[0] = Mat(1, 1 + p.n);
        sub.dynamics.b.v.assign(static_cast<size_t>(Tart), Vec{0.0});
        double cj = p.c[static_cast<size_t>(j)];
        double gj = p.alpha * cj;
        sub.cost = Stagewise<CostTerms>(CostTerms{QuadControlTerm{{cj / 2.0}, {0.0}, {}}});
        sub.final_cost = {
            QuadStateTerm{{gj / 2.0}, {p.x1[static_cast<size_t>(j)] - aT_mean[static_cast<size_t>(j)]}},
            ConstTerm{gj / 2.0 * aT_var[static_cast<size_t>(j)]}};
        sub.coupling.P = Stagewise<Mat>(row_select(1, 0, 1.0));
        sub.coupling.Q = Stagewise<Mat>(Mat(1, 1));
        sub.coupling.R = Stagewise<Mat>(j == 0 ? row_select(1 + p.n, 0, -1.0) : Mat(1, 1 + p.n));
        sub.coupling.r = Stagewise<Vec>(Vec{0.0});
        spec.subsystems.push_back(std::move(sub));
    }
    return spec;
}

Vec strugarek_price_oracle(const StrugarekParams& p, const Scenario& scenario) {
    if (!(p.alpha > 0.0)) throw std::invalid_argument("oracle: alpha > 0 required");
    for (double cj : p.c)
        if (!(cj > 0.0)) throw std::invalid_argument("oracle: costs must be positive");
    const int Tart = p.T - 1;
    if (static_cast<int>(scenario.w.size()) != Tart)
        throw std::invalid_argument("oracle: scenario length must match the decision horizon");
    double M = 0.0;
    for (double cj : p.c) M += 1.0 / cj;

    auto demand_mean = [&](int paper_t) { // E[d_t], t in 2..T-1
        const StageDist& st = p.stage_noise[static_cast<size_t>(paper_t - 1)];
        double m = 0.0;
        for (size_t k = 0; k < st.points.size(); ++k) m += st.probs[k] * st.points[k][0];
        return m;
    };
    auto inflow_sum_mean = [&](int paper_t) { // E[a_t^sigma], t in 2..T
        if (paper_t == p.T) {
            double m = 0.0;
            for (size_t k = 0; k < p.final_inflow.points.size(); ++k)
                for (int j = 0; j < p.n; ++j)
                    m += p.final_inflow.probs[k] * p.final_inflow.points[k][static_cast<size_t>(j)];
            return m;
        }
        const StageDist& st = p.stage_noise[static_cast<size_t>(paper_t - 1)];
        double m = 0.0;
        for (size_t k = 0; k < st.points.size(); ++k)
            for (int j = 0; j < p.n; ++j) m += st.probs[k] * st.points[k][static_cast<size_t>(1 + j)];
        return m;
    };

    Vec lam(static_cast<size_t>(Tart));
    double d1 = scenario.w[0][0];
    double sum_Ea = 0.0;
    for (int s = 2; s <= p.T; ++s) sum_Ea += inflow_sum_mean(s);
    double sum_Ed = 0.0;
    for (int s = 2; s <= p.T - 1; ++s) sum_Ed += demand_mean(s);
    lam[0] = ((1.0 + p.alpha) * d1 - p.alpha * sum_Ea + p.alpha * sum_Ed) / M;

    for (int t = 1; t <= Tart - 1; ++t) { // paper time t -> t+1
        double d_next = scenario.w[static_cast<size_t>(t)][0];
        double d_curr = scenario.w[static_cast<size_t>(t) - 1][0];
        double a_next = 0.0;
        for (int j = 0; j < p.n; ++j) a_next += scenario.w[static_cast<size_t>(t)][static_cast<size_t>(1 + j)];
        double Ed_next = demand_mean(t + 1);
        double Ea_next = inflow_sum_mean(t + 1);
        lam[static_cast<size_t>(t)] =
            lam[static_cast<size_t>(t) - 1] +
            (d_next * (1.0 + p.alpha) - d_curr - p.alpha * Ed_next - p.alpha * (a_next - Ea_next)) / M;
    }
    return lam;
}

// ---------------------------------------------------------------------------

ProblemSpec make_multistock(int N, int T, std::uint64_t seed) {
    if (N < 1 || T < 2) throw std::invalid_argument("multistock: need N >= 1, T >= 2");
    CounterRng rng(seed, 0x6d73746bULL);
    ProblemSpec spec;
    spec.coupling_dim = 1;
    spec.noise.horizon = T;
    spec.noise.dim = N + 2; // demand, inflows, thermal cost factor
    spec.noise.partition.owner.assign(static_cast<size_t>(N + 2), NoisePartition::kGlobal);
    for (int j = 0; j < N; ++j) spec.noise.partition.owner[static_cast<size_t>(1 + j)] = j;

    std::uint64_t ctr = 0;
    double max_demand = 0.0;
    for (int t = 0; t < T; ++t) {
        double season = 1.0 + 0.3 * std::sin(2.0 * 3.14159265358979323846 * t / T);
        double base = 0.8 * N * season * (0.9 + 0.2 * rng.uniform(ctr++));
        std::vector<std::pair<Vec, Vec>> coords;
        coords.push_back({{0.8 * base, base, 1.2 * base}, {1.0 / 3, 1.0 / 3, 1.0 / 3}});
        max_demand = std::max(max_demand, 1.2 * base);
        for (int j = 0; j < N; ++j) {
            double lo = 0.3 * rng.uniform(ctr++);
            double hi = lo + 0.4 + 0.8 * rng.uniform(ctr++);
            coords.push_back({{lo, hi}, {0.5, 0.5}});
        }
        // thermal cost factor 1/availability
        coords.push_back({{1.0, 1.0 / 0.7}, {0.5, 0.5}});
        spec.noise.stages.push_back(product_dist(coords));
    }

    for (int j = 0; j < N; ++j)
        spec.subsystems.push_back(hydro_unit("stock" + std::to_string(j + 1), 5.0, 0.0, 10.0,
                                             3.0, 0.01, 0.1, 5.0, N + 2, 1 + j));
    NoiseScale scale;
    scale.coord = N + 1;
    scale.base = 0.0;
    scale.slope = 1.0;
    spec.subsystems.push_back(
        thermal_unit("thermal", 1.25 * max_demand, 1.0, N + 2, 0, scale));
    return spec;
}

ProblemSpec make_independent_suite(int N, bool shared_noise) {
    if (N < 2) throw std::invalid_argument("independent suite: N >= 2 required");
    const int T = 5;
    ProblemSpec spec;
    spec.coupling_dim = 1; // maps are identically zero: g == 0
    spec.noise.horizon = T;
    if (shared_noise) {
        spec.noise.dim = 1;
        spec.noise.partition.owner = {NoisePartition::kGlobal};
        StageDist st;
        st.points = {{0.0}, {1.0}, {2.0}};
        st.probs = {1.0 / 3, 1.0 / 3, 1.0 / 3};
        spec.noise.stages.assign(static_cast<size_t>(T), st);
    } else {
        spec.noise.dim = N;
        spec.noise.partition.owner.assign(static_cast<size_t>(N), 0);
        for (int j = 0; j < N; ++j) spec.noise.partition.owner[static_cast<size_t>(j)] = j;
        std::vector<std::pair<Vec, Vec>> coords;
        for (int j = 0; j < N; ++j)
            coords.push_back({{0.0, 1.0, 2.0}, {1.0 / 3, 1.0 / 3, 1.0 / 3}});
        StageDist st = product_dist(coords);
        spec.noise.stages.assign(static_cast<size_t>(T), st);
    }
    for (int j = 0; j < N; ++j) {
        SubsystemSpec sub = hydro_unit("unit" + std::to_string(j + 1), 5.0, 0.0, 10.0, 3.0,
                                       0.1, 0.1, 5.0, spec.noise.dim,
                                       shared_noise ? 0 : j);
        // no coupling: zero maps
        sub.coupling.P = Stagewise<Mat>(Mat(1, 1));
        sub.coupling.R = Stagewise<Mat>(Mat(1, spec.noise.dim));
        spec.subsystems.push_back(std::move(sub));
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Tree bookkeeping

TreeIndex TreeIndex::build(const NoiseModel& noise) {
    TreeIndex idx;
    int count = 1;
    for (int t = 0; t < noise.horizon; ++t) {
        count *= static_cast<int>(noise.stages[static_cast<size_t>(t)].points.size());
        idx.stage_counts.push_back(count);
    }
    return idx;
}

int TreeIndex::node_of_path(const NoiseModel& noise, int path, int t) {
    int suffix = 1;
    for (int s = t + 1; s < noise.horizon; ++s)
        suffix *= static_cast<int>(noise.stages[static_cast<size_t>(s)].points.size());
    return path / suffix;
}

double TreeIndex::node_prob(const NoiseModel& noise, int t, int node) const {
    double p = 1.0;
    int n = node;
    for (int s = t; s >= 0; --s) {
        int width = static_cast<int>(noise.stages[static_cast<size_t>(s)].points.size());
        p *= noise.stages[static_cast<size_t>(s)].probs[static_cast<size_t>(n % width)];
        n /= width;
    }
    return p;
}

const Vec& TreeIndex::node_noise(const NoiseModel& noise, int t, int node) const {
    int width = static_cast<int>(noise.stages[static_cast<size_t>(t)].points.size());
    return noise.stages[static_cast<size_t>(t)].points[static_cast<size_t>(node % width)];
}

// ---------------------------------------------------------------------------
// Enumeration route

namespace {

struct TreeEnum {
    const ProblemSpec& spec;
    const TreeProblem& tp;
    TreeIndex idx;
    std::vector<std::vector<std::vector<Vec>>> upoints; // [t][unit]
    std::vector<detail::JointStageView> views;          // per stage
    // memo[t][node]: state vector -> value
    std::vector<std::vector<std::map<Vec, double>>> memo;
    long long evals = 0;

    explicit TreeEnum(const TreeProblem& tpin) : spec(*tpin.spec), tp(tpin) {
        idx = TreeIndex::build(spec.noise);
        const int T = spec.horizon();
        upoints.resize(static_cast<size_t>(T));
        views.resize(static_cast<size_t>(T));
        memo.resize(static_cast<size_t>(T));
        for (int t = 0; t < T; ++t) {
            auto& per_unit = upoints[static_cast<size_t>(t)];
            per_unit.resize(static_cast<size_t>(spec.units()));
            detail::JointStageView& view = views[static_cast<size_t>(t)];
            view.t = t;
            view.coupling_dim = tp.filter_coupling ? spec.coupling_dim : 0;
            view.coupling = tp.filter_coupling && spec.coupling_dim > 0 ? CouplingMode::GridFilter
                                                                        : CouplingMode::None;
            view.coupling_tol = tp.coupling_tol;
            int cdim = 0;
            for (int i = 0; i < spec.units(); ++i) {
                const auto& sub = spec.subsystems[static_cast<size_t>(i)];
                std::vector<int> nodes;
                if (tp.control_nodes.size() == 1) {
                    nodes = {tp.control_nodes[0]};
                } else {
                    for (int k = 0; k < sub.control_dim; ++k)
                        nodes.push_back(tp.control_nodes[static_cast<size_t>(cdim + k)]);
                }
                cdim += sub.control_dim;
                per_unit[static_cast<size_t>(i)] = control_points(sub, t, nodes);
                detail::UnitStageView uv;
                uv.sub = &sub;
                uv.upoints = &per_unit[static_cast<size_t>(i)];
                uv.xlo_next = &sub.x_lo.at(t + 1);
                uv.xhi_next = &sub.x_hi.at(t + 1);
                uv.ulo = &sub.u_lo.at(t);
                uv.uhi = &sub.u_hi.at(t);
                view.units.push_back(uv);
            }
            memo[static_cast<size_t>(t)].resize(static_cast<size_t>(idx.nodes_at(t)));
        }
    }

    double terminal(std::span<const double> xj) const {
        double k = 0.0;
        int off = 0;
        for (int i = 0; i < spec.units(); ++i) {
            const auto& sub = spec.subsystems[static_cast<size_t>(i)];
            k += sub.terminal_cost(xj.subspan(static_cast<size_t>(off), static_cast<size_t>(sub.state_dim)));
            off += sub.state_dim;
        }
        return k;
    }

    double value(int t, int node, const Vec& xj, std::vector<Vec>* argmin_u = nullptr) {
        auto& cache = memo[static_cast<size_t>(t)][static_cast<size_t>(node)];
        if (!argmin_u) {
            auto it = cache.find(xj);
            if (it != cache.end()) return it->second;
        }
        const int T = spec.horizon();
        const Vec& w = idx.node_noise(spec.noise, t, node);
        long long combos = 1;
        for (const auto& up : upoints[static_cast<size_t>(t)]) combos *= static_cast<long long>(up.size());
        evals += combos;
        if (evals > tp.eval_cap) throw std::runtime_error("tree_exact_solve: evaluation cap exceeded");

        std::vector<Vec> xs = split_joint(xj);
        double v;
        if (t == T - 1) {
            auto cont = [&](std::span<const double> xn) { return terminal(xn); };
            v = views[static_cast<size_t>(t)].min_over_controls(xs, w, {}, cont, argmin_u);
        } else {
            const auto& next_dist = spec.noise.stages[static_cast<size_t>(t) + 1];
            auto cont = [&](std::span<const double> xn) {
                Vec key(xn.begin(), xn.end());
                double acc = 0.0;
                for (size_t k = 0; k < next_dist.points.size(); ++k) {
                    int ch = node * static_cast<int>(next_dist.points.size()) + static_cast<int>(k);
                    double cv = value(t + 1, ch, key);
                    if (cv == kInf) return kInf;
                    acc += next_dist.probs[k] * cv;
                }
                return acc;
            };
            v = views[static_cast<size_t>(t)].min_over_controls(xs, w, {}, cont, argmin_u);
        }
        if (!argmin_u) cache.emplace(xj, v);
        return v;
    }

    std::vector<Vec> split_joint(std::span<const double> xj) const {
        std::vector<Vec> xs(static_cast<size_t>(spec.units()));
        int off = 0;
        for (int i = 0; i < spec.units(); ++i) {
            int n = spec.subsystems[static_cast<size_t>(i)].state_dim;
            xs[static_cast<size_t>(i)] = Vec(xj.begin() + off, xj.begin() + off + n);
            off += n;
        }
        return xs;
    }
};

} // namespace

TreeSolution tree_exact_solve(const TreeProblem& tp) {
    if (!tp.spec) throw std::invalid_argument("tree_exact_solve: no problem");
    const ProblemSpec& spec = *tp.spec;
    const int T = spec.horizon();
    TreeEnum te(tp);

    Vec x0;
    for (const auto& sub : spec.subsystems) x0.insert(x0.end(), sub.x0.begin(), sub.x0.end());

    const auto& d0 = spec.noise.stages[0];
    double total = 0.0;
    for (size_t k = 0; k < d0.points.size(); ++k) {
        double v = te.value(0, static_cast<int>(k), x0);
        total += d0.probs[k] * v;
    }

    TreeSolution sol;
    sol.value = total;
    // forward pass: extract optimal controls along reachable optimal states
    sol.controls.resize(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t)
        sol.controls[static_cast<size_t>(t)].resize(static_cast<size_t>(te.idx.nodes_at(t)));
    std::vector<std::pair<int, Vec>> frontier; // (node, joint state) at stage t
    for (size_t k = 0; k < d0.points.size(); ++k) frontier.push_back({static_cast<int>(k), x0});
    for (int t = 0; t < T; ++t) {
        std::vector<std::pair<int, Vec>> next;
        for (auto& [node, xj] : frontier) {
            std::vector<Vec> argmin;
            double v = te.value(t, node, xj, &argmin);
            if (v == kInf)
                throw std::runtime_error("infeasible node (stage " + std::to_string(t) + ", node " +
                                         std::to_string(node) + ")");
            sol.controls[static_cast<size_t>(t)][static_cast<size_t>(node)] = argmin;
            if (t < T - 1) {
                // propagate the state under the chosen controls
                const Vec& w = te.idx.node_noise(spec.noise, t, node);
                Vec xn;
                auto xs = te.split_joint(xj);
                for (int i = 0; i < spec.units(); ++i) {
                    const auto& sub = spec.subsystems[static_cast<size_t>(i)];
                    Vec xni(static_cast<size_t>(sub.state_dim), 0.0);
                    sub.dynamics.next_state(t, xs[static_cast<size_t>(i)], argmin[static_cast<size_t>(i)], w, xni);
                    xn.insert(xn.end(), xni.begin(), xni.end());
                }
                int width = static_cast<int>(spec.noise.stages[static_cast<size_t>(t) + 1].points.size());
                for (int k = 0; k < width; ++k) next.push_back({node * width + k, xn});
            }
        }
        frontier = std::move(next);
    }
    return sol;
}

// ---------------------------------------------------------------------------
// KKT route (affine-quadratic, inactive bounds)

namespace {

struct QuadExtract {
    // per control coordinate: quadratic coeff (noise-scaled at a node) and linear
    static void control_terms(const SubsystemSpec& sub, int t, std::span<const double> w,
                              Vec& quad, Vec& lin, double& konst) {
        quad.assign(static_cast<size_t>(sub.control_dim), 0.0);
        lin.assign(static_cast<size_t>(sub.control_dim), 0.0);
        for (const auto& term : sub.cost.at(t)) {
            if (const auto* qc = std::get_if<QuadControlTerm>(&term)) {
                double s = qc->scale ? qc->scale->factor(w) : 1.0;
                for (size_t k = 0; k < qc->coeff.size(); ++k) quad[k] += s * qc->coeff[k];
                for (size_t k = 0; k < qc->lin.size(); ++k) lin[k] += qc->lin[k];
            } else if (const auto* c = std::get_if<ConstTerm>(&term)) {
                konst += c->value;
            } else if (std::get_if<QuadStateTerm>(&term) || std::get_if<LinStateTerm>(&term)) {
                // handled by state_terms
            } else {
                throw std::runtime_error("tree KKT: cost term outside the affine-quadratic class");
            }
        }
    }
    static void state_terms(const CostTerms& terms, Vec& quad, Vec& lin_from_ref, Vec& lin,
                            double& konst, int dim) {
        quad.assign(static_cast<size_t>(dim), 0.0);
        lin_from_ref.assign(static_cast<size_t>(dim), 0.0);
        lin.assign(static_cast<size_t>(dim), 0.0);
        for (const auto& term : terms) {
            if (const auto* qs = std::get_if<QuadStateTerm>(&term)) {
                for (size_t k = 0; k < qs->coeff.size(); ++k) {
                    quad[k] += qs->coeff[k];
                    lin_from_ref[k] += -2.0 * qs->coeff[k] * qs->ref[k];
                    konst += qs->coeff[k] * qs->ref[k] * qs->ref[k];
                }
            } else if (const auto* ls = std::get_if<LinStateTerm>(&term)) {
                for (size_t k = 0; k < ls->coeff.size(); ++k) lin[k] += ls->coeff[k];
            } else if (const auto* c = std::get_if<ConstTerm>(&term)) {
                konst += c->value;
            } else if (std::get_if<QuadControlTerm>(&term)) {
                // handled by control_terms
            } else {
                throw std::runtime_error("tree KKT: cost term outside the affine-quadratic class");
            }
        }
    }
};

} // namespace

TreeSolution tree_kkt_solve(const ProblemSpec& spec, bool want_duals) {
    const int T = spec.horizon();
    const int N = spec.units();
    const int d = spec.coupling_dim;
    TreeIndex idx = TreeIndex::build(spec.noise);

    // variable layout: controls per (t,node,unit), states per (t>=1,node,unit)
    // plus terminal states attached to stage T-1 nodes
    int nvar = 0;
    std::vector<std::vector<std::vector<int>>> uoff(static_cast<size_t>(T));
    std::vector<std::vector<std::vector<int>>> xoff(static_cast<size_t>(T) + 1);
    for (int t = 0; t < T; ++t) {
        uoff[static_cast<size_t>(t)].assign(static_cast<size_t>(idx.nodes_at(t)),
                                            std::vector<int>(static_cast<size_t>(N), -1));
        for (int n = 0; n < idx.nodes_at(t); ++n)
            for (int i = 0; i < N; ++i) {
                uoff[static_cast<size_t>(t)][static_cast<size_t>(n)][static_cast<size_t>(i)] = nvar;
                nvar += spec.subsystems[static_cast<size_t>(i)].control_dim;
            }
    }
    for (int t = 1; t <= T; ++t) {
        int count = idx.nodes_at(std::min(t, T - 1));
        xoff[static_cast<size_t>(t)].assign(static_cast<size_t>(count),
                                            std::vector<int>(static_cast<size_t>(N), -1));
        for (int n = 0; n < count; ++n)
            for (int i = 0; i < N; ++i) {
                xoff[static_cast<size_t>(t)][static_cast<size_t>(n)][static_cast<size_t>(i)] = nvar;
                nvar += spec.subsystems[static_cast<size_t>(i)].state_dim;
            }
    }

    // constraint rows: dynamics then coupling
    int nrow = 0;
    for (int t = 1; t <= T; ++t) {
        int count = static_cast<int>(xoff[static_cast<size_t>(t)].size());
        for (int n = 0; n < count; ++n)
            for (int i = 0; i < N; ++i) nrow += spec.subsystems[static_cast<size_t>(i)].state_dim;
    }
    std::vector<std::vector<int>> coupling_row(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
        coupling_row[static_cast<size_t>(t)].assign(static_cast<size_t>(idx.nodes_at(t)), -1);
        for (int n = 0; n < idx.nodes_at(t); ++n) {
            coupling_row[static_cast<size_t>(t)][static_cast<size_t>(n)] = nrow;
            nrow += d;
        }
    }

    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nvar, nvar);
    Eigen::VectorXd q = Eigen::VectorXd::Zero(nvar);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(nrow, nvar);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nrow);

    auto x_index = [&](int t, int node, int unit) {
        return xoff[static_cast<size_t>(t)][static_cast<size_t>(node)][static_cast<size_t>(unit)];
    };

    // objective
    for (int t = 0; t < T; ++t)
        for (int n = 0; n < idx.nodes_at(t); ++n) {
            double pi = idx.node_prob(spec.noise, t, n);
            const Vec& w = idx.node_noise(spec.noise, t, n);
            for (int i = 0; i < N; ++i) {
                const auto& sub = spec.subsystems[static_cast<size_t>(i)];
                Vec cq, cl;
                double konst = 0.0;
                QuadExtract::control_terms(sub, t, w, cq, cl, konst);
                int ub = uoff[static_cast<size_t>(t)][static_cast<size_t>(n)][static_cast<size_t>(i)];
                for (int k = 0; k < sub.control_dim; ++k) {
                    H(ub + k, ub + k) += 2.0 * pi * cq[static_cast<size_t>(k)];
                    q(ub + k) += pi * cl[static_cast<size_t>(k)];
                }
                if (sub.state_dim > 0 && t >= 1) {
                    Vec sq, sr, sl;
                    double k2 = 0.0;
                    QuadExtract::state_terms(sub.cost.at(t), sq, sr, sl, k2, sub.state_dim);
                    int xb = x_index(t, n, i);
                    for (int k = 0; k < sub.state_dim; ++k) {
                        H(xb + k, xb + k) += 2.0 * pi * sq[static_cast<size_t>(k)];
                        q(xb + k) += pi * (sr[static_cast<size_t>(k)] + sl[static_cast<size_t>(k)]);
                    }
                } else if (sub.state_dim > 0 && t == 0) {
                    // stage-0 state is the given x0: contributes constants only
                }
            }
        }
    // terminal costs on stage-(T-1) node states
    for (int n = 0; n < idx.nodes_at(T - 1); ++n) {
        double pi = idx.node_prob(spec.noise, T - 1, n);
        for (int i = 0; i < N; ++i) {
            const auto& sub = spec.subsystems[static_cast<size_t>(i)];
            if (sub.state_dim == 0) continue;
            Vec sq, sr, sl;
            double k2 = 0.0;
            QuadExtract::state_terms(sub.final_cost, sq, sr, sl, k2, sub.state_dim);
            int xb = x_index(T, n, i);
            for (int k = 0; k < sub.state_dim; ++k) {
                H(xb + k, xb + k) += 2.0 * pi * sq[static_cast<size_t>(k)];
                q(xb + k) += pi * (sr[static_cast<size_t>(k)] + sl[static_cast<size_t>(k)]);
            }
        }
    }

    // dynamics rows: x_{t+1,node'} - A x - B u = C w + b
    int row = 0;
    for (int t = 1; t <= T; ++t) {
        int count = static_cast<int>(xoff[static_cast<size_t>(t)].size());
        for (int n = 0; n < count; ++n) {
            int parent = t <= T - 1 ? n / static_cast<int>(spec.noise.stages[static_cast<size_t>(t)].points.size())
                                    : n;
            int pt = t - 1;
            const Vec& w = idx.node_noise(spec.noise, pt, parent);
            for (int i = 0; i < N; ++i) {
                const auto& sub = spec.subsystems[static_cast<size_t>(i)];
                if (sub.state_dim == 0) continue;
                const Mat& Am = sub.dynamics.A.at(pt);
                const Mat& Bm = sub.dynamics.B.at(pt);
                const Mat& Cm = sub.dynamics.C.at(pt);
                const Vec& bv = sub.dynamics.b.at(pt);
                int xb = x_index(t, n, i);
                int ub = uoff[static_cast<size_t>(pt)][static_cast<size_t>(parent)][static_cast<size_t>(i)];
                for (int r = 0; r < sub.state_dim; ++r) {
                    A(row, xb + r) = 1.0;
                    double c = bv[static_cast<size_t>(r)];
                    for (int k = 0; k < Cm.cols; ++k) c += Cm(r, k) * w[static_cast<size_t>(k)];
                    rhs(row) = c;
                    if (pt >= 1) {
                        int xpb = x_index(pt, parent, i);
                        for (int k = 0; k < sub.state_dim; ++k) A(row, xpb + k) -= Am(r, k);
                    } else {
                        for (int k = 0; k < sub.state_dim; ++k)
                            rhs(row) += Am(r, k) * sub.x0[static_cast<size_t>(k)];
                    }
                    for (int k = 0; k < sub.control_dim; ++k) A(row, ub + k) -= Bm(r, k);
                    ++row;
                }
            }
        }
    }
    // coupling rows: sum_i (P u + Q x) = -(R w + r)
    for (int t = 0; t < T; ++t)
        for (int n = 0; n < idx.nodes_at(t); ++n) {
            const Vec& w = idx.node_noise(spec.noise, t, n);
            int base = coupling_row[static_cast<size_t>(t)][static_cast<size_t>(n)];
            for (int i = 0; i < N; ++i) {
                const auto& sub = spec.subsystems[static_cast<size_t>(i)];
                const Mat& P = sub.coupling.P.at(t);
                const Mat& Q = sub.coupling.Q.at(t);
                const Mat& R = sub.coupling.R.at(t);
                const Vec& rv = sub.coupling.r.at(t);
                int ub = uoff[static_cast<size_t>(t)][static_cast<size_t>(n)][static_cast<size_t>(i)];
                for (int r = 0; r < d; ++r) {
                    for (int k = 0; k < sub.control_dim; ++k) A(base + r, ub + k) += P(r, k);
                    if (sub.state_dim > 0) {
                        if (t >= 1) {
                            int xb = x_index(t, n, i);
                            for (int k = 0; k < sub.state_dim; ++k) A(base + r, xb + k) += Q(r, k);
                        } else {
                            for (int k = 0; k < sub.state_dim; ++k)
                                rhs(base + r) -= Q(r, k) * sub.x0[static_cast<size_t>(k)];
                        }
                    }
                    double c = rv[static_cast<size_t>(r)];
                    for (int k = 0; k < R.cols; ++k) c += R(r, k) * w[static_cast<size_t>(k)];
                    rhs(base + r) -= c;
                }
            }
        }

    // assemble and solve the KKT system
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nvar + nrow, nvar + nrow);
    K.topLeftCorner(nvar, nvar) = H;
    K.topRightCorner(nvar, nrow) = A.transpose();
    K.bottomLeftCorner(nrow, nvar) = A;
    Eigen::VectorXd b(nvar + nrow);
    b.head(nvar) = -q;
    b.tail(nrow) = rhs;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible())
        throw std::runtime_error("tree KKT system is singular (check convexity/ranks)");
    Eigen::VectorXd z = lu.solve(b);

    TreeSolution sol;
    sol.controls.resize(static_cast<size_t>(T));
    if (want_duals) sol.price.resize(static_cast<size_t>(T));
    double value = 0.0;
    for (int t = 0; t < T; ++t) {
        sol.controls[static_cast<size_t>(t)].resize(static_cast<size_t>(idx.nodes_at(t)));
        if (want_duals)
            sol.price[static_cast<size_t>(t)].resize(static_cast<size_t>(idx.nodes_at(t)));
        for (int n = 0; n < idx.nodes_at(t); ++n) {
            double pi = idx.node_prob(spec.noise, t, n);
            const Vec& w = idx.node_noise(spec.noise, t, n);
            auto& per_unit = sol.controls[static_cast<size_t>(t)][static_cast<size_t>(n)];
            per_unit.resize(static_cast<size_t>(N));
            for (int i = 0; i < N; ++i) {
                const auto& sub = spec.subsystems[static_cast<size_t>(i)];
                int ub = uoff[static_cast<size_t>(t)][static_cast<size_t>(n)][static_cast<size_t>(i)];
                Vec u(static_cast<size_t>(sub.control_dim));
                for (int k = 0; k < sub.control_dim; ++k) u[static_cast<size_t>(k)] = z(ub + k);
                // bounds must be inactive for the KKT route to be exact
                const Vec& lo = sub.u_lo.at(t);
                const Vec& hi = sub.u_hi.at(t);
                for (int k = 0; k < sub.control_dim; ++k)
                    if (u[static_cast<size_t>(k)] < lo[static_cast<size_t>(k)] - 1e-12 ||
                        u[static_cast<size_t>(k)] > hi[static_cast<size_t>(k)] + 1e-12)
                        throw std::runtime_error("tree KKT requires inactive control bounds");
                Vec x;
                if (sub.state_dim > 0) {
                    if (t == 0) {
                        x = sub.x0;
                    } else {
                        int xb = x_index(t, n, i);
                        x.resize(static_cast<size_t>(sub.state_dim));
                        for (int k = 0; k < sub.state_dim; ++k) x[static_cast<size_t>(k)] = z(xb + k);
                    }
                    const Vec& xl = sub.x_lo.at(t);
                    const Vec& xh = sub.x_hi.at(t);
                    for (int k = 0; k < sub.state_dim; ++k)
                        if (x[static_cast<size_t>(k)] < xl[static_cast<size_t>(k)] - 1e-12 ||
                            x[static_cast<size_t>(k)] > xh[static_cast<size_t>(k)] + 1e-12)
                            throw std::runtime_error("tree KKT requires inactive state bounds");
                }
                value += pi * sub.stage_cost(t, x, u, w);
                per_unit[static_cast<size_t>(i)] = std::move(u);
            }
            if (want_duals) {
                Vec pr(static_cast<size_t>(d));
                int base = coupling_row[static_cast<size_t>(t)][static_cast<size_t>(n)];
                for (int r = 0; r < d; ++r) pr[static_cast<size_t>(r)] = -z(nvar + base + r) / pi;
                sol.price[static_cast<size_t>(t)][static_cast<size_t>(n)] = std::move(pr);
            }
        }
    }
    // terminal costs
    for (int n = 0; n < idx.nodes_at(T - 1); ++n) {
        double pi = idx.node_prob(spec.noise, T - 1, n);
        for (int i = 0; i < N; ++i) {
            const auto& sub = spec.subsystems[static_cast<size_t>(i)];
            Vec x;
            if (sub.state_dim > 0) {
                int xb = x_index(T, n, i);
                x.resize(static_cast<size_t>(sub.state_dim));
                for (int k = 0; k < sub.state_dim; ++k) x[static_cast<size_t>(k)] = z(xb + k);
            }
            value += pi * sub.terminal_cost(x);
        }
    }
    sol.value = value;
    return sol;
}

UnitTreeSolve tree_kkt_solve_unit(const ProblemSpec& spec, int unit,
                                  const std::vector<std::vector<Vec>>& multiplier) {
    const int T = spec.horizon();
    const auto& sub = spec.subsystems[static_cast<size_t>(unit)];
    const int m = sub.control_dim;
    const int nx = sub.state_dim;
    const int d = spec.coupling_dim;
    TreeIndex idx = TreeIndex::build(spec.noise);

    int nvar = 0;
    std::vector<std::vector<int>> uoff(static_cast<size_t>(T));
    std::vector<std::vector<int>> xoff(static_cast<size_t>(T) + 1);
    for (int t = 0; t < T; ++t) {
        uoff[static_cast<size_t>(t)].assign(static_cast<size_t>(idx.nodes_at(t)), -1);
        for (int n = 0; n < idx.nodes_at(t); ++n) {
            uoff[static_cast<size_t>(t)][static_cast<size_t>(n)] = nvar;
            nvar += m;
        }
    }
    for (int t = 1; t <= T; ++t) {
        int count = idx.nodes_at(std::min(t, T - 1));
        xoff[static_cast<size_t>(t)].assign(static_cast<size_t>(count), -1);
        for (int n = 0; n < count; ++n) {
            xoff[static_cast<size_t>(t)][static_cast<size_t>(n)] = nvar;
            nvar += nx;
        }
    }
    int nrow = 0;
    for (int t = 1; t <= T; ++t) nrow += static_cast<int>(xoff[static_cast<size_t>(t)].size()) * nx;

    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nvar, nvar);
    Eigen::VectorXd q = Eigen::VectorXd::Zero(nvar);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(std::max(nrow, 1), nvar);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(std::max(nrow, 1));

    for (int t = 0; t < T; ++t)
        for (int n = 0; n < idx.nodes_at(t); ++n) {
            double pi = idx.node_prob(spec.noise, t, n);
            const Vec& w = idx.node_noise(spec.noise, t, n);
            const Vec& lam = multiplier[static_cast<size_t>(t)][static_cast<size_t>(n)];
            Vec cq, cl;
            double konst = 0.0;
            QuadExtract::control_terms(sub, t, w, cq, cl, konst);
            int ub = uoff[static_cast<size_t>(t)][static_cast<size_t>(n)];
            const Mat& P = sub.coupling.P.at(t);
            const Mat& Q = sub.coupling.Q.at(t);
            for (int k = 0; k < m; ++k) {
                H(ub + k, ub + k) += 2.0 * pi * cq[static_cast<size_t>(k)];
                double lin = cl[static_cast<size_t>(k)];
                for (int r = 0; r < d; ++r) lin += lam[static_cast<size_t>(r)] * P(r, k);
                q(ub + k) += pi * lin;
            }
            if (nx > 0 && t >= 1) {
                Vec sq, sr, sl;
                double k2 = 0.0;
                QuadExtract::state_terms(sub.cost.at(t), sq, sr, sl, k2, nx);
                int xb = xoff[static_cast<size_t>(t)][static_cast<size_t>(n)];
                for (int k = 0; k < nx; ++k) {
                    H(xb + k, xb + k) += 2.0 * pi * sq[static_cast<size_t>(k)];
                    double lin = sr[static_cast<size_t>(k)] + sl[static_cast<size_t>(k)];
                    for (int r = 0; r < d; ++r) lin += lam[static_cast<size_t>(r)] * Q(r, k);
                    q(xb + k) += pi * lin;
                }
            }
        }
    for (int n = 0; n < idx.nodes_at(T - 1) && nx > 0; ++n) {
        double pi = idx.node_prob(spec.noise, T - 1, n);
        Vec sq, sr, sl;
        double k2 = 0.0;
        QuadExtract::state_terms(sub.final_cost, sq, sr, sl, k2, nx);
        int xb = xoff[static_cast<size_t>(T)][static_cast<size_t>(n)];
        for (int k = 0; k < nx; ++k) {
            H(xb + k, xb + k) += 2.0 * pi * sq[static_cast<size_t>(k)];
            q(xb + k) += pi * (sr[static_cast<size_t>(k)] + sl[static_cast<size_t>(k)]);
        }
    }

    int row = 0;
    for (int t = 1; t <= T && nx > 0; ++t) {
        int count = static_cast<int>(xoff[static_cast<size_t>(t)].size());
        for (int n = 0; n < count; ++n) {
            int parent = t <= T - 1 ? n / static_cast<int>(spec.noise.stages[static_cast<size_t>(t)].points.size())
                                    : n;
            int pt = t - 1;
            const Vec& w = idx.node_noise(spec.noise, pt, parent);
            const Mat& Am = sub.dynamics.A.at(pt);
            const Mat& Bm = sub.dynamics.B.at(pt);
            const Mat& Cm = sub.dynamics.C.at(pt);
            const Vec& bv = sub.dynamics.b.at(pt);
            int xb = xoff[static_cast<size_t>(t)][static_cast<size_t>(n)];
            int ub = uoff[static_cast<size_t>(pt)][static_cast<size_t>(parent)];
            for (int r = 0; r < nx; ++r) {
                A(row, xb + r) = 1.0;
                double c = bv[static_cast<size_t>(r)];
                for (int k = 0; k < Cm.cols; ++k) c += Cm(r, k) * w[static_cast<size_t>(k)];
                rhs(row) = c;
                if (pt >= 1) {
                    int xpb = xoff[static_cast<size_t>(pt)][static_cast<size_t>(parent)];
                    for (int k = 0; k < nx; ++k) A(row, xpb + k) -= Am(r, k);
                } else {
                    for (int k = 0; k < nx; ++k) rhs(row) += Am(r, k) * sub.x0[static_cast<size_t>(k)];
                }
                for (int k = 0; k < m; ++k) A(row, ub + k) -= Bm(r, k);
                ++row;
            }
        }
    }

    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nvar + nrow, nvar + nrow);
    K.topLeftCorner(nvar, nvar) = H;
    if (nrow > 0) {
        K.topRightCorner(nvar, nrow) = A.topRows(nrow).transpose();
        K.bottomLeftCorner(nrow, nvar) = A.topRows(nrow);
    }
    Eigen::VectorXd b(nvar + nrow);
    b.head(nvar) = -q;
    if (nrow > 0) b.tail(nrow) = rhs.head(nrow);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible())
        throw std::runtime_error("unit tree KKT system is singular");
    Eigen::VectorXd z = lu.solve(b);

    UnitTreeSolve sol;
    sol.controls.resize(static_cast<size_t>(T));
    sol.states.resize(static_cast<size_t>(T) + 1);
    double value = 0.0;
    for (int t = 0; t < T; ++t) {
        sol.controls[static_cast<size_t>(t)].resize(static_cast<size_t>(idx.nodes_at(t)));
        sol.states[static_cast<size_t>(t)].resize(static_cast<size_t>(idx.nodes_at(t)));
        for (int n = 0; n < idx.nodes_at(t); ++n) {
            double pi = idx.node_prob(spec.noise, t, n);
            const Vec& w = idx.node_noise(spec.noise, t, n);
            const Vec& lam = multiplier[static_cast<size_t>(t)][static_cast<size_t>(n)];
            int ub = uoff[static_cast<size_t>(t)][static_cast<size_t>(n)];
            Vec u(static_cast<size_t>(m));
            for (int k = 0; k < m; ++k) u[static_cast<size_t>(k)] = z(ub + k);
            Vec x;
            if (nx > 0) {
                if (t == 0) {
                    x = sub.x0;
                } else {
                    int xb = xoff[static_cast<size_t>(t)][static_cast<size_t>(n)];
                    x.resize(static_cast<size_t>(nx));
                    for (int k = 0; k < nx; ++k) x[static_cast<size_t>(k)] = z(xb + k);
                }
            }
            double g[4] = {0.0, 0.0, 0.0, 0.0};
            std::span<double> gs(g, static_cast<size_t>(d));
            sub.coupling.eval_add(t, x, u, w, gs);
            double priced = sub.stage_cost(t, x, u, w);
            for (int r = 0; r < d; ++r) priced += lam[static_cast<size_t>(r)] * g[r];
            value += pi * priced;
            sol.controls[static_cast<size_t>(t)][static_cast<size_t>(n)] = std::move(u);
            sol.states[static_cast<size_t>(t)][static_cast<size_t>(n)] = std::move(x);
        }
    }
    sol.states[static_cast<size_t>(T)].resize(static_cast<size_t>(idx.nodes_at(T - 1)));
    for (int n = 0; n < idx.nodes_at(T - 1); ++n) {
        double pi = idx.node_prob(spec.noise, T - 1, n);
        Vec x;
        if (nx > 0) {
            int xb = xoff[static_cast<size_t>(T)][static_cast<size_t>(n)];
            x.resize(static_cast<size_t>(nx));
            for (int k = 0; k < nx; ++k) x[static_cast<size_t>(k)] = z(xb + k);
        }
        value += pi * sub.terminal_cost(x);
        sol.states[static_cast<size_t>(T)][static_cast<size_t>(n)] = std::move(x);
    }
    sol.value = value;
    return sol;
}

} // namespace dadp
