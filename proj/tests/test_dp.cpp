#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "dadp/bench.hpp"
#include "dadp/dp.hpp"
#include "dadp/grid.hpp"
#include "dadp/rng.hpp"

using namespace dadp;

namespace {

// one unit, one state, deterministic or small-support noise
ProblemSpec single_unit(int T, double x0, double xlo, double xhi, double ulo, double uhi,
                        CostTerms stage_cost, CostTerms final_cost,
                        std::vector<StageDist> stages, Mat C_row) {
    ProblemSpec spec;
    spec.coupling_dim = 0;
    spec.noise.horizon = T;
    spec.noise.dim = C_row.cols;
    spec.noise.partition.owner.assign(static_cast<size_t>(C_row.cols), NoisePartition::kGlobal);
    spec.noise.stages = std::move(stages);
    SubsystemSpec sub;
    sub.name = "unit";
    sub.state_dim = 1;
    sub.control_dim = 1;
    sub.x0 = {x0};
    sub.x_lo = Stagewise<Vec>(Vec{xlo});
    sub.x_hi = Stagewise<Vec>(Vec{xhi});
    sub.u_lo = Stagewise<Vec>(Vec{ulo});
    sub.u_hi = Stagewise<Vec>(Vec{uhi});
    sub.dynamics.A = Stagewise<Mat>(Mat::identity(1));
    Mat B(1, 1);
    B(0, 0) = -1.0;
    sub.dynamics.B = Stagewise<Mat>(B);
    sub.dynamics.C = Stagewise<Mat>(C_row);
    sub.dynamics.b = Stagewise<Vec>(Vec{0.0});
    sub.cost = Stagewise<CostTerms>(std::move(stage_cost));
    sub.final_cost = std::move(final_cost);
    sub.coupling.P = Stagewise<Mat>(Mat(0, 1));
    sub.coupling.Q = Stagewise<Mat>(Mat(0, 1));
    sub.coupling.R = Stagewise<Mat>(Mat(0, C_row.cols));
    sub.coupling.r = Stagewise<Vec>(Vec{});
    spec.subsystems.push_back(std::move(sub));
    return spec;
}

std::vector<StageDist> deterministic_stages(int T, int dim) {
    StageDist st;
    st.points = {Vec(static_cast<size_t>(dim), 0.0)};
    st.probs = {1.0};
    return std::vector<StageDist>(static_cast<size_t>(T), st);
}

} // namespace

TEST_CASE("multilinear interpolation basics") {
    Grid g;
    g.axes = {{0.0, 1.0, 2.0}};
    Vec table = {2.0, 4.0, 8.0};
    CHECK(g.interpolate(table, Vec{0.0}) == 2.0);
    CHECK(g.interpolate(table, Vec{1.0}) == 4.0);
    CHECK(g.interpolate(table, Vec{2.0}) == 8.0);
    CHECK(g.interpolate(table, Vec{0.5}) == 3.0);
    CHECK_THROWS_AS((void)g.interpolate(table, Vec{-0.1}), std::domain_error);
    CHECK_THROWS_AS((void)g.interpolate(table, Vec{2.1}), std::domain_error);
}

TEST_CASE("multilinear interpolation reproduces affine functions") {
    Grid g;
    g.axes = {{0.0, 0.5, 1.5, 3.0}, {-1.0, 0.0, 2.0}};
    auto f = [](double a, double b) { return 2.5 * a - 1.25 * b + 0.75; };
    Vec table(g.node_count());
    Vec coords(2);
    for (size_t n = 0; n < g.node_count(); ++n) {
        g.node_coords(n, coords);
        table[n] = f(coords[0], coords[1]);
    }
    CounterRng rng(17);
    for (int k = 0; k < 200; ++k) {
        double a = 3.0 * rng.uniform(2 * k);
        double b = -1.0 + 3.0 * rng.uniform(2 * k + 1);
        CHECK(g.interpolate(table, Vec{a, b}) == doctest::Approx(f(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("infinite corners poison only cells that use them") {
    Grid g;
    g.axes = {{0.0, 1.0, 2.0}};
    Vec table = {1.0, 2.0, kInf};
    CHECK(g.interpolate(table, Vec{0.5}) == 1.5);
    CHECK(g.interpolate(table, Vec{1.0}) == 2.0); // node value, upper corner untouched
    CHECK(g.interpolate(table, Vec{1.5}) == kInf);
    CHECK(g.interpolate(table, Vec{2.0}) == kInf);
}

TEST_CASE("zero-dimensional grids hold a single node") {
    Grid g;
    CHECK(g.node_count() == 1);
    Vec table = {42.0};
    CHECK(g.interpolate(table, {}) == 42.0);
}

TEST_CASE("one-stage deterministic problem matches brute force") {
    // K(x) = x^2, x' = x - u, cost u^2, x0 = 1, control grid {0,.25,.5,.75,1}
    auto spec = single_unit(1, 1.0, 0.0, 1.0, 0.0, 1.0,
                            CostTerms{QuadControlTerm{{1.0}, {0.0}, {}}},
                            CostTerms{QuadStateTerm{{1.0}, {0.0}}},
                            deterministic_stages(1, 1), Mat(1, 1));
    GlobalDpOptions opts;
    opts.state_nodes = {5};
    opts.control_nodes = {5};
    opts.parallel = false;
    auto sol = solve_global_dp(spec, opts);

    // independent oracle: exhaustive search over the five controls
    double best = kInf;
    double best_u = -1.0;
    for (int k = 0; k < 5; ++k) {
        double u = 0.25 * k;
        double v = u * u + (1.0 - u) * (1.0 - u);
        if (v < best) {
            best = v;
            best_u = u;
        }
    }
    CHECK(best == 0.5);
    CHECK(best_u == 0.5);
    CHECK(sol.value_at_x0 == best);
    auto u = sol.policy.controls(0, {{1.0}}, Vec{0.0});
    CHECK(u[0][0] == 0.5);
}

TEST_CASE("terminal condition holds exactly at every node") {
    ThreeUnitParams p;
    p.T = 4;
    auto spec = make_three_unit(p);
    GlobalDpOptions opts;
    opts.state_nodes = {9};
    opts.control_nodes = {7};
    opts.coupling = CouplingMode::Eliminate;
    opts.slack_unit = 2;
    auto sol = solve_global_dp(spec, opts);
    const auto& vf = *sol.vf;
    Vec coords(2);
    for (size_t n = 0; n < vf.grid.node_count(); ++n) {
        vf.grid.node_coords(n, coords);
        double k = 0.1 * (coords[0] - 5.0) * (coords[0] - 5.0) +
                   0.1 * (coords[1] - 5.0) * (coords[1] - 5.0);
        CHECK(vf.values[4][n] == k);
    }
}

TEST_CASE("value tables are bitwise identical serial vs parallel") {
    ThreeUnitParams p;
    p.T = 6;
    auto spec = make_three_unit(p);
    GlobalDpOptions a;
    a.state_nodes = {11};
    a.control_nodes = {7};
    a.coupling = CouplingMode::Eliminate;
    a.slack_unit = 2;
    a.parallel = true;
    GlobalDpOptions b = a;
    b.parallel = false;
    auto sa = solve_global_dp(spec, a);
    auto sb = solve_global_dp(spec, b);
    for (size_t t = 0; t < sa.vf->values.size(); ++t)
        for (size_t n = 0; n < sa.vf->values[t].size(); ++n)
            CHECK(sa.vf->values[t][n] == sb.vf->values[t][n]);
}

TEST_CASE("monotonicity: constant stage-cost shift moves values by (T-t)c") {
    auto base = make_independent_suite(2, true);
    GlobalDpOptions opts;
    opts.state_nodes = {7};
    opts.control_nodes = {5};
    auto s0 = solve_global_dp(base, opts);

    auto shifted = base;
    const double c = 1.75;
    for (auto& sub : shifted.subsystems) {
        auto terms = sub.cost.at(0);
        terms.push_back(ConstTerm{c / 2.0}); // two units: each carries half the shift
        sub.cost = Stagewise<CostTerms>(terms);
    }
    auto s1 = solve_global_dp(shifted, opts);
    const int T = base.horizon();
    for (int t = 0; t <= T; ++t)
        for (size_t n = 0; n < s0.vf->values[t].size(); ++n) {
            double expect = s0.vf->values[t][n] + (T - t) * c;
            CHECK(s1.vf->values[t][n] == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("additivity on the independent suite with shared noise") {
    auto spec = make_independent_suite(2, true);
    GlobalDpOptions opts;
    opts.state_nodes = {11};
    opts.control_nodes = {7};
    auto joint = solve_global_dp(spec, opts);

    // per-unit solves of the same problem
    DpOptions uopts;
    uopts.state_nodes = {11};
    uopts.control_nodes = {7};
    InformationSpec info; // constant
    auto zero = PricedTerm::zero(spec.horizon(), 1);
    auto u1 = solve_priced_subproblem(spec.subsystems[0], spec.noise, zero, info, uopts);
    auto u2 = solve_priced_subproblem(spec.subsystems[1], spec.noise, zero, info, uopts);

    Vec coords(2);
    double max_err = 0.0;
    for (size_t n = 0; n < joint.vf->grid.node_count(); ++n) {
        joint.vf->grid.node_coords(n, coords);
        for (int t = 0; t <= spec.horizon(); ++t) {
            double v1 = interpolate_value(*u1.vf, t, Vec{coords[0]});
            double v2 = interpolate_value(*u2.vf, t, Vec{coords[1]});
            max_err = std::max(max_err, std::abs(joint.vf->values[t][n] - (v1 + v2)));
        }
    }
    CHECK(max_err <= 1e-9);
}

TEST_CASE("unit policy from a joint solve depends only on its own state") {
    auto spec = make_independent_suite(2, true);
    GlobalDpOptions opts;
    opts.state_nodes = {11};
    opts.control_nodes = {7};
    auto joint = solve_global_dp(spec, opts);
    DpOptions uopts;
    uopts.state_nodes = {11};
    uopts.control_nodes = {7};
    InformationSpec info;
    auto zero = PricedTerm::zero(spec.horizon(), 1);
    auto solo = solve_priced_subproblem(spec.subsystems[0], spec.noise, zero, info, uopts);
    for (double x1 : {0.0, 2.0, 5.0, 9.0})
        for (double x2 : {1.0, 6.0}) {
            auto uj = joint.policy.controls(1, {{x1}, {x2}}, Vec{1.0});
            auto us = solo.policy.control(1, Vec{x1}, Vec{1.0}, {});
            CHECK(uj[0][0] == doctest::Approx(us[0]).epsilon(1e-12));
        }
}

TEST_CASE("zero price reproduces the plain subproblem") {
    ThreeUnitParams p;
    p.T = 5;
    auto spec = make_three_unit(p);
    DpOptions opts;
    opts.state_nodes = {11};
    opts.control_nodes = {7};
    InformationSpec info;
    auto zero = PricedTerm::zero(spec.horizon(), 1);
    auto priced = solve_priced_subproblem(spec.subsystems[0], spec.noise, zero, info, opts);

    // a single-unit uncoupled spec with the same data
    ProblemSpec solo;
    solo.coupling_dim = 0;
    solo.noise = spec.noise;
    solo.subsystems = {spec.subsystems[0]};
    GlobalDpOptions gopts;
    gopts.state_nodes = {11};
    gopts.control_nodes = {7};
    auto plain = solve_global_dp(solo, gopts);
    for (size_t t = 0; t < priced.vf->values.size(); ++t)
        for (size_t n = 0; n < priced.vf->values[t].size(); ++n)
            CHECK(priced.vf->values[t][n] == plain.vf->values[t][n]);
}

TEST_CASE("constant price shifts the stage argmin to the first-order point") {
    // cost u^2 + price * u on a stockless-like wide box; argmin = -price/2
    CostTerms stage{QuadControlTerm{{1.0}, {0.0}, {}}};
    auto spec = single_unit(1, 5.0, 0.0, 10.0, 0.0, 1.0, stage, CostTerms{},
                            deterministic_stages(1, 1), Mat(1, 1));
    // coupling g = u so the price multiplies the control
    spec.coupling_dim = 1;
    spec.subsystems[0].coupling.P = Stagewise<Mat>(Mat::identity(1));
    spec.subsystems[0].coupling.Q = Stagewise<Mat>(Mat(1, 1));
    spec.subsystems[0].coupling.R = Stagewise<Mat>(Mat(1, 1));
    spec.subsystems[0].coupling.r = Stagewise<Vec>(Vec{0.0});

    DpOptions opts;
    opts.state_nodes = {11};
    opts.control_nodes = {5}; // {0,.25,.5,.75,1}
    InformationSpec info;
    auto price = PricedTerm::constants({Vec{-1.0}});
    auto sol = solve_priced_subproblem(spec.subsystems[0], spec.noise, price, info, opts);
    auto u = sol.policy.control(0, Vec{5.0}, Vec{0.0}, {});
    CHECK(u[0] == 0.5); // -(-1)/2, on the grid exactly
}

TEST_CASE("markovian info with frozen dynamics is payoff-irrelevant") {
    ThreeUnitParams p;
    p.T = 3;
    auto spec = make_three_unit(p);
    InformationSpec info;
    info.mode = InformationSpec::Mode::Markovian;
    info.M = Mat::identity(1);
    info.N = Mat(1, 3);
    info.c = {0.0};
    info.N0 = Mat(1, 3); // y0 = 0.5 regardless of noise
    info.c0 = {0.5};
    Grid ig;
    ig.axes = {{0.0, 0.5, 1.0}};
    info.info_grid = ig;
    DpOptions opts;
    opts.state_nodes = {9};
    opts.control_nodes = {7};
    auto price = PricedTerm::constants(std::vector<Vec>(3, Vec{-0.5}));
    auto sol = solve_priced_subproblem(spec.subsystems[0], spec.noise, price, info, opts);
    // value table constant along the info axis
    const auto& vf = *sol.vf;
    size_t ynodes = vf.grid.axes[1].size();
    size_t xnodes = vf.grid.axes[0].size();
    for (size_t t = 0; t < vf.values.size(); ++t)
        for (size_t ix = 0; ix < xnodes; ++ix)
            for (size_t iy = 1; iy < ynodes; ++iy)
                CHECK(vf.values[t][ix * ynodes + iy] == vf.values[t][ix * ynodes]);
}

TEST_CASE("infeasible-on-grid problems raise") {
    // dynamics push the state out of its box whatever the control does
    CostTerms stage{QuadControlTerm{{1.0}, {0.0}, {}}};
    auto spec = single_unit(2, 1.0, 0.0, 1.0, 0.0, 0.5, stage, CostTerms{},
                            deterministic_stages(2, 1), Mat(1, 1));
    Vec b{5.0}; // x' = x - u + 5 > 1 always
    spec.subsystems[0].dynamics.b = Stagewise<Vec>(b);
    GlobalDpOptions opts;
    opts.state_nodes = {5};
    opts.control_nodes = {3};
    CHECK_THROWS_WITH_AS(solve_global_dp(spec, opts), doctest::Contains("infeasible"),
                         std::runtime_error);
}

TEST_CASE("grid cap guard fires before heavy work") {
    auto spec = make_three_unit({});
    GlobalDpOptions opts;
    opts.state_nodes = {401};
    opts.control_nodes = {101};
    opts.eval_cap = 1000;
    CHECK_THROWS_WITH_AS(solve_global_dp(spec, opts), doctest::Contains("cap"),
                         std::runtime_error);
}

TEST_CASE("value function export writes one row per stage and node") {
    auto spec = single_unit(1, 1.0, 0.0, 1.0, 0.0, 1.0,
                            CostTerms{QuadControlTerm{{1.0}, {0.0}, {}}},
                            CostTerms{QuadStateTerm{{1.0}, {0.0}}},
                            deterministic_stages(1, 1), Mat(1, 1));
    GlobalDpOptions opts;
    opts.state_nodes = {5};
    opts.control_nodes = {5};
    auto sol = solve_global_dp(spec, opts);
    export_value_function_csv(*sol.vf, "vf_test.csv");
    std::ifstream in("vf_test.csv");
    int lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 1 + 2 * 5); // header + (T+1) stages x 5 nodes
}
