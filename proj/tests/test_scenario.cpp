#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dadp/bench.hpp"
#include "dadp/model.hpp"
#include "dadp/scenario.hpp"

using namespace dadp;

namespace {

NoiseModel single_point_noise(int T, Vec point) {
    NoiseModel nm;
    nm.horizon = T;
    nm.dim = static_cast<int>(point.size());
    nm.partition.owner.assign(point.size(), NoisePartition::kGlobal);
    StageDist st;
    st.points = {std::move(point)};
    st.probs = {1.0};
    nm.stages.assign(static_cast<size_t>(T), st);
    return nm;
}

NoiseModel two_point_pm1(int T) {
    NoiseModel nm;
    nm.horizon = T;
    nm.dim = 1;
    nm.partition.owner = {NoisePartition::kGlobal};
    StageDist st;
    st.points = {{-1.0}, {1.0}};
    st.probs = {0.5, 0.5};
    nm.stages.assign(static_cast<size_t>(T), st);
    return nm;
}

} // namespace

TEST_CASE("degenerate support yields identical scenarios") {
    auto nm = single_point_noise(4, {2.5, 1.0});
    auto set = sample_scenarios(nm, 3, 99);
    REQUIRE(set.count() == 3);
    for (const auto& sc : set.scenarios)
        for (const auto& w : sc.w) {
            CHECK(w[0] == 2.5);
            CHECK(w[1] == 1.0);
        }
}

TEST_CASE("identical seeds reproduce bit-identical scenario sets") {
    auto nm = two_point_pm1(6);
    auto a = sample_scenarios(nm, 64, 42);
    auto b = sample_scenarios(nm, 64, 42);
    REQUIRE(a.count() == b.count());
    for (int s = 0; s < a.count(); ++s)
        for (int t = 0; t < 6; ++t)
            CHECK(a.scenarios[s].w[t][0] == b.scenarios[s].w[t][0]);
    auto c = sample_scenarios(nm, 64, 43);
    bool differ = false;
    for (int s = 0; s < a.count() && !differ; ++s)
        for (int t = 0; t < 6 && !differ; ++t)
            if (a.scenarios[s].w[t][0] != c.scenarios[s].w[t][0]) differ = true;
    CHECK(differ);
}

TEST_CASE("count zero is rejected") {
    auto nm = two_point_pm1(2);
    CHECK_THROWS(sample_scenarios(nm, 0, 1));
}

TEST_CASE("empirical mean respects the CLT band") {
    // two-point +-1 support: 3 sigma / sqrt(1e5) ~ 0.0095
    auto nm = two_point_pm1(1);
    auto set = sample_scenarios(nm, 100000, 7);
    double mean = 0.0;
    for (const auto& sc : set.scenarios) mean += sc.w[0][0];
    mean /= set.count();
    CHECK(std::abs(mean) <= 0.01);
}

TEST_CASE("exhaustive enumeration carries unit path mass") {
    auto spec = make_three_unit({});
    spec.noise.horizon = 3;
    spec.noise.stages.resize(3);
    auto set = enumerate_scenarios(spec.noise);
    REQUIRE(set.source == ScenarioSource::Exhaustive);
    CHECK(set.count() == 27 * 27 * 27);
    double sum = 0.0;
    for (double p : set.path_prob) sum += p;
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    CHECK_THROWS(enumerate_scenarios(spec.noise, 100));
}

TEST_CASE("zero-control policy holds the state constant") {
    ThreeUnitParams p;
    p.T = 5;
    p.inflow_support = {0.0};
    p.inflow_probs = {1.0};
    auto spec = make_three_unit(p);
    auto set = sample_scenarios(spec.noise, 4, 3);
    std::vector<UnitFeedback> zero;
    for (int i = 0; i < 3; ++i)
        zero.push_back([](int, std::span<const double>, std::span<const double>,
                          std::span<const double>) { return Vec{0.0}; });
    auto bundle = simulate_policy(spec, zero, set);
    for (const auto& traj : bundle.trajectories)
        for (int t = 0; t <= 5; ++t) {
            CHECK(traj.units[0].x[t][0] == 5.0);
            CHECK(traj.units[1].x[t][0] == 5.0);
        }
    // dynamics consistency holds exactly along every path
    for (const auto& traj : bundle.trajectories)
        for (int t = 0; t < 5; ++t) {
            double expect = traj.units[0].x[t][0] - traj.units[0].u[t][0];
            CHECK(traj.units[0].x[t + 1][0] == expect);
        }
}

TEST_CASE("scenarios sharing a prefix get identical controls") {
    auto spec = make_three_unit({});
    ScenarioSet set;
    set.source = ScenarioSource::Sampled;
    Scenario a, b;
    for (int t = 0; t < spec.horizon(); ++t) {
        a.w.push_back({4.0, 1.0, 1.0});
        b.w.push_back(t < 10 ? Vec{4.0, 1.0, 1.0} : Vec{6.0, 2.0, 0.0});
    }
    set.scenarios = {a, b};
    // a state- and noise-dependent feedback
    std::vector<UnitFeedback> pols;
    for (int i = 0; i < 3; ++i)
        pols.push_back([](int t, std::span<const double> x, std::span<const double> w,
                          std::span<const double>) {
            double xv = x.empty() ? 0.0 : x[0];
            return Vec{std::min(3.0, 0.1 * xv + 0.2 * w[0] + 0.01 * t)};
        });
    auto bundle = simulate_policy(spec, pols, set);
    for (int t = 0; t < 10; ++t)
        for (int i = 0; i < 3; ++i)
            CHECK(bundle.trajectories[0].units[i].u[t][0] ==
                  bundle.trajectories[1].units[i].u[t][0]);
    bool diverged = false;
    for (int t = 10; t < spec.horizon(); ++t)
        if (bundle.trajectories[0].units[2].u[t][0] != bundle.trajectories[1].units[2].u[t][0])
            diverged = true;
    CHECK(diverged);
}

TEST_CASE("non-finite controls raise with location") {
    auto spec = make_three_unit({});
    auto set = sample_scenarios(spec.noise, 1, 5);
    std::vector<UnitFeedback> pols;
    pols.push_back([](int, std::span<const double>, std::span<const double>,
                      std::span<const double>) { return Vec{0.0}; });
    pols.push_back([](int t, std::span<const double>, std::span<const double>,
                      std::span<const double>) {
        return Vec{t == 3 ? std::nan("") : 0.0};
    });
    pols.push_back([](int, std::span<const double>, std::span<const double>,
                      std::span<const double>) { return Vec{0.0}; });
    SimulateOptions opts;
    opts.parallel = false;
    CHECK_THROWS_WITH_AS(simulate_policy(spec, pols, set, opts),
                         doctest::Contains("stage 3, subsystem 1"), std::runtime_error);
}

TEST_CASE("cost estimates: mean, half-width, degenerate cases") {
    auto spec = make_three_unit({});
    TrajectoryBundle bundle;
    bundle.spec = &spec;
    bundle.source = ScenarioSource::Sampled;
    auto mk = [&](double cost) {
        ScenarioTrajectory tr;
        tr.units.resize(1);
        tr.units[0].stage_cost = {cost};
        tr.units[0].final_cost = 0.0;
        return tr;
    };
    bundle.trajectories = {mk(7.0), mk(7.0), mk(7.0)};
    bundle.weights = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    auto e1 = estimate_cost(bundle);
    CHECK(e1.mean == 7.0);
    CHECK(e1.half_width == 0.0);

    bundle.trajectories = {mk(1.0), mk(3.0)};
    bundle.weights = {0.5, 0.5};
    auto e2 = estimate_cost(bundle);
    CHECK(e2.mean == 2.0);
    CHECK(e2.half_width == doctest::Approx(1.96 * std::sqrt(2.0) / std::sqrt(2.0)));

    bundle.trajectories.clear();
    CHECK_THROWS(estimate_cost(bundle));
}

TEST_CASE("feasibility recovery zeroes the residual through the slack unit") {
    ThreeUnitParams p;
    p.T = 1;
    p.demand_support = {10.0};
    p.demand_probs = {1.0};
    p.inflow_support = {0.0};
    p.inflow_probs = {1.0};
    p.u_hi = 5.0;
    p.thermal_u_hi = 12.0;
    auto spec = make_three_unit(p);
    auto set = sample_scenarios(spec.noise, 1, 1);
    auto fixed = [](double v) {
        return UnitFeedback([v](int, std::span<const double>, std::span<const double>,
                                std::span<const double>) { return Vec{v}; });
    };
    auto bundle = simulate_policy(spec, {fixed(3.0), fixed(4.0), fixed(0.0)}, set);
    CHECK(bundle.trajectories[0].residual[0][0] == doctest::Approx(-3.0)); // 3+4+0-10

    auto rec = recover_feasibility(bundle, 2, set);
    CHECK(rec.trajectories[0].units[2].u[0][0] == doctest::Approx(3.0));
    CHECK(rec.trajectories[0].residual[0][0] == doctest::Approx(0.0));
    CHECK(rec.trajectories[0].slack_violation[0] == 0);
    // non-slack paths untouched
    CHECK(rec.trajectories[0].units[0].u[0][0] == 3.0);
    CHECK(rec.trajectories[0].units[1].u[0][0] == 4.0);
    // slack cost recomputed: u3 = 3 -> cost 9
    CHECK(rec.trajectories[0].units[2].stage_cost[0] == doctest::Approx(9.0));

    // already feasible: bundle unchanged
    auto feas = simulate_policy(spec, {fixed(3.0), fixed(4.0), fixed(3.0)}, set);
    auto rec2 = recover_feasibility(feas, 2, set);
    CHECK(rec2.trajectories[0].units[2].u[0][0] == 3.0);
    CHECK(rec2.trajectories[0].residual[0][0] == 0.0);
}

TEST_CASE("infeasible slack requirement clips and flags") {
    ThreeUnitParams p;
    p.T = 1;
    p.demand_support = {0.0};
    p.demand_probs = {1.0};
    p.inflow_support = {0.0};
    p.inflow_probs = {1.0};
    auto spec = make_three_unit(p);
    auto set = sample_scenarios(spec.noise, 1, 1);
    auto fixed = [](double v) {
        return UnitFeedback([v](int, std::span<const double>, std::span<const double>,
                                std::span<const double>) { return Vec{v}; });
    };
    // u1 + u2 = 2 with d = 0: required u3 = -2, bound is u3 >= 0
    auto bundle = simulate_policy(spec, {fixed(1.0), fixed(1.0), fixed(0.0)}, set);
    auto rec = recover_feasibility(bundle, 2, set);
    CHECK(rec.trajectories[0].units[2].u[0][0] == 0.0);
    CHECK(rec.trajectories[0].slack_violation[0] == 1);
    CHECK(rec.trajectories[0].slack_violation_mag[0] == doctest::Approx(-2.0));
    CHECK(rec.trajectories[0].residual[0][0] == doctest::Approx(2.0));
}

TEST_CASE("scenario csv round trip") {
    auto nm = two_point_pm1(4);
    auto set = sample_scenarios(nm, 10, 21);
    export_scenarios_csv(set, "scenarios_roundtrip.csv");
    auto back = import_scenarios_csv("scenarios_roundtrip.csv", 1);
    REQUIRE(back.count() == 10);
    for (int s = 0; s < 10; ++s)
        for (int t = 0; t < 4; ++t)
            CHECK(back.scenarios[s].w[t][0] == set.scenarios[s].w[t][0]);
}

TEST_CASE("simulation is deterministic and order-independent under parallelism") {
    auto spec = make_three_unit({});
    auto set = sample_scenarios(spec.noise, 64, 5);
    std::vector<UnitFeedback> pols;
    for (int i = 0; i < 3; ++i)
        pols.push_back([](int t, std::span<const double> x, std::span<const double> w,
                          std::span<const double>) {
            double xv = x.empty() ? 1.0 : x[0];
            return Vec{std::min(3.0, 0.3 * xv + 0.05 * w[0] + 0.01 * t)};
        });
    SimulateOptions par, ser;
    par.parallel = true;
    ser.parallel = false;
    auto a = simulate_policy(spec, pols, set, par);
    auto b = simulate_policy(spec, pols, set, ser);
    for (int s = 0; s < 64; ++s) {
        CHECK(a.trajectories[s].total_cost() == b.trajectories[s].total_cost());
        for (int t = 0; t < spec.horizon(); ++t)
            CHECK(a.trajectories[s].residual[t][0] == b.trajectories[s].residual[t][0]);
    }
}
