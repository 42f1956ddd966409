#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dadp/bench.hpp"
#include "dadp/model.hpp"
#include "dadp/problem_json.hpp"

using namespace dadp;

namespace {

ProblemSpec two_unit_spec() { return make_independent_suite(2, true); }

} // namespace

TEST_CASE("well-formed spec validates clean") {
    auto spec = two_unit_spec();
    auto rep = validate_problem(spec);
    CHECK(rep.ok());
    CHECK(rep.to_string() == "OK");
}

TEST_CASE("validate is idempotent and side-effect free") {
    auto spec = two_unit_spec();
    auto r1 = validate_problem(spec);
    auto r2 = validate_problem(spec);
    CHECK(r1.violations.size() == r2.violations.size());
    CHECK(validate_problem(spec).ok());
}

TEST_CASE("inverted control bounds are reported with location") {
    auto spec = two_unit_spec();
    spec.subsystems[1].u_lo = Stagewise<Vec>(Vec{5.0});
    spec.subsystems[1].u_hi = Stagewise<Vec>(Vec{3.0});
    auto rep = validate_problem(spec);
    REQUIRE_FALSE(rep.ok());
    bool found = false;
    for (const auto& v : rep.violations)
        if (v.subsystem == 1 && v.stage == 0 && v.code == "control bounds inverted") found = true;
    CHECK(found);
}

TEST_CASE("coupling dimension mismatch is reported") {
    auto spec = two_unit_spec();
    spec.coupling_dim = 2;
    // unit 0 returns a 2-dimensional g, unit 1 still 1-dimensional
    spec.subsystems[0].coupling.P = Stagewise<Mat>(Mat(2, 1));
    spec.subsystems[0].coupling.Q = Stagewise<Mat>(Mat(2, 1));
    spec.subsystems[0].coupling.R = Stagewise<Mat>(Mat(2, spec.noise.dim));
    spec.subsystems[0].coupling.r = Stagewise<Vec>(Vec{0.0, 0.0});
    auto rep = validate_problem(spec);
    REQUIRE_FALSE(rep.ok());
    bool found = false;
    for (const auto& v : rep.violations)
        if (v.subsystem == 1 && v.code == "coupling dimension mismatch") found = true;
    CHECK(found);
}

TEST_CASE("stage probabilities must sum to one") {
    auto spec = two_unit_spec();
    spec.noise.stages[2].probs = {0.5, 0.5, 0.1};
    auto rep = validate_problem(spec);
    REQUIRE_FALSE(rep.ok());
    bool found = false;
    for (const auto& v : rep.violations)
        if (v.stage == 2 && v.code == "noise probabilities") found = true;
    CHECK(found);
}

TEST_CASE("every valid spec has unit probability mass per stage") {
    for (auto spec : {make_three_unit({}), make_independent_suite(3, false),
                      make_multistock(3, 6, 11)}) {
        REQUIRE(validate_problem(spec).ok());
        for (const auto& st : spec.noise.stages) {
            double sum = 0.0;
            for (double p : st.probs) sum += p;
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("x0 outside the stage-0 box is reported") {
    auto spec = two_unit_spec();
    spec.subsystems[0].x0 = {25.0};
    auto rep = validate_problem(spec);
    REQUIRE_FALSE(rep.ok());
    CHECK(rep.violations[0].code == "initial state out of bounds");
}

TEST_CASE("partition must cover every noise coordinate") {
    auto spec = two_unit_spec();
    spec.noise.partition.owner = {};
    CHECK_FALSE(validate_problem(spec).ok());
    spec.noise.partition.owner = {7}; // unit 7 does not exist
    CHECK_FALSE(validate_problem(spec).ok());
}

TEST_CASE("catalog cost terms evaluate") {
    CostTerms terms;
    terms.push_back(QuadControlTerm{{2.0}, {1.0}, {}});
    terms.push_back(QuadStateTerm{{0.5}, {1.0}});
    terms.push_back(ConstTerm{3.0});
    Vec x{3.0}, u{2.0}, w{};
    // 2*4 + 1*2 + 0.5*(3-1)^2 + 3 = 8 + 2 + 2 + 3
    CHECK(eval_cost_terms(terms, x, u, w) == doctest::Approx(15.0));

    CostTerms pwl;
    pwl.push_back(PwlControlTerm{{{{1.0}, 0.0}, {{-1.0}, 2.0}}});
    CHECK(eval_cost_terms(pwl, x, Vec{0.5}, w) == doctest::Approx(1.5)); // max(.5, 1.5)
    CHECK(eval_cost_terms(pwl, x, Vec{3.0}, w) == doctest::Approx(3.0)); // max(3, -1)

    CostTerms scaled;
    NoiseScale sc{0, 0.0, 1.0};
    scaled.push_back(QuadControlTerm{{1.0}, {0.0}, sc});
    CHECK(eval_cost_terms(scaled, x, Vec{2.0}, Vec{1.5}) == doctest::Approx(6.0));
}

TEST_CASE("json round trip preserves the problem") {
    auto spec = make_three_unit({});
    std::string text = problem_to_json(spec);
    auto loaded = parse_problem_json(text);
    REQUIRE(loaded.ok());
    CHECK(problem_to_json(*loaded.spec) == text);
    CHECK(loaded.spec->units() == 3);
    CHECK(loaded.spec->horizon() == 25);
}

TEST_CASE("json with infinite bounds round trips") {
    auto spec = make_strugarek(StrugarekParams::default_two_unit());
    std::string text = problem_to_json(spec);
    auto loaded = parse_problem_json(text);
    REQUIRE(loaded.ok());
    CHECK(loaded.spec->subsystems[0].u_hi.at(0)[0] == kInf);
    CHECK(problem_to_json(*loaded.spec) == text);
}

TEST_CASE("schema violations produce a report, not a crash") {
    auto r1 = parse_problem_json("this is not json");
    CHECK_FALSE(r1.ok());
    CHECK(r1.report.violations[0].code == "json");

    auto r2 = parse_problem_json("{\"horizon\": 3}");
    CHECK_FALSE(r2.ok());
    CHECK(r2.report.violations[0].code == "schema");

    // structurally broken but schema-valid: negative probabilities
    auto spec = two_unit_spec();
    spec.noise.stages[0].probs = {2.0, -0.5, -0.5};
    auto r3 = parse_problem_json(problem_to_json(spec));
    CHECK(r3.spec.has_value());
    CHECK_FALSE(r3.report.ok());
}
