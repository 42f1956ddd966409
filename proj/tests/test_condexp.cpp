#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "dadp/condexp.hpp"
#include "dadp/rng.hpp"

using namespace dadp;

namespace {

SampleTable table_1d(std::initializer_list<std::pair<double, double>> rows) {
    SampleTable t;
    for (auto [y, l] : rows) {
        t.y.push_back({y});
        t.lam.push_back({l});
    }
    return t;
}

// Box-Muller on the counter RNG
double normal_draw(const CounterRng& rng, std::uint64_t k) {
    double u1 = rng.uniform(2 * k) + 1e-300;
    double u2 = rng.uniform(2 * k + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

} // namespace

TEST_CASE("constant estimator predicts the sample mean everywhere") {
    auto t = table_1d({{0.0, 1.0}, {1.0, 3.0}, {2.0, 5.0}});
    auto est = fit_estimator(t, EstimatorKind::Constant);
    CHECK(est.predict(Vec{-7.0})[0] == 3.0);
    CHECK(est.predict(Vec{100.0})[0] == 3.0);
}

TEST_CASE("binned estimator takes per-bin empirical means") {
    auto t = table_1d({{0.0, 1.0}, {0.0, 3.0}, {1.0, 5.0}});
    BinnedOptions b;
    b.edges = {{-0.5, 0.5, 1.5}};
    auto est = fit_estimator(t, EstimatorKind::Binned, b);
    CHECK(est.predict(Vec{0.0})[0] == 2.0);
    CHECK(est.predict(Vec{1.0})[0] == 5.0);
}

TEST_CASE("empty bins fall back to the global mean") {
    auto t = table_1d({{0.0, 2.0}, {0.1, 4.0}});
    BinnedOptions b;
    b.edges = {{0.0, 0.5, 1.0}}; // second bin empty
    auto est = fit_estimator(t, EstimatorKind::Binned, b);
    CHECK(est.predict(Vec{0.75})[0] == 3.0);
}

TEST_CASE("tiny kernel bandwidth recovers sample targets") {
    auto t = table_1d({{0.0, 1.0}, {1.0, 3.0}, {2.0, -2.0}});
    KernelOptions k;
    k.bandwidth = {1e-6};
    auto est = fit_estimator(t, EstimatorKind::Kernel, {}, k);
    for (size_t s = 0; s < t.y.size(); ++s)
        CHECK(std::abs(est.predict(t.y[s])[0] - t.lam[s][0]) <= 1e-3);
}

TEST_CASE("kernel symmetry gives zero at the symmetric point") {
    auto t = table_1d({{-1.0, -2.0}, {1.0, 2.0}, {-0.5, -1.0}, {0.5, 1.0}});
    auto est = fit_estimator(t, EstimatorKind::Kernel, {}, KernelOptions{{0.7}});
    CHECK(est.predict(Vec{0.0})[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("fit rejects bad inputs with locations") {
    SampleTable empty;
    CHECK_THROWS(fit_estimator(empty, EstimatorKind::Constant));
    auto t = table_1d({{0.0, 1.0}, {1.0, kInf}});
    CHECK_THROWS_WITH_AS(fit_estimator(t, EstimatorKind::Constant),
                         doctest::Contains("row 1"), std::invalid_argument);
    auto t2 = table_1d({{0.0, 1.0}, {1.0, 2.0}});
    BinnedOptions bad;
    bad.edges = {{1.0, 0.0}};
    CHECK_THROWS(fit_estimator(t2, EstimatorKind::Binned, bad));
    KernelOptions kbad;
    kbad.bandwidth = {0.0};
    CHECK_THROWS(fit_estimator(t2, EstimatorKind::Kernel, {}, kbad));
}

TEST_CASE("predict rejects dimension mismatches") {
    auto t = table_1d({{0.0, 1.0}, {1.0, 2.0}});
    auto est = fit_estimator(t, EstimatorKind::Binned, equal_width_bins(t, 2));
    CHECK_THROWS(est.predict(Vec{0.0, 1.0}));
}

TEST_CASE("deviance of the constant fit on its own data is exactly zero") {
    auto t = table_1d({{0.0, 1.0}, {1.0, 3.0}, {2.0, 4.5}});
    auto est = fit_estimator(t, EstimatorKind::Constant);
    CHECK(deviance(est, t) == 0.0);
}

TEST_CASE("deviance of an exact interpolator is exactly one") {
    auto t = table_1d({{0.0, 1.0}, {1.0, 3.0}, {2.0, 4.5}});
    BinnedOptions b;
    b.edges = {{-0.5, 0.5, 1.5, 2.5}}; // singleton bins
    auto est = fit_estimator(t, EstimatorKind::Binned, b);
    CHECK(deviance(est, t) == 1.0);
}

TEST_CASE("deviance is undefined for zero-variance targets") {
    auto t = table_1d({{0.0, 2.0}, {1.0, 2.0}});
    auto est = fit_estimator(t, EstimatorKind::Constant);
    CHECK_THROWS_AS((void)deviance(est, t), std::domain_error);
}

TEST_CASE("per-bin residual sums vanish") {
    CounterRng rng(5);
    SampleTable t;
    for (int s = 0; s < 3000; ++s) {
        double y = rng.uniform(3 * s);
        double l = std::sin(6.0 * y) + 0.3 * rng.uniform(3 * s + 1);
        t.y.push_back({y});
        t.lam.push_back({l});
    }
    auto opts = equal_width_bins(t, 8);
    auto est = fit_estimator(t, EstimatorKind::Binned, opts);
    Vec sums(8, 0.0);
    for (int s = 0; s < t.rows(); ++s) {
        double pred = est.predict(t.y[static_cast<size_t>(s)])[0];
        double y = t.y[static_cast<size_t>(s)][0];
        int b = std::min(7, static_cast<int>((y - opts.edges[0][0]) /
                                             (opts.edges[0][8] - opts.edges[0][0]) * 8));
        sums[static_cast<size_t>(b)] += t.lam[static_cast<size_t>(s)][0] - pred;
    }
    for (double s : sums) CHECK(std::abs(s) <= 1e-12);
}

TEST_CASE("kernel predictions stay in the hull of the targets") {
    CounterRng rng(9);
    for (int rep = 0; rep < 50; ++rep) {
        SampleTable t;
        int n = 5 + static_cast<int>(rng.uniform(1000 + rep) * 40);
        double lo = kInf, hi = -kInf;
        for (int s = 0; s < n; ++s) {
            std::uint64_t k = static_cast<std::uint64_t>(rep) * 1000 + static_cast<std::uint64_t>(s);
            double y = 10.0 * rng.uniform(3 * k) - 5.0;
            double l = 8.0 * rng.uniform(3 * k + 1) - 4.0;
            t.y.push_back({y});
            t.lam.push_back({l});
            lo = std::min(lo, l);
            hi = std::max(hi, l);
        }
        auto est = fit_estimator(t, EstimatorKind::Kernel, {}, KernelOptions{{0.5}});
        for (int q = 0; q < 20; ++q) {
            double y = 14.0 * rng.uniform(50000 + static_cast<std::uint64_t>(rep) * 20 + q) - 7.0;
            double p = est.predict(Vec{y})[0];
            CHECK(p >= lo - 1e-12);
            CHECK(p <= hi + 1e-12);
        }
    }
}

TEST_CASE("refitting identical data reproduces identical estimators") {
    CounterRng rng(21);
    SampleTable t;
    for (int s = 0; s < 500; ++s) {
        t.y.push_back({rng.uniform(2 * s)});
        t.lam.push_back({rng.uniform(2 * s + 1)});
    }
    for (auto kind : {EstimatorKind::Constant, EstimatorKind::Binned, EstimatorKind::Kernel}) {
        auto a = kind == EstimatorKind::Binned
                     ? fit_estimator(t, kind, equal_width_bins(t, 6))
                     : fit_estimator(t, kind);
        auto b = kind == EstimatorKind::Binned
                     ? fit_estimator(t, kind, equal_width_bins(t, 6))
                     : fit_estimator(t, kind);
        for (double y : {0.1, 0.33, 0.78, 0.95})
            CHECK(a.predict(Vec{y})[0] == b.predict(Vec{y})[0]);
    }
}

TEST_CASE("signal-plus-noise deviance lands in the analytic band") {
    // lambda = y + eps, y uniform unit-variance, noise sd 0.5, 10 bins:
    // R^2 ~ 1/(1+0.25) less binning bias -> [0.70, 0.85]
    CounterRng rng(31);
    SampleTable t;
    const double half = std::sqrt(3.0);
    for (int s = 0; s < 10000; ++s) {
        double y = -half + 2.0 * half * rng.uniform(static_cast<std::uint64_t>(3 * s));
        double l = y + 0.5 * normal_draw(rng, static_cast<std::uint64_t>(100000 + s));
        t.y.push_back({y});
        t.lam.push_back({l});
    }
    auto est = fit_estimator(t, EstimatorKind::Binned, equal_width_bins(t, 10));
    double dev = deviance(est, t);
    CHECK(dev >= 0.70);
    CHECK(dev <= 0.85);
}

TEST_CASE("independent targets have near-zero deviance") {
    CounterRng rng(41);
    SampleTable t;
    for (int s = 0; s < 10000; ++s) {
        t.y.push_back({rng.uniform(static_cast<std::uint64_t>(2 * s))});
        t.lam.push_back({normal_draw(rng, static_cast<std::uint64_t>(200000 + s))});
    }
    auto est = fit_estimator(t, EstimatorKind::Binned, equal_width_bins(t, 10));
    double dev = deviance(est, t);
    CHECK(dev <= 0.02);
    CHECK(deviance(est, t) <= 1.0);
}

TEST_CASE("estimator dump writes audit rows") {
    auto t = table_1d({{0.0, 1.0}, {1.0, 3.0}});
    auto est = fit_estimator(t, EstimatorKind::Binned, equal_width_bins(t, 2));
    est.dump_csv("estimator_dump.csv");
    std::ifstream in("estimator_dump.csv");
    CHECK(in.good());
}
