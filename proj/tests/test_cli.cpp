#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dadp/bench.hpp"
#include "dadp/scenario.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli() {
    const char* p = std::getenv("DADP_CLI");
    REQUIRE_MESSAGE(p != nullptr, "DADP_CLI must point at the dadp binary");
    return p;
}

int run(const std::string& args) {
    std::string cmd = cli() + " " + args + " > cli_stdout.txt 2> cli_stderr.txt";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("dadp_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
        fs::current_path(path);
    }
};

} // namespace

TEST_CASE("cli end-to-end workflows") {
    TempDir tmp;

    SUBCASE("validate accepts generated problems and rejects junk") {
        REQUIRE(run("make --kind three-unit --horizon 4 --out tu.json") == 0);
        CHECK(run("validate tu.json") == 0);
        CHECK(slurp("cli_stdout.txt") == "OK\n");

        std::ofstream bad("bad.json");
        bad << "{\"horizon\": 2}";
        bad.close();
        CHECK(run("validate bad.json") == 2);

        CHECK(run("validate missing.json") == 2);
        CHECK(run("--definitely-not-a-flag") != 0);
    }

    SUBCASE("solve-dadp writes one trace row per iteration, deterministically") {
        REQUIRE(run("make --kind three-unit --horizon 4 --out tu.json") == 0);
        std::string args =
            "solve-dadp --problem tu.json --info demand --estimator binned --bins 3 "
            "--iters 3 --scenarios 30 --seed 7 --rho 0.012 --slack-unit 2 "
            "--state-nodes 11 --control-nodes 7 --residual-hists --dump-estimators";
        REQUIRE(run(args + " --out runA") == 0);
        REQUIRE(run(args + " --out runB") == 0);
        std::string a = slurp("runA/iterations.csv");
        CHECK(!a.empty());
        int rows = -1; // header
        for (char ch : a)
            if (ch == '\n') ++rows;
        CHECK(rows == 3);
        CHECK(a == slurp("runB/iterations.csv"));
        CHECK(fs::exists("runA/residuals_k3_t0.csv"));
        CHECK(fs::exists("runA/estimator_t0.csv"));
        CHECK(fs::exists("runA/manifest.json"));
        CHECK(slurp("runA/residuals_k3_t2.csv") == slurp("runB/residuals_k3_t2.csv"));
    }

    SUBCASE("solve-dp and simulate produce value and trajectory tables") {
        REQUIRE(run("make --kind three-unit --horizon 3 --out tu.json") == 0);
        REQUIRE(run("solve-dp --problem tu.json --coupling eliminate --slack-unit 2 "
                    "--state-nodes 9 --control-nodes 5 --out dp1") == 0);
        CHECK(fs::exists("dp1/value_function.csv"));
        REQUIRE(run("simulate --problem tu.json --policy global-eliminate --slack-unit 2 "
                    "--scenarios 20 --seed 3 --state-nodes 9 --control-nodes 5 --out sim1") == 0);
        CHECK(fs::exists("sim1/scenarios.csv"));
        CHECK(fs::exists("sim1/trajectories.csv"));
        // identical run, byte-identical bodies
        REQUIRE(run("simulate --problem tu.json --policy global-eliminate --slack-unit 2 "
                    "--scenarios 20 --seed 3 --state-nodes 9 --control-nodes 5 --out sim2") == 0);
        CHECK(slurp("sim1/trajectories.csv") == slurp("sim2/trajectories.csv"));
    }

    SUBCASE("oracle prices match the library oracle") {
        REQUIRE(run("make --kind strugarek --out sg.json --params-out sgp.json") == 0);
        auto params = dadp::StrugarekParams::default_two_unit();
        auto spec = dadp::make_strugarek(params);
        auto set = dadp::sample_scenarios(spec.noise, 5, 13);
        dadp::export_scenarios_csv(set, "scen.csv");
        REQUIRE(run("oracle --strugarek sgp.json --scenario scen.csv --out orc") == 0);
        std::ifstream in("orc/price.csv");
        std::string line;
        std::getline(in, line); // header
        int rows = 0;
        while (std::getline(in, line)) {
            std::stringstream ss(line);
            std::string sid, t, price;
            std::getline(ss, sid, ',');
            std::getline(ss, t, ',');
            std::getline(ss, price, ',');
            auto lam = dadp::strugarek_price_oracle(params, set.scenarios[std::stoul(sid)]);
            CHECK(std::abs(std::stod(price) - lam[std::stoul(t)]) <= 1e-12);
            ++rows;
        }
        CHECK(rows == 5 * spec.horizon());
    }
}
