#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "thzag/harness.hpp"

using namespace thzag;
using namespace thzag::harness;
namespace fs = std::filesystem;

namespace {

const fs::path kData = THZAG_TEST_DATA;
const fs::path kScenarios = fs::path(THZAG_TEST_DATA).parent_path().parent_path() / "scenarios";

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("thzag_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(THZAG_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_scenario(const std::string& name, const std::string& body) {
    const fs::path p = fs::temp_directory_path() / ("thzag_" + name + ".ini");
    std::ofstream(p) << body;
    return p;
}

const std::vector<Strategy> kBaselines{Strategy::Expert, Strategy::Random, Strategy::Fixed};

}  // namespace

TEST_CASE("scenario files") {
    SUBCASE("the reference file equals the built-in defaults") {
        const ExperimentConfig c = load_config(kScenarios / "table1.ini");
        const ExperimentConfig d = default_config();
        CHECK(c.scenario.slot_count == 21);
        CHECK(c.scenario.flight_length_m == 6000.0);
        CHECK(c.scenario.altitude_m == 1000.0);
        CHECK(c.scenario.avg_mach_floor == 0.6);
        CHECK(c.scenario.feasible_mach == d.scenario.feasible_mach);
        CHECK(c.scenario.feasible_attack_deg == d.scenario.feasible_attack_deg);
        CHECK(c.scenario.sub_bands.size() == d.scenario.sub_bands.size());
        CHECK(c.scenario.avg_power_dbm == 10.0);
        CHECK(c.scenario.noise_psd_dbm_hz == -169.0);
        CHECK(c.structure_constant == kDefaultStructureConstant);
        CHECK(c.surrogate.train_mach == d.surrogate.train_mach);
    }
    SUBCASE("overrides and relative paths") {
        const fs::path p = write_scenario("override", "[flight]\nmach = 0.4, 0.6, 0.8\navg_mach_floor = 0.5\n"
                                                      "[surrogate]\nmodel = models/m.txt\n[turbulence]\nc0 = 0.5\n");
        const ExperimentConfig c = load_config(p);
        CHECK(c.scenario.feasible_mach == std::vector<double>{0.4, 0.6, 0.8});
        CHECK(c.scenario.avg_mach_floor == 0.5);
        CHECK(c.structure_constant == 0.5);
        CHECK(c.surrogate.model_path == p.parent_path() / "models/m.txt");
        fs::remove(p);
    }
    SUBCASE("unknown keys and sections are rejected") {
        CHECK_THROWS_AS(load_config(write_scenario("bad_key", "[flight]\nmachs = 0.5\n")), ValidationError);
        CHECK_THROWS_AS(load_config(write_scenario("bad_section", "[fligth]\nmach = 0.5\n")), ValidationError);
        CHECK_THROWS_AS(load_config(write_scenario("bad_value", "[time]\nslot_count = many\n")), ValidationError);
        CHECK_THROWS_AS(load_config(write_scenario("bad_mode", "[band]\nmode = odd\n")), ValidationError);
    }
    SUBCASE("full band") {
        ExperimentConfig c = default_config();
        use_full_band(c);
        CHECK(c.scenario.sub_bands.size() == 40000);
    }
}

TEST_CASE("strategy names") {
    CHECK(parse_strategies("fixed,expert") == std::vector<Strategy>{Strategy::Fixed, Strategy::Expert});
    CHECK(strategy_name(parse_strategy("optimized")) == "optimized");
    CHECK_THROWS_AS(parse_strategy("greedy"), ValidationError);
    CHECK_THROWS_AS(parse_strategies("fixed,fixed"), ValidationError);
    CHECK_THROWS_AS(parse_strategies(""), ValidationError);
}

TEST_CASE("baseline strategies") {
    const ExperimentConfig config = default_config();
    const RunContext ctx = make_context(config, 0);

    SUBCASE("fixed flies M = 0.7 at zero attack throughout") {
        const StrategyResult r = run_strategy(ctx, Strategy::Fixed);
        for (int k = 0; k < 21; ++k) {
            CHECK(r.plan.mach[k] == 0.7);
            CHECK(r.plan.attack_deg[k] == 0.0);
        }
        CHECK(r.power.isApproxToConstant(ctx.budget.avg_power_w / ctx.budget.bands(), 1e-15));
    }
    SUBCASE("random plans meet the floor and depend on the seed") {
        const StrategyResult r = run_strategy(ctx, Strategy::Random);
        CHECK(optimizer::meets_mach_floor(ctx.sets, r.plan.mach_index));
        CHECK(run_strategy(ctx, Strategy::Random).plan == r.plan);
        const RunContext other = make_context(config, 1);
        CHECK_FALSE(run_strategy(other, Strategy::Random).plan == r.plan);
        optimizer::FeasibleSets tight = ctx.sets;
        tight.mach = {0.5, 0.7};
        tight.avg_mach_floor = 0.7;
        CHECK_THROWS_AS(random_plan(tight, 21, 5, 10), InfeasibleError);
    }
    SUBCASE("runs are deterministic") {
        const auto a = run_strategies(ctx, kBaselines);
        const auto b = run_strategies(make_context(config, 0), kBaselines, 3);
        REQUIRE(a.size() == b.size());
        for (std::size_t j = 0; j < a.size(); ++j) {
            CHECK(a[j].name == b[j].name);
            CHECK(a[j].plan == b[j].plan);
            CHECK(a[j].power == b[j].power);
            CHECK(a[j].slot_capacity == b[j].slot_capacity);
            CHECK(a[j].slot_loss_db == b[j].slot_loss_db);
        }
    }
    SUBCASE("a surrogate equal to the truth reproduces the expert") {
        RunContext same = ctx;
        same.surrogate = ctx.truth;
        const StrategyResult expert = run_strategy(same, Strategy::Expert);
        const StrategyResult optimized = run_strategy(same, Strategy::Optimized);
        CHECK(expert.plan == optimized.plan);
        CHECK(expert.power == optimized.power);
        CHECK(optimized.spectral_efficiency == expert.spectral_efficiency);
    }
    SUBCASE("the optimized strategy needs a surrogate") {
        CHECK_THROWS_AS(run_strategy(ctx, Strategy::Optimized), ValidationError);
    }
    SUBCASE("capacities respect the loss-free bound") {
        for (const auto& r : run_strategies(ctx, kBaselines)) {
            double total = 0.0;
            for (double c : r.slot_capacity) total += c;
            CHECK(total <= r.capacity_bound);
            CHECK(r.capacity_bound == ctx.capacity_bound);
        }
    }
    SUBCASE("an unreachable Mach floor is infeasible") {
        ExperimentConfig bad = config;
        bad.scenario.avg_mach_floor = 0.8;
        CHECK_THROWS_AS(make_context(bad, 0), InfeasibleError);
    }
}

TEST_CASE("reports") {
    const ExperimentConfig config = default_config();
    const RunContext ctx = make_context(config, 0);
    const auto results = run_strategies(ctx, kBaselines);
    const fs::path out = scratch("reports");
    write_reports(results, out, true);

    for (const char* name : {"attenuation_by_slot.csv", "power_by_slot.csv", "capacity_by_slot.csv",
                             "plan_by_slot.csv"}) {
        const auto rows = read_csv(out / name);
        CHECK(rows.size() == 22);
    }
    CHECK(fs::exists(out / "trace_expert.csv"));
    CHECK_FALSE(fs::exists(out / "trace_fixed.csv"));
    for (const char* name : {"attenuation_by_slot.svg", "power_by_slot.svg", "spectral_efficiency.svg"})
        CHECK(slurp(out / name).rfind("<svg", 0) == 0);

    SUBCASE("summary means agree with the per-slot columns") {
        const auto loss = read_csv(out / "attenuation_by_slot.csv");
        const auto cap = read_csv(out / "capacity_by_slot.csv");
        const auto summary = read_csv(out / "summary.csv");
        REQUIRE(summary.size() == results.size() + 1);
        const double width = ctx.budget.width_hz.sum();
        for (std::size_t j = 0; j < results.size(); ++j) {
            CHECK(loss[0][j + 1] == results[j].name);
            CHECK(summary[j + 1][0] == results[j].name);
            double l = 0.0, c = 0.0;
            for (std::size_t k = 1; k < loss.size(); ++k) {
                l += std::stod(loss[k][j + 1]);
                c += std::stod(cap[k][j + 1]);
            }
            l /= 21.0;
            c /= 21.0 * width;
            CHECK(std::abs(std::stod(summary[j + 1][1]) - l) <= 1e-9 * std::abs(l));
            CHECK(std::abs(std::stod(summary[j + 1][2]) - c) <= 1e-9 * std::abs(c));
        }
    }
    SUBCASE("values round-trip at full precision") {
        const auto loss = read_csv(out / "attenuation_by_slot.csv");
        for (std::size_t k = 0; k < 21; ++k) CHECK(std::stod(loss[k + 1][1]) == results[0].slot_loss_db[k]);
    }
    SUBCASE("golden summary for the reference scenario") {
        const auto golden = read_csv(kData / "golden_summary.csv");
        const auto summary = read_csv(out / "summary.csv");
        REQUIRE(golden.size() == summary.size());
        CHECK(golden[0] == summary[0]);
        for (std::size_t j = 1; j < golden.size(); ++j) {
            CHECK(golden[j][0] == summary[j][0]);
            for (int c : {1, 2}) {
                const double g = std::stod(golden[j][c]), s = std::stod(summary[j][c]);
                CHECK(std::abs(g - s) <= 1e-9 * std::abs(g));
            }
        }
    }
    SUBCASE("JSON round trip") {
        write_results_json(results, 0, out / "results.json");
        const auto back = read_results_json(out / "results.json");
        REQUIRE(back.size() == results.size());
        for (std::size_t j = 0; j < back.size(); ++j) {
            CHECK(back[j].name == results[j].name);
            CHECK(back[j].plan == results[j].plan);
            CHECK(back[j].slot_loss_db == results[j].slot_loss_db);
            CHECK(back[j].slot_capacity == results[j].slot_capacity);
            CHECK(back[j].spectral_efficiency == results[j].spectral_efficiency);
        }
        const fs::path again = scratch("reports_again");
        write_reports(back, again, false);
        CHECK(slurp(again / "summary.csv") == slurp(out / "summary.csv"));
        CHECK(slurp(again / "attenuation_by_slot.csv") == slurp(out / "attenuation_by_slot.csv"));
        fs::remove_all(again);
    }
    CHECK_THROWS_AS(write_reports({}, out, false), DomainError);
    fs::remove_all(out);
}

TEST_CASE("dataset generation follows the configuration") {
    ExperimentConfig config = default_config();
    config.surrogate.train_mach = {0.5, 0.7};
    config.surrogate.train_attack_deg = {0.0};
    config.surrogate.dataset.points_per_ray = 4;
    config.surrogate.dataset.uniform_points = 10;
    const auto conditions = training_conditions(config);
    CHECK(conditions.size() == 2);
    const surrogate::FieldDataset a = generate_dataset(config);
    CHECK(a.rows == generate_dataset(config).rows);
    config.surrogate.dataset_seed += 1;
    CHECK(a.rows != generate_dataset(config).rows);
}

TEST_CASE("command-line interface") {
    const fs::path out = scratch("cli");
    SUBCASE("baseline run is byte-reproducible") {
        const std::string args = "run --strategies expert,random,fixed --seed 4 --out ";
        REQUIRE(run_cli(args + (out / "a").string()) == 0);
        REQUIRE(run_cli(args + (out / "b").string()) == 0);
        for (const char* name : {"summary.csv", "attenuation_by_slot.csv", "power_by_slot.csv",
                                 "capacity_by_slot.csv", "plan_by_slot.csv", "trace_expert.csv"})
            CHECK(slurp(out / "a" / name) == slurp(out / "b" / name));
        CHECK(run_cli("report --in " + (out / "a").string() + " --out " + (out / "c").string()) == 0);
        CHECK(slurp(out / "a" / "summary.csv") == slurp(out / "c" / "summary.csv"));
    }
    SUBCASE("exit codes") {
        CHECK(run_cli("--help") == 0);
        CHECK(run_cli("run --bogus-flag") == 2);
        const fs::path bad = write_scenario("cli_bad", "[flight]\nunknown = 1\n");
        CHECK(run_cli("run --strategies fixed --scenario " + bad.string() + " --out " + out.string()) == 2);
        const fs::path infeasible = write_scenario("cli_infeasible", "[flight]\navg_mach_floor = 0.8\n");
        CHECK(run_cli("run --strategies fixed --scenario " + infeasible.string() + " --out " + out.string()) == 3);
        CHECK(run_cli("run --strategies optimized --model " + (out / "missing.model").string() + " --out " +
                      out.string()) == 2);
        fs::remove(bad);
        fs::remove(infeasible);
    }
    fs::remove_all(out);
}
