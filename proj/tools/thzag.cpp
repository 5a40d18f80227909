// thzag: command-line driver for the THz air-to-ground link experiments.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "thzag/harness.hpp"

namespace fs = std::filesystem;
using namespace thzag;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitNumerical = 4;

struct Options {
    std::string scenario;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    std::string strategies = "optimized,expert,random,fixed";
    bool full_band = false;
    bool svg = false;
    int jobs = 1;
    std::string model;
    std::string dataset;
    std::string input;
    double band_lo_db = 18.0;
    double band_hi_db = 28.0;
};

harness::ExperimentConfig load(const Options& o) {
    harness::ExperimentConfig config =
        o.scenario.empty() ? harness::default_config() : harness::load_config(o.scenario);
    if (o.full_band) harness::use_full_band(config);
    return config;
}

fs::path prepare_out(const Options& o) {
    const fs::path out = o.out;
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw ValidationError("cannot create output directory " + out.string() + ": " + ec.message());
    return out;
}

void log(const std::string& message) { std::fprintf(stderr, "[thzag] %s\n", message.c_str()); }

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

int gen_fields(const Options& o) {
    const harness::ExperimentConfig config = load(o);
    const fs::path out = prepare_out(o);
    const std::uint64_t seed = o.seed.value_or(0);
    int count = 0;
    for (double m : config.scenario.feasible_mach)
        for (double a : config.scenario.feasible_attack_deg) {
            const flowfield::FlightCondition c{m, a};
            flowfield::export_field(flowfield::generate_wake_field(c, config.grid, config.wake, seed),
                                    out / flowfield::field_file_name(c));
            ++count;
        }
    log("wrote " + std::to_string(count) + " fields to " + out.string());
    return 0;
}

int gen_dataset(const Options& o) {
    harness::ExperimentConfig config = load(o);
    if (o.seed) config.surrogate.dataset_seed = *o.seed;
    const fs::path out = prepare_out(o);
    const surrogate::FieldDataset data = harness::generate_dataset(config);
    data.save(out / "dataset.txt");
    log("wrote " + std::to_string(data.rows.size()) + " rows to " + (out / "dataset.txt").string());
    return 0;
}

surrogate::SurrogateModel train_into(const harness::ExperimentConfig& config,
                                     const std::string& dataset_path, const fs::path& out) {
    const auto start = std::chrono::steady_clock::now();
    const surrogate::FieldDataset data = dataset_path.empty() ? harness::generate_dataset(config)
                                                              : surrogate::FieldDataset::load(dataset_path);
    log("training surrogate on " + std::to_string(data.rows.size()) + " rows");
    const surrogate::SurrogateTraining trained = harness::train_surrogate(config, data);
    trained.model.save(out / "surrogate.model");
    std::ofstream loss(out / "training_loss.csv");
    loss << "epoch,loss\n";
    for (std::size_t e = 0; e < trained.epoch_loss.size(); ++e)
        loss << e + 1 << ',' << format_exact(trained.epoch_loss[e]) << '\n';
    log("trained " + std::to_string(trained.epoch_loss.size()) + " epochs in " +
        std::to_string(seconds_since(start)) + " s, final loss " +
        std::to_string(trained.epoch_loss.back()));
    return trained.model;
}

int train_surrogate_cmd(const Options& o) {
    harness::ExperimentConfig config = load(o);
    if (o.seed) config.surrogate.train_seed = *o.seed;
    train_into(config, o.dataset, prepare_out(o));
    return 0;
}

int calibrate_cmd(const Options& o) {
    const harness::ExperimentConfig config = load(o);
    const harness::CalibrationResult r = harness::calibrate(config, o.band_lo_db, o.band_hi_db, o.seed.value_or(0));
    std::printf("structure_constant %s\nscale %s\nmean_db %s\nmin_db %s\nmax_db %s\n",
                format_exact(r.structure_constant).c_str(), format_exact(r.scale).c_str(),
                format_exact(r.mean_db).c_str(), format_exact(r.min_db).c_str(),
                format_exact(r.max_db).c_str());
    return 0;
}

int run_cmd(const Options& o) {
    const harness::ExperimentConfig config = load(o);
    const std::vector<harness::Strategy> strategies = harness::parse_strategies(o.strategies);
    if (o.jobs < 1) throw ValidationError("--jobs must be >= 1");
    const fs::path out = prepare_out(o);
    const std::uint64_t seed = o.seed.value_or(0);

    const auto start = std::chrono::steady_clock::now();
    harness::RunContext context = harness::make_context(config, seed);
    const bool need_surrogate = std::find(strategies.begin(), strategies.end(),
                                          harness::Strategy::Optimized) != strategies.end();
    if (need_surrogate) {
        std::string model_path = o.model;
        if (model_path.empty() && !config.surrogate.model_path.empty())
            model_path = config.surrogate.model_path.string();
        surrogate::SurrogateModel model;
        if (model_path.empty()) {
            log("no surrogate model given; training one");
            model = train_into(config, o.dataset, out);
        } else {
            if (!fs::exists(model_path)) throw ValidationError("surrogate model not found: " + model_path);
            model = surrogate::SurrogateModel::load(model_path);
        }
        context.surrogate = harness::surrogate_table(config, model);
    }
    const std::vector<harness::StrategyResult> results = harness::run_strategies(context, strategies, o.jobs);
    harness::write_reports(results, out, o.svg);
    harness::write_results_json(results, seed, out / "results.json");
    for (const auto& r : results)
        std::printf("%-10s mean L_turb %8.3f dB   spectral efficiency %8.4f bit/s/Hz   plan %s\n",
                    r.name.c_str(), r.mean_loss_db, r.spectral_efficiency, r.plan.summary().c_str());
    log("done in " + std::to_string(seconds_since(start)) + " s; reports in " + out.string());
    return 0;
}

int report_cmd(const Options& o) {
    fs::path input = o.input.empty() ? fs::path(o.out) / "results.json" : fs::path(o.input);
    if (fs::is_directory(input)) input /= "results.json";
    const std::vector<harness::StrategyResult> results = harness::read_results_json(input);
    harness::write_reports(results, prepare_out(o), o.svg);
    log("wrote reports for " + std::to_string(results.size()) + " strategies to " + o.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"THz air-to-ground link simulator with turbulence-aware power and flight planning"};
    app.require_subcommand(1);
    Options o;

    auto common = [&o](CLI::App* sub) {
        sub->add_option("--scenario", o.scenario, "Scenario file (INI); defaults to the built-in scenario")
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "Seed (u64)");
        sub->add_option("--out", o.out, "Output directory")->capture_default_str();
        sub->add_flag("--full-band", o.full_band, "Use contiguous 10 MHz sub-bands over 100-500 GHz");
    };

    CLI::App* fields = app.add_subcommand("gen-fields", "Export generated wake fields for all feasible (M, alpha)");
    common(fields);
    CLI::App* dataset = app.add_subcommand("gen-dataset", "Write the surrogate training dataset");
    common(dataset);
    CLI::App* train = app.add_subcommand("train-surrogate", "Train the diffusion surrogate");
    common(train);
    train->add_option("--dataset", o.dataset, "Existing dataset file (generated when omitted)")
        ->check(CLI::ExistingFile);
    CLI::App* calib = app.add_subcommand("calibrate", "Fit the structure constant to the target attenuation");
    common(calib);
    calib->add_option("--band-lo", o.band_lo_db, "Lower edge of the target L_turb band [dB]")->capture_default_str();
    calib->add_option("--band-hi", o.band_hi_db, "Upper edge of the target L_turb band [dB]")->capture_default_str();
    CLI::App* run = app.add_subcommand("run", "Run the strategies and write reports");
    common(run);
    run->add_option("--strategies", o.strategies, "Comma-separated subset of optimized,expert,random,fixed")
        ->capture_default_str();
    run->add_flag("--svg", o.svg, "Also write SVG plots");
    run->add_option("--jobs", o.jobs, "Run strategies concurrently")->capture_default_str();
    run->add_option("--model", o.model, "Trained surrogate model (trained on demand when omitted)");
    run->add_option("--dataset", o.dataset, "Dataset for on-demand training")->check(CLI::ExistingFile);
    CLI::App* report = app.add_subcommand("report", "Re-emit CSV/SVG reports from results.json");
    report->add_option("--in", o.input, "results.json or the directory holding it");
    report->add_option("--out", o.out, "Output directory")->capture_default_str();
    report->add_flag("--svg", o.svg, "Also write SVG plots");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*fields) return gen_fields(o);
        if (*dataset) return gen_dataset(o);
        if (*train) return train_surrogate_cmd(o);
        if (*calib) return calibrate_cmd(o);
        if (*run) return run_cmd(o);
        if (*report) return report_cmd(o);
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return kExitConfig;
    } catch (const DomainError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return kExitConfig;
    } catch (const InfeasibleError& e) {
        std::fprintf(stderr, "infeasible: %s\n", e.what());
        return kExitInfeasible;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
