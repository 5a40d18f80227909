#include "thzag/harness.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace thzag::harness {

namespace fs = std::filesystem;

surrogate::TrainConfig SurrogateSettings::desk_training() {
    surrogate::TrainConfig c;
    c.max_epochs = 100;
    c.optimizer = surrogate::OptimizerKind::Adam;
    c.learning_rate = 2e-3;
    c.final_lr_fraction = 0.05;
    c.patience = 0;  // the cosine schedule already fixes the budget
    return c;
}

void ExperimentConfig::validate() const {
    scenario.validate();
    wake.validate();
    if (grid.n1 < 2 || grid.n2 < 2 || !(grid.x1_max > grid.x1_min) || !(grid.x2_max > grid.x2_min))
        throw ValidationError("wake grid is degenerate");
    if (!(structure_constant > 0)) throw ValidationError("turbulence.c0 must be > 0");
    if (n_quad < 2) throw ValidationError("turbulence.n_quad must be >= 2");
    if (field_source != "generator" && field_source != "import")
        throw ValidationError("wake.field_source must be 'generator' or 'import'");
    if (field_source == "import" && import_dir.empty())
        throw ValidationError("wake.import_dir is required when field_source = import");
    if (surrogate.train_mach.empty() || surrogate.train_attack_deg.empty())
        throw ValidationError("surrogate training grid is empty");
    if (surrogate.predict.n_path < 2 || surrogate.predict.draws < 1)
        throw ValidationError("surrogate.n_path must be >= 2 and surrogate.draws >= 1");
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

void use_full_band(ExperimentConfig& config) {
    config.scenario.sub_bands = channel::contiguous_bands(100e9, 500e9, 10e6);
}

// ---------------------------------------------------------------------------
// Configuration file
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& text, const std::string& where) {
    const std::string t = trim(text);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(t, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (t.empty() || used != t.size() || !std::isfinite(v))
        throw ValidationError(where + ": expected a number, got '" + text + "'");
    return v;
}

long long parse_integer(const std::string& text, const std::string& where) {
    const std::string t = trim(text);
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(t, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (t.empty() || used != t.size())
        throw ValidationError(where + ": expected an integer, got '" + text + "'");
    return v;
}

std::uint64_t parse_seed(const std::string& text, const std::string& where) {
    const std::string t = trim(text);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        if (!t.empty() && t[0] != '-') v = std::stoull(t, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (t.empty() || used != t.size())
        throw ValidationError(where + ": expected an unsigned integer, got '" + text + "'");
    return v;
}

std::vector<double> parse_list(const std::string& text, const std::string& where) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(item, where));
    if (out.empty()) throw ValidationError(where + ": empty list");
    return out;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& where) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_integer(item, where)));
    if (out.empty()) throw ValidationError(where + ": empty list");
    return out;
}

using Setter = std::function<void(const std::string&, const std::string&)>;

}  // namespace

ExperimentConfig load_config(const fs::path& path) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ValidationError("scenario file: " + std::string(e.what()));
    }
    const fs::path base = path.parent_path();
    ExperimentConfig c;
    channel::Scenario& s = c.scenario;

    std::string band_mode = "even";
    double f_lo = 100e9, f_hi = 500e9, band_width = 10e6;
    int band_count = 8;
    std::string absorption_model = "lorentzian";
    double absorption_mu = 0.0;
    fs::path absorption_file;

    auto num = [](double& target) {
        return Setter([&target](const std::string& v, const std::string& w) { target = parse_double(v, w); });
    };
    auto integer = [](int& target) {
        return Setter([&target](const std::string& v, const std::string& w) {
            target = static_cast<int>(parse_integer(v, w));
        });
    };
    auto seed = [](std::uint64_t& target) {
        return Setter([&target](const std::string& v, const std::string& w) { target = parse_seed(v, w); });
    };
    auto list = [](std::vector<double>& target) {
        return Setter([&target](const std::string& v, const std::string& w) { target = parse_list(v, w); });
    };
    auto text = [](std::string& target) {
        return Setter([&target](const std::string& v, const std::string&) { target = trim(v); });
    };
    auto file = [&base](fs::path& target) {
        return Setter([&target, &base](const std::string& v, const std::string&) {
            const fs::path p = trim(v);
            target = p.is_absolute() || p.empty() ? p : base / p;
        });
    };

    flowfield::WakeModelParams& w = c.wake;
    SurrogateSettings& sg = c.surrogate;
    std::map<std::string, std::map<std::string, Setter>> schema{
        {"geometry",
         {{"flight_length_m", num(s.flight_length_m)},
          {"altitude_m", num(s.altitude_m)},
          {"ground_ref_m", num(s.ground_ref_m)}}},
        {"time", {{"slot_count", integer(s.slot_count)}, {"slot_length_s", num(s.slot_length_s)}}},
        {"band",
         {{"mode", text(band_mode)},
          {"f_lo_hz", num(f_lo)},
          {"f_hi_hz", num(f_hi)},
          {"count", integer(band_count)},
          {"width_hz", num(band_width)},
          {"reference_frequency_hz", num(s.reference_frequency_hz)}}},
        {"link",
         {{"tx_gain_dbi", num(s.tx_gain_dbi)},
          {"rx_gain_dbi", num(s.rx_gain_dbi)},
          {"noise_psd_dbm_hz", num(s.noise_psd_dbm_hz)},
          {"avg_power_dbm", num(s.avg_power_dbm)}}},
        {"flight",
         {{"avg_mach_floor", num(s.avg_mach_floor)},
          {"mach", list(s.feasible_mach)},
          {"attack_deg", list(s.feasible_attack_deg)}}},
        {"weather",
         {{"rain_rate_mm_h", num(s.weather.rain_rate_mm_h)},
          {"cloud_density_g_m3", num(s.weather.cloud_density_g_m3)},
          {"rain_k", num(s.weather.rain_k)},
          {"rain_a", num(s.weather.rain_a)},
          {"cloud_k", num(s.weather.cloud_k)}}},
        {"absorption",
         {{"model", text(absorption_model)},
          {"mu_per_m", num(absorption_mu)},
          {"table", file(absorption_file)},
          {"quadrature", integer(s.absorption_quadrature)}}},
        {"turbulence", {{"c0", num(c.structure_constant)}, {"n_quad", integer(c.n_quad)}}},
        {"wake",
         {{"field_source", text(c.field_source)},
          {"import_dir", file(c.import_dir)},
          {"x1_min", num(c.grid.x1_min)},
          {"x1_max", num(c.grid.x1_max)},
          {"n1", integer(c.grid.n1)},
          {"x2_min", num(c.grid.x2_min)},
          {"x2_max", num(c.grid.x2_max)},
          {"n2", integer(c.grid.n2)},
          {"temperature_k", num(w.freestream.temperature_k)},
          {"pressure_pa", num(w.freestream.pressure_pa)},
          {"tke_floor", num(w.freestream.tke_floor)},
          {"dissipation", num(w.freestream.dissipation)},
          {"core_radius", num(w.core_radius)},
          {"wake_width", num(w.wake_width)},
          {"wake_spread", num(w.wake_spread)},
          {"wake_decay_length", num(w.wake_decay_length)},
          {"nose_length", num(w.nose_length)},
          {"deflection_gain", num(w.deflection_gain)},
          {"deflection_length", num(w.deflection_length)},
          {"heterogeneity_gain", num(w.heterogeneity_gain)},
          {"heterogeneity_wavelength", num(w.heterogeneity_wavelength)},
          {"core_tke", num(w.core_tke)},
          {"wake_tke", num(w.wake_tke)},
          {"core_temperature", num(w.core_temperature)},
          {"wake_temperature", num(w.wake_temperature)},
          {"core_pressure_drop", num(w.core_pressure_drop)},
          {"core_dissipation", num(w.core_dissipation)},
          {"wake_dissipation", num(w.wake_dissipation)},
          {"modulation", num(w.modulation)},
          {"modulation_modes", integer(w.modulation_modes)},
          {"modulation_min_wavelength", num(w.modulation_min_wavelength)},
          {"modulation_max_wavelength", num(w.modulation_max_wavelength)}}},
        {"surrogate",
         {{"model", file(sg.model_path)},
          {"train_mach", list(sg.train_mach)},
          {"train_attack_deg", list(sg.train_attack_deg)},
          {"points_per_ray", integer(sg.dataset.points_per_ray)},
          {"uniform_points", integer(sg.dataset.uniform_points)},
          {"dataset_seed", seed(sg.dataset_seed)},
          {"field_seed", seed(sg.field_seed)},
          {"train_seed", seed(sg.train_seed)},
          {"steps", integer(sg.steps)},
          {"beta_start", num(sg.beta_start)},
          {"beta_end", num(sg.beta_end)},
          {"hidden",
           Setter([&sg](const std::string& v, const std::string& where) {
               sg.hidden = parse_int_list(v, where);
           })},
          {"embed_dim", integer(sg.embed_dim)},
          {"epochs", integer(sg.train.max_epochs)},
          {"batch_size", integer(sg.train.batch_size)},
          {"learning_rate", num(sg.train.learning_rate)},
          {"final_lr_fraction", num(sg.train.final_lr_fraction)},
          {"momentum", num(sg.train.momentum)},
          {"patience", integer(sg.train.patience)},
          {"tolerance", num(sg.train.tolerance)},
          {"optimizer",
           Setter([&sg](const std::string& v, const std::string& where) {
               const std::string t = trim(v);
               if (t == "adam")
                   sg.train.optimizer = surrogate::OptimizerKind::Adam;
               else if (t == "sgd")
                   sg.train.optimizer = surrogate::OptimizerKind::SgdMomentum;
               else
                   throw ValidationError(where + ": optimizer must be 'sgd' or 'adam'");
           })},
          {"n_path", integer(sg.predict.n_path)},
          {"draws", integer(sg.predict.draws)},
          {"sample_seed", seed(sg.predict.seed)}}},
    };

    for (const auto& [section, keys] : tree) {
        if (keys.empty() && !keys.data().empty())
            throw ValidationError("scenario file: key '" + section + "' outside any section");
        auto sec = schema.find(section);
        if (sec == schema.end()) throw ValidationError("scenario file: unknown section [" + section + "]");
        for (const auto& [key, value] : keys) {
            auto setter = sec->second.find(key);
            if (setter == sec->second.end())
                throw ValidationError("scenario file: unknown key '" + key + "' in [" + section + "]");
            setter->second(value.data(), section + "." + key);
        }
    }

    if (band_mode == "even")
        s.sub_bands = channel::even_bands(f_lo, f_hi, band_count, band_width);
    else if (band_mode == "contiguous")
        s.sub_bands = channel::contiguous_bands(f_lo, f_hi, band_width);
    else
        throw ValidationError("band.mode must be 'even' or 'contiguous'");

    if (absorption_model == "lorentzian")
        s.absorption = channel::AbsorptionTable::lorentzian_default();
    else if (absorption_model == "constant")
        s.absorption = channel::AbsorptionTable::constant(absorption_mu, 1e9, 10e12, -1e3, 30e3);
    else if (absorption_model == "table") {
        if (absorption_file.empty()) throw ValidationError("absorption.table is required for model = table");
        s.absorption = channel::AbsorptionTable::load(absorption_file);
    } else
        throw ValidationError("absorption.model must be 'lorentzian', 'constant' or 'table'");

    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

double OracleTable::reference_loss_db(int slot, int mach_idx, int attack_idx) const {
    return reference_db.at((static_cast<std::size_t>(slot) * mach_count + mach_idx) * attack_count +
                           attack_idx);
}

OracleTable table_from_integrals(const ExperimentConfig& config, const std::vector<double>& integrals) {
    const channel::Scenario& s = config.scenario;
    const int nm = static_cast<int>(s.feasible_mach.size());
    const int na = static_cast<int>(s.feasible_attack_deg.size());
    const int bands = static_cast<int>(s.sub_bands.size());
    if (integrals.size() != static_cast<std::size_t>(s.slot_count) * nm * na)
        throw DomainError("oracle table: integral count does not match the scenario");
    OracleTable table;
    table.linear = optimizer::AttenuationTable(s.slot_count, nm, na, bands);
    table.mach_count = nm;
    table.attack_count = na;
    std::vector<double> prefactor(static_cast<std::size_t>(bands));
    for (int i = 0; i < bands; ++i)
        prefactor[i] = turbulence::rytov_prefactor(s.sub_bands[i].center_hz, s.altitude_m, s.ground_ref_m);
    const double ref_prefactor =
        turbulence::rytov_prefactor(s.reference_frequency_hz, s.altitude_m, s.ground_ref_m);
    for (int k = 0; k < s.slot_count; ++k) {
        const double range = channel::slot_geometry(s, k).range_m;
        for (int m = 0; m < nm; ++m)
            for (int a = 0; a < na; ++a) {
                const std::size_t idx = (static_cast<std::size_t>(k) * nm + m) * na + a;
                const double integral = integrals[idx];
                auto row = table.linear.row(k, m, a);
                for (int i = 0; i < bands; ++i)
                    row[i] = turbulence::attenuation_from_sigma2(prefactor[i] * integral,
                                                                 s.sub_bands[i].center_hz, range)
                                 .linear;
                const double sigma2 = ref_prefactor * integral;
                table.sigma2_ref.push_back(sigma2);
                table.reference_db.push_back(
                    turbulence::attenuation_from_sigma2(sigma2, s.reference_frequency_hz, range).loss_db);
            }
    }
    return table;
}

flowfield::FieldGrid load_or_generate_field(const ExperimentConfig& config,
                                            flowfield::FlightCondition condition, std::uint64_t seed) {
    if (config.field_source == "import") {
        const fs::path file = config.import_dir / flowfield::field_file_name(condition);
        if (!fs::exists(file)) throw ValidationError("missing imported field " + file.string());
        return flowfield::import_field(file);
    }
    return flowfield::generate_wake_field(condition, config.grid, config.wake, seed);
}

std::vector<double> true_field_integrals(const ExperimentConfig& config, std::uint64_t seed,
                                         double structure_constant) {
    const channel::Scenario& s = config.scenario;
    const int nm = static_cast<int>(s.feasible_mach.size());
    const int na = static_cast<int>(s.feasible_attack_deg.size());
    std::vector<double> out(static_cast<std::size_t>(s.slot_count) * nm * na, 0.0);
    turbulence::RytovOptions options;
    options.n_quad = config.n_quad;
    std::vector<channel::SlotGeometry> paths;
    for (int k = 0; k < s.slot_count; ++k) paths.push_back(channel::slot_geometry(s, k));
    for (int m = 0; m < nm; ++m)
        for (int a = 0; a < na; ++a) {
            const flowfield::FieldGrid field =
                load_or_generate_field(config, {s.feasible_mach[m], s.feasible_attack_deg[a]}, seed);
            for (int k = 0; k < s.slot_count; ++k)
                out[(static_cast<std::size_t>(k) * nm + m) * na + a] = turbulence::field_path_integral(
                    field, paths[k], s.altitude_m, s.ground_ref_m, structure_constant, options);
        }
    return out;
}

OracleTable true_field_table(const ExperimentConfig& config, std::uint64_t seed) {
    return table_from_integrals(config, true_field_integrals(config, seed, config.structure_constant));
}

OracleTable surrogate_table(const ExperimentConfig& config, const surrogate::SurrogateModel& model) {
    const channel::Scenario& s = config.scenario;
    const int nm = static_cast<int>(s.feasible_mach.size());
    const int na = static_cast<int>(s.feasible_attack_deg.size());
    std::vector<flowfield::FlightCondition> conditions;
    std::vector<channel::SlotGeometry> paths;
    for (int k = 0; k < s.slot_count; ++k) {
        const channel::SlotGeometry path = channel::slot_geometry(s, k);
        for (int m = 0; m < nm; ++m)
            for (int a = 0; a < na; ++a) {
                conditions.push_back({s.feasible_mach[m], s.feasible_attack_deg[a]});
                paths.push_back(path);
            }
    }
    return table_from_integrals(
        config, surrogate::predict_path_integrals(conditions, paths, model, s.altitude_m,
                                                  s.ground_ref_m, config.surrogate.predict));
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Optimized: return "optimized";
        case Strategy::Expert: return "expert";
        case Strategy::Random: return "random";
        case Strategy::Fixed: return "fixed";
    }
    return "unknown";
}

Strategy parse_strategy(const std::string& name) {
    const std::string t = trim(name);
    if (t == "optimized") return Strategy::Optimized;
    if (t == "expert") return Strategy::Expert;
    if (t == "random") return Strategy::Random;
    if (t == "fixed") return Strategy::Fixed;
    throw ValidationError("unknown strategy '" + t + "' (expected optimized, expert, random, fixed)");
}

std::vector<Strategy> parse_strategies(const std::string& list) {
    std::vector<Strategy> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const Strategy s = parse_strategy(item);
        if (std::find(out.begin(), out.end(), s) != out.end())
            throw ValidationError("strategy '" + trim(item) + "' listed twice");
        out.push_back(s);
    }
    if (out.empty()) throw ValidationError("at least one strategy is required");
    return out;
}

StrategyResult evaluate(const std::string& name, const channel::LinkBudget& budget,
                        const OracleTable& truth, const optimizer::FlightPlan& plan,
                        const RowMatrix& power, double capacity_bound) {
    StrategyResult r;
    r.name = name;
    r.plan = plan;
    r.power = power;
    r.capacity_bound = capacity_bound;
    const RowMatrix losses = optimizer::plan_losses(truth.linear, plan);
    r.slot_capacity = optimizer::slot_capacities(budget, losses, power);
    const double total_width = budget.width_hz.sum();
    double loss_sum = 0.0, cap_sum = 0.0;
    for (int k = 0; k < budget.slots(); ++k) {
        const double db = truth.reference_loss_db(k, plan.mach_index[k], plan.attack_index[k]);
        r.slot_loss_db.push_back(db);
        r.slot_power_w.push_back(power.row(k).sum());
        loss_sum += db;
        cap_sum += r.slot_capacity[k];
    }
    r.mean_loss_db = loss_sum / budget.slots();
    r.spectral_efficiency = cap_sum / budget.slots() / total_width;
    return r;
}

optimizer::FlightPlan random_plan(const optimizer::FeasibleSets& sets, int slots, std::uint64_t seed,
                                  int max_attempts) {
    Rng rng(seed);
    const auto nm = static_cast<std::uint64_t>(sets.mach.size());
    const auto na = static_cast<std::uint64_t>(sets.attack_deg.size());
    if (nm == 0 || na == 0) throw DomainError("empty feasible sets");
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        std::vector<int> m(static_cast<std::size_t>(slots)), a(static_cast<std::size_t>(slots));
        for (int k = 0; k < slots; ++k) {
            m[k] = static_cast<int>(rng.below(nm));
            a[k] = static_cast<int>(rng.below(na));
        }
        if (optimizer::meets_mach_floor(sets, m)) return optimizer::make_plan(sets, m, a);
    }
    throw InfeasibleError("random strategy: no draw met the average Mach floor in " +
                          std::to_string(max_attempts) + " attempts");
}

RunContext make_context(const ExperimentConfig& config, std::uint64_t seed) {
    config.validate();
    RunContext c;
    c.config = &config;
    c.seed = seed;
    c.budget = channel::make_link_budget(config.scenario);
    c.sets = optimizer::feasible_sets(config.scenario);
    const double max_mach = *std::max_element(c.sets.mach.begin(), c.sets.mach.end());
    if (c.sets.avg_mach_floor > max_mach)
        throw InfeasibleError("average Mach floor " + format_exact(c.sets.avg_mach_floor) +
                              " exceeds the largest feasible Mach " + format_exact(max_mach));
    c.truth = true_field_table(config, seed);
    c.capacity_bound = optimizer::capacity_upper_bound(c.budget);
    return c;
}

StrategyResult run_strategy(const RunContext& context, Strategy strategy) {
    const channel::LinkBudget& budget = context.budget;
    const int slots = budget.slots();
    switch (strategy) {
        case Strategy::Fixed:
            return evaluate("fixed", budget, context.truth, optimizer::fixed_plan(context.sets, slots),
                            optimizer::uniform_power(slots, budget.bands(), budget.avg_power_w),
                            context.capacity_bound);
        case Strategy::Random:
            return evaluate("random", budget, context.truth,
                            random_plan(context.sets, slots, splitmix64(context.seed ^ 0x72616e646f6dULL)),
                            optimizer::uniform_power(slots, budget.bands(), budget.avg_power_w),
                            context.capacity_bound);
        case Strategy::Expert:
        case Strategy::Optimized: {
            const bool expert = strategy == Strategy::Expert;
            if (!expert && !context.surrogate)
                throw ValidationError("optimized strategy needs a surrogate model");
            const OracleTable& oracle = expert ? context.truth : *context.surrogate;
            optimizer::JointResult jr = optimizer::joint_optimize(budget, oracle.linear, context.sets);
            StrategyResult r = evaluate(strategy_name(strategy), budget, context.truth, jr.plan,
                                        jr.solution.power, context.capacity_bound);
            r.trace = std::move(jr.trace);
            return r;
        }
    }
    throw DomainError("unknown strategy");
}

std::vector<StrategyResult> run_strategies(const RunContext& context,
                                           const std::vector<Strategy>& strategies, int jobs) {
    std::vector<StrategyResult> out;
    if (jobs <= 1) {
        for (Strategy s : strategies) out.push_back(run_strategy(context, s));
        return out;
    }
    std::vector<std::future<StrategyResult>> pending;
    for (Strategy s : strategies)
        pending.push_back(std::async(std::launch::async, [&context, s] { return run_strategy(context, s); }));
    for (auto& f : pending) out.push_back(f.get());
    return out;
}

// ---------------------------------------------------------------------------
// Surrogate pipeline
// ---------------------------------------------------------------------------

std::vector<flowfield::FlightCondition> training_conditions(const ExperimentConfig& config) {
    std::vector<flowfield::FlightCondition> out;
    for (double m : config.surrogate.train_mach)
        for (double a : config.surrogate.train_attack_deg) out.push_back({m, a});
    return out;
}

surrogate::FieldDataset generate_dataset(const ExperimentConfig& config) {
    return surrogate::build_dataset(training_conditions(config), config.grid, config.wake,
                                    config.structure_constant, config.scenario,
                                    config.surrogate.dataset, config.surrogate.field_seed,
                                    config.surrogate.dataset_seed);
}

surrogate::SurrogateTraining train_surrogate(const ExperimentConfig& config,
                                             const surrogate::FieldDataset& data) {
    const SurrogateSettings& sg = config.surrogate;
    const surrogate::NoiseSchedule schedule = surrogate::make_schedule(sg.steps, sg.beta_start, sg.beta_end);
    surrogate::Architecture arch;
    arch.embed_dim = sg.embed_dim;
    arch.hidden = sg.hidden;
    return surrogate::train_surrogate(data, schedule, arch, sg.train, sg.train_seed);
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

namespace {

/// Smallest sigma^2 with scintillation sum >= 1 (first crossing).
double singular_sigma2(double f_hz, double range_m) {
    auto s = [&](double sigma2) {
        return turbulence::fading_parameters(sigma2, f_hz, range_m).scintillation();
    };
    double lo = 0.0, hi = 0.0;
    for (double x = 0.01; x <= 10.0; x += 0.01) {
        if (s(x) >= 1.0) {
            hi = x;
            break;
        }
        lo = x;
    }
    if (hi == 0.0) return std::numeric_limits<double>::infinity();
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (s(mid) >= 1.0 ? hi : lo) = mid;
    }
    return lo;
}

}  // namespace

CalibrationResult calibrate(const ExperimentConfig& config, double lo_db, double hi_db, std::uint64_t seed) {
    config.validate();
    if (!(hi_db > lo_db)) throw ValidationError("calibration band is empty");
    const channel::Scenario& s = config.scenario;
    const int nm = static_cast<int>(s.feasible_mach.size());
    const int na = static_cast<int>(s.feasible_attack_deg.size());
    const int m_max = static_cast<int>(
        std::max_element(s.feasible_mach.begin(), s.feasible_mach.end()) - s.feasible_mach.begin());
    const std::vector<double> unit = true_field_integrals(config, seed, 1.0);
    const double f = s.reference_frequency_hz;
    const double prefactor = turbulence::rytov_prefactor(f, s.altitude_m, s.ground_ref_m);

    struct Item {
        double sigma2_per_c0, range;
    };
    std::vector<Item> items;
    double c0_max = std::numeric_limits<double>::infinity();
    for (int k = 0; k < s.slot_count; ++k) {
        const double range = channel::slot_geometry(s, k).range_m;
        const double sing = singular_sigma2(f, range);
        for (int a = 0; a < na; ++a) {
            const double per = prefactor * unit[(static_cast<std::size_t>(k) * nm + m_max) * na + a];
            if (!(per > 0)) continue;
            items.push_back({per, range});
            c0_max = std::min(c0_max, sing / per);
        }
    }
    if (items.empty() || !std::isfinite(c0_max))
        throw NumericalError("calibration: no turbulence along any path at the largest Mach");

    auto stats = [&](double c0) {
        CalibrationResult r;
        r.structure_constant = c0;
        r.scale = c0 / turbulence::kStructureConstant;
        r.min_db = std::numeric_limits<double>::infinity();
        r.max_db = -r.min_db;
        double sum = 0.0;
        for (const Item& it : items) {
            const double db = turbulence::attenuation_from_sigma2(it.sigma2_per_c0 * c0, f, it.range).loss_db;
            sum += db;
            r.min_db = std::min(r.min_db, db);
            r.max_db = std::max(r.max_db, db);
        }
        r.mean_db = sum / static_cast<double>(items.size());
        return r;
    };
    // Both extremes grow with c0, so the centring residual is monotone.
    const double centre = lo_db + hi_db;
    double lo = 0.0, hi = c0_max;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (!(mid > lo && mid < hi)) break;
        const CalibrationResult r = stats(mid);
        (r.min_db + r.max_db < centre ? lo : hi) = mid;
    }
    const CalibrationResult r = stats(lo);
    if (r.min_db < lo_db || r.max_db > hi_db)
        throw NumericalError("calibration: losses span [" + format_exact(r.min_db) + ", " +
                             format_exact(r.max_db) + "] dB, wider than the target band");
    return r;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    return out;
}

void write_slot_table(const std::vector<StrategyResult>& results, const fs::path& path,
                      const std::function<double(const StrategyResult&, int)>& value) {
    std::ofstream out = open_output(path);
    out << "slot";
    for (const auto& r : results) out << ',' << r.name;
    out << '\n';
    const int slots = static_cast<int>(results.front().slot_loss_db.size());
    for (int k = 0; k < slots; ++k) {
        out << k;
        for (const auto& r : results) out << ',' << format_exact(value(r, k));
        out << '\n';
    }
}

const char* kPalette[] = {"#1b6ca8", "#d1495b", "#edae49", "#00798c", "#6a4c93", "#3d3d3d"};

std::string fmt(double v, const char* spec = "%.4g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

void line_chart(const fs::path& path, const std::string& title, const std::string& ylabel,
                const std::vector<StrategyResult>& results,
                const std::function<double(const StrategyResult&, int)>& value) {
    const double width = 720, height = 420, left = 70, right = 150, top = 40, bottom = 50;
    const int slots = static_cast<int>(results.front().slot_loss_db.size());
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& r : results)
        for (int k = 0; k < slots; ++k) {
            lo = std::min(lo, value(r, k));
            hi = std::max(hi, value(r, k));
        }
    if (!(hi > lo)) {
        lo -= 1.0;
        hi += 1.0;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    auto X = [&](double k) { return left + (width - left - right) * k / std::max(1, slots - 1); };
    auto Y = [&](double v) { return top + (height - top - bottom) * (hi - v) / (hi - lo); };

    std::ofstream out = open_output(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title
        << "</text>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << Y(lo) << "\" x2=\"" << X(slots - 1) << "\" y2=\""
        << Y(lo) << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << Y(lo) << "\" x2=\"" << left << "\" y2=\"" << Y(hi)
        << "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double v = lo + (hi - lo) * tick / 4.0;
        out << "<text x=\"" << left - 6 << "\" y=\"" << Y(v) + 4 << "\" text-anchor=\"end\">" << fmt(v)
            << "</text>\n";
    }
    for (int k = 0; k < slots; k += std::max(1, slots / 10))
        out << "<text x=\"" << X(k) << "\" y=\"" << Y(lo) + 16 << "\" text-anchor=\"middle\">" << k
            << "</text>\n";
    out << "<text x=\"" << (left + width - right) / 2 << "\" y=\"" << height - 10
        << "\" text-anchor=\"middle\">time slot k</text>\n";
    out << "<text transform=\"translate(16," << (top + height - bottom) / 2
        << ") rotate(-90)\" text-anchor=\"middle\">" << ylabel << "</text>\n";
    for (std::size_t s = 0; s < results.size(); ++s) {
        const char* color = kPalette[s % 6];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (int k = 0; k < slots; ++k) out << fmt(X(k), "%.2f") << ',' << fmt(Y(value(results[s], k)), "%.2f") << ' ';
        out << "\"/>\n";
        const double ly = top + 20 + 18 * static_cast<double>(s);
        out << "<line x1=\"" << width - right + 15 << "\" y1=\"" << ly << "\" x2=\"" << width - right + 40
            << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << width - right + 46 << "\" y=\"" << ly + 4 << "\">" << results[s].name
            << "</text>\n";
    }
    out << "</svg>\n";
}

void bar_chart(const fs::path& path, const std::vector<StrategyResult>& results) {
    const double width = 520, height = 380, left = 70, top = 40, bottom = 50;
    double hi = 0.0;
    for (const auto& r : results) hi = std::max(hi, r.spectral_efficiency);
    hi = hi > 0 ? hi * 1.15 : 1.0;
    const double plot_h = height - top - bottom;
    const double slot_w = (width - left - 20) / static_cast<double>(results.size());
    std::ofstream out = open_output(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2
        << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">Average spectral efficiency</text>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << width - 20 << "\" y2=\""
        << top + plot_h << "\" stroke=\"black\"/>\n";
    for (std::size_t s = 0; s < results.size(); ++s) {
        const double v = results[s].spectral_efficiency;
        const double h = plot_h * v / hi;
        const double x = left + slot_w * (static_cast<double>(s) + 0.15);
        out << "<rect x=\"" << fmt(x, "%.2f") << "\" y=\"" << fmt(top + plot_h - h, "%.2f") << "\" width=\""
            << fmt(slot_w * 0.7, "%.2f") << "\" height=\"" << fmt(h, "%.2f") << "\" fill=\""
            << kPalette[s % 6] << "\"/>\n";
        out << "<text x=\"" << fmt(x + slot_w * 0.35, "%.2f") << "\" y=\"" << fmt(top + plot_h - h - 6, "%.2f")
            << "\" text-anchor=\"middle\">" << fmt(v, "%.3f") << "</text>\n";
        out << "<text x=\"" << fmt(x + slot_w * 0.35, "%.2f") << "\" y=\"" << top + plot_h + 18
            << "\" text-anchor=\"middle\">" << results[s].name << "</text>\n";
    }
    out << "<text transform=\"translate(18," << top + plot_h / 2
        << ") rotate(-90)\" text-anchor=\"middle\">bit/s/Hz</text>\n";
    out << "</svg>\n";
}

}  // namespace

void write_reports(const std::vector<StrategyResult>& results, const fs::path& out, bool svg) {
    if (results.empty()) throw DomainError("report: no strategy results");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw ValidationError("cannot create output directory " + out.string() + ": " + ec.message());

    auto loss = [](const StrategyResult& r, int k) { return r.slot_loss_db[k]; };
    auto power = [](const StrategyResult& r, int k) { return r.slot_power_w[k]; };
    auto capacity = [](const StrategyResult& r, int k) { return r.slot_capacity[k]; };
    write_slot_table(results, out / "attenuation_by_slot.csv", loss);
    write_slot_table(results, out / "power_by_slot.csv", power);
    write_slot_table(results, out / "capacity_by_slot.csv", capacity);

    {
        std::ofstream plan = open_output(out / "plan_by_slot.csv");
        plan << "slot";
        for (const auto& r : results) plan << ',' << r.name << "_mach," << r.name << "_attack_deg";
        plan << '\n';
        for (std::size_t k = 0; k < results.front().slot_loss_db.size(); ++k) {
            plan << k;
            for (const auto& r : results)
                plan << ',' << format_exact(r.plan.mach[k]) << ',' << format_exact(r.plan.attack_deg[k]);
            plan << '\n';
        }
    }
    {
        std::ofstream summary = open_output(out / "summary.csv");
        summary << "strategy,mean_turbulence_loss_db,spectral_efficiency_bps_hz\n";
        for (const auto& r : results)
            summary << r.name << ',' << format_exact(r.mean_loss_db) << ','
                    << format_exact(r.spectral_efficiency) << '\n';
    }
    for (const auto& r : results) {
        if (!r.trace) continue;
        std::ofstream trace = open_output(out / ("trace_" + r.name + ".csv"));
        r.trace->write_csv(trace);
    }
    if (svg) {
        line_chart(out / "attenuation_by_slot.svg", "Turbulence attenuation over time slots",
                   "L_turb [dB]", results, loss);
        line_chart(out / "power_by_slot.svg", "Transmit power over time slots", "power [W]", results,
                   power);
        bar_chart(out / "spectral_efficiency.svg", results);
    }
}

void write_results_json(const std::vector<StrategyResult>& results, std::uint64_t seed,
                        const fs::path& path) {
    nlohmann::json doc;
    doc["seed"] = seed;
    doc["strategies"] = nlohmann::json::array();
    for (const auto& r : results) {
        nlohmann::json s;
        s["name"] = r.name;
        s["mach"] = r.plan.mach;
        s["attack_deg"] = r.plan.attack_deg;
        s["mach_index"] = r.plan.mach_index;
        s["attack_index"] = r.plan.attack_index;
        s["slot_loss_db"] = r.slot_loss_db;
        s["slot_capacity_bps"] = r.slot_capacity;
        s["slot_power_w"] = r.slot_power_w;
        s["mean_loss_db"] = r.mean_loss_db;
        s["spectral_efficiency_bps_hz"] = r.spectral_efficiency;
        s["capacity_bound_bps"] = r.capacity_bound;
        if (r.trace) {
            nlohmann::json t = nlohmann::json::array();
            for (const auto& rec : r.trace->records)
                t.push_back({{"iter", rec.iteration},
                             {"total_capacity_bps", rec.total_capacity},
                             {"lambda", rec.lambda},
                             {"plan_summary", rec.plan.summary()},
                             {"mach_index", rec.plan.mach_index},
                             {"attack_index", rec.plan.attack_index},
                             {"mach", rec.plan.mach},
                             {"attack_deg", rec.plan.attack_deg}});
            s["trace"] = t;
            s["trace_delta"] = r.trace->delta;
            s["converged"] = r.trace->converged;
        }
        doc["strategies"].push_back(s);
    }
    std::ofstream out = open_output(path);
    out << doc.dump(2) << '\n';
}

std::vector<StrategyResult> read_results_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read " + path.string());
    std::vector<StrategyResult> out;
    try {
        const nlohmann::json doc = nlohmann::json::parse(in);
        for (const auto& s : doc.at("strategies")) {
            StrategyResult r;
            r.name = s.at("name").get<std::string>();
            r.plan.mach = s.at("mach").get<std::vector<double>>();
            r.plan.attack_deg = s.at("attack_deg").get<std::vector<double>>();
            r.plan.mach_index = s.at("mach_index").get<std::vector<int>>();
            r.plan.attack_index = s.at("attack_index").get<std::vector<int>>();
            r.plan.average_mach = r.plan.mach.empty()
                                      ? 0.0
                                      : std::accumulate(r.plan.mach.begin(), r.plan.mach.end(), 0.0) /
                                            static_cast<double>(r.plan.mach.size());
            r.slot_loss_db = s.at("slot_loss_db").get<std::vector<double>>();
            r.slot_capacity = s.at("slot_capacity_bps").get<std::vector<double>>();
            r.slot_power_w = s.at("slot_power_w").get<std::vector<double>>();
            r.mean_loss_db = s.at("mean_loss_db").get<double>();
            r.spectral_efficiency = s.at("spectral_efficiency_bps_hz").get<double>();
            r.capacity_bound = s.at("capacity_bound_bps").get<double>();
            if (s.contains("trace")) {
                optimizer::IterationTrace trace;
                trace.delta = s.at("trace_delta").get<double>();
                trace.converged = s.at("converged").get<bool>();
                for (const auto& rec : s.at("trace")) {
                    optimizer::IterationRecord ir;
                    ir.iteration = rec.at("iter").get<int>();
                    ir.total_capacity = rec.at("total_capacity_bps").get<double>();
                    ir.lambda = rec.at("lambda").get<double>();
                    ir.plan.mach_index = rec.at("mach_index").get<std::vector<int>>();
                    ir.plan.attack_index = rec.at("attack_index").get<std::vector<int>>();
                    ir.plan.mach = rec.at("mach").get<std::vector<double>>();
                    ir.plan.attack_deg = rec.at("attack_deg").get<std::vector<double>>();
                    trace.records.push_back(std::move(ir));
                }
                r.trace = std::move(trace);
            }
            const std::size_t k = r.slot_loss_db.size();
            if (r.slot_capacity.size() != k || r.slot_power_w.size() != k || r.plan.mach.size() != k)
                throw ValidationError("per-slot arrays differ in length for '" + r.name + "'");
            out.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    if (out.empty()) throw ValidationError(path.string() + ": no strategy results");
    return out;
}

}  // namespace thzag::harness
