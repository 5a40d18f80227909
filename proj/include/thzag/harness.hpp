// Experiment plumbing: configuration files, attenuation oracles, baseline
// strategies, calibration, and CSV / SVG / JSON reports.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "thzag/channel.hpp"
#include "thzag/flowfield.hpp"
#include "thzag/optimizer.hpp"
#include "thzag/surrogate.hpp"
#include "thzag/turbulence.hpp"

namespace thzag::harness {

/// One-time calibration of the structure constant against the reported
/// 18-28 dB attenuation range (extremes centred in the band at M = 0.7,
/// 100 GHz, generator seed 0). Produced by `thzag calibrate` and frozen here.
inline constexpr double kCalibrationScale = 0.0047021834238464644;
inline constexpr double kDefaultStructureConstant =
    turbulence::kStructureConstant * kCalibrationScale;

struct SurrogateSettings {
    std::filesystem::path model_path;  ///< empty: train on demand into the output directory
    std::vector<double> train_mach{0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
    std::vector<double> train_attack_deg{-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0};
    surrogate::DatasetOptions dataset;
    std::uint64_t dataset_seed = 7;
    std::uint64_t field_seed = 0;
    std::uint64_t train_seed = 3;
    int steps = surrogate::kDefaultSteps;
    double beta_start = surrogate::kDefaultBetaStart;
    double beta_end = surrogate::kDefaultBetaEnd;
    std::vector<int> hidden{128, 128};
    int embed_dim = 16;
    surrogate::TrainConfig train = desk_training();
    surrogate::PredictOptions predict{64, 2, 0};

    /// Adam with cosine decay, 100 epochs: the configuration used for the
    /// reported surrogate accuracy.
    static surrogate::TrainConfig desk_training();
};

struct ExperimentConfig {
    channel::Scenario scenario = channel::default_scenario();
    flowfield::GridSpec grid;
    flowfield::WakeModelParams wake;
    double structure_constant = kDefaultStructureConstant;
    int n_quad = 128;
    std::string field_source = "generator";  ///< generator | import
    std::filesystem::path import_dir;
    SurrogateSettings surrogate;

    void validate() const;
};

ExperimentConfig default_config();

/// INI-style file with sections geometry, time, band, link, flight, weather,
/// absorption, turbulence, wake, surrogate. Missing keys keep their
/// defaults; unknown sections or keys are a ValidationError.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Replaces the sub-band grid with contiguous 10 MHz bands over 100-500 GHz.
void use_full_band(ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Attenuation oracles
// ---------------------------------------------------------------------------

/// Losses for every (slot, Mach, attack) candidate of the scenario.
struct OracleTable {
    optimizer::AttenuationTable linear;  ///< per band
    std::vector<double> reference_db;    ///< at the reference frequency
    std::vector<double> sigma2_ref;      ///< Rytov variance at the reference frequency
    int mach_count = 0, attack_count = 0;

    double reference_loss_db(int slot, int mach_idx, int attack_idx) const;
};

/// Builds the table from frequency-independent weighted B integrals indexed
/// [(slot * mach_count + m) * attack_count + a].
OracleTable table_from_integrals(const ExperimentConfig& config, const std::vector<double>& integrals);

/// Direct pipeline: generated (or imported) field -> B -> Rytov -> loss.
/// `seed` selects the generator's modulation realization.
OracleTable true_field_table(const ExperimentConfig& config, std::uint64_t seed);

/// Weighted B integrals of the direct pipeline, in table order.
std::vector<double> true_field_integrals(const ExperimentConfig& config, std::uint64_t seed,
                                         double structure_constant);

OracleTable surrogate_table(const ExperimentConfig& config, const surrogate::SurrogateModel& model);

flowfield::FieldGrid load_or_generate_field(const ExperimentConfig& config,
                                            flowfield::FlightCondition condition,
                                            std::uint64_t seed);

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

enum class Strategy { Optimized, Expert, Random, Fixed };

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);
std::vector<Strategy> parse_strategies(const std::string& list);

struct StrategyResult {
    std::string name;
    optimizer::FlightPlan plan;
    RowMatrix power;                     ///< K x I [W]
    std::vector<double> slot_loss_db;    ///< true-field L_turb at the reference frequency
    std::vector<double> slot_capacity;   ///< bit/s, evaluated with true-field losses
    std::vector<double> slot_power_w;    ///< sum over bands
    double mean_loss_db = 0.0;
    double spectral_efficiency = 0.0;    ///< bit/s/Hz: mean slot capacity / sum of band widths
    double capacity_bound = 0.0;         ///< loss-free C_max summed over slots
    std::optional<optimizer::IterationTrace> trace;
};

/// Evaluates a plan and power allocation against the true-field table.
StrategyResult evaluate(const std::string& name, const channel::LinkBudget& budget,
                        const OracleTable& truth, const optimizer::FlightPlan& plan,
                        const RowMatrix& power, double capacity_bound);

/// Uniform draws from the feasible sets until the Mach floor holds.
optimizer::FlightPlan random_plan(const optimizer::FeasibleSets& sets, int slots,
                                  std::uint64_t seed, int max_attempts = 1000);

struct RunContext {
    const ExperimentConfig* config = nullptr;
    channel::LinkBudget budget;
    optimizer::FeasibleSets sets;
    OracleTable truth;
    std::optional<OracleTable> surrogate;
    double capacity_bound = 0.0;
    std::uint64_t seed = 0;
};

/// Builds the link budget and the true-field table for one seed.
RunContext make_context(const ExperimentConfig& config, std::uint64_t seed);

StrategyResult run_strategy(const RunContext& context, Strategy strategy);

/// Runs strategies in order; with `jobs` > 1 they run concurrently.
std::vector<StrategyResult> run_strategies(const RunContext& context,
                                           const std::vector<Strategy>& strategies, int jobs = 1);

// ---------------------------------------------------------------------------
// Surrogate pipeline
// ---------------------------------------------------------------------------

std::vector<flowfield::FlightCondition> training_conditions(const ExperimentConfig& config);
surrogate::FieldDataset generate_dataset(const ExperimentConfig& config);
surrogate::SurrogateTraining train_surrogate(const ExperimentConfig& config,
                                             const surrogate::FieldDataset& data);

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

struct CalibrationResult {
    double structure_constant = 0.0;
    double scale = 0.0;  ///< structure_constant / 2.8
    double mean_db = 0.0, min_db = 0.0, max_db = 0.0;
};

/// Bisection on the structure constant so that the reference-band L_turb
/// over the largest feasible Mach, all attack angles and all slots sits
/// centred in [lo_db, hi_db] (min - lo_db == hi_db - max), staying on the
/// branch where the scintillation sum is below one. Throws NumericalError
/// when the spread of the losses is wider than the band.
CalibrationResult calibrate(const ExperimentConfig& config, double lo_db = 18.0, double hi_db = 28.0,
                            std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// attenuation_by_slot.csv, power_by_slot.csv, capacity_by_slot.csv,
/// summary.csv, trace_<strategy>.csv, and SVG plots when requested.
void write_reports(const std::vector<StrategyResult>& results, const std::filesystem::path& out,
                   bool svg);

void write_results_json(const std::vector<StrategyResult>& results, std::uint64_t seed,
                        const std::filesystem::path& path);
std::vector<StrategyResult> read_results_json(const std::filesystem::path& path);

}  // namespace thzag::harness
