// Conditional denoising-diffusion surrogate for the turbulence fields.
//
// Every spatial point is one sample: the target is (T, P, B) and the
// condition is (x1, x2, M, alpha). A small fully connected network predicts
// the injected noise from (x_t, condition, sinusoidal embedding of t), and
// ancestral sampling runs the reverse recursion
//   x_{t-1} = (x_t - (1 - alpha_t) / sqrt(1 - abar_t) eps) / sqrt(alpha_t) + sigma_t z
// with z = 0 at t = 1.
//
// The generic layer (NoiseSchedule, Denoiser, train_denoiser, sample_batch)
// works on standardized column-major matrices of any dimension; the field
// layer (FieldDataset, SurrogateModel, predict_attenuation) adds the
// (T, P, log10 B) transform, standardization, and path integration.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "thzag/channel.hpp"
#include "thzag/common.hpp"
#include "thzag/flowfield.hpp"

namespace thzag::surrogate {

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

/// Vectors are indexed by t - 1 for t = 1..steps.
struct NoiseSchedule {
    int steps = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sigma;

    double alpha_at(int t) const { return alpha.at(static_cast<std::size_t>(t - 1)); }
    double alpha_bar_at(int t) const {
        return t == 0 ? 1.0 : alpha_bar.at(static_cast<std::size_t>(t - 1));
    }
    double sigma_at(int t) const { return sigma.at(static_cast<std::size_t>(t - 1)); }

    /// Throws ValidationError if a stored invariant fails: abar strictly
    /// decreasing, abar equal to the running product of alpha within 1e-12,
    /// sigma^2 consistent, and abar at the last step <= final_bound.
    void validate(double final_bound = 1e-4) const;
};

inline constexpr int kDefaultSteps = 200;
inline constexpr double kDefaultBetaStart = 5e-4;
inline constexpr double kDefaultBetaEnd = 0.1;

/// Linear beta from beta_start to beta_end. Requires
/// 0 < beta_start <= beta_end < 1 and steps >= 2 (DomainError otherwise).
/// The terminal bound on abar is checked by validate(), not here, so short
/// schedules can be built for hand-checked examples.
NoiseSchedule make_schedule(int steps = kDefaultSteps, double beta_start = kDefaultBetaStart,
                            double beta_end = kDefaultBetaEnd);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) z, for 1 <= t <= steps.
Eigen::VectorXd forward_corrupt(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& z,
                                const NoiseSchedule& schedule);

// ---------------------------------------------------------------------------
// Denoiser network
// ---------------------------------------------------------------------------

struct Architecture {
    int data_dim = 3;
    int cond_dim = 4;
    int embed_dim = 16;
    std::vector<int> hidden{128, 128};

    int input_dim() const { return data_dim + cond_dim + embed_dim; }
    bool operator==(const Architecture&) const = default;
};

/// [sin(t w_0), cos(t w_0), sin(t w_1), ...] with w_j = 10000^(-j / (dim/2)).
Eigen::VectorXd timestep_embedding(int t, int dim);

/// Fully connected regressor with SiLU hidden activations and a linear
/// output layer. All parameters live in one flat vector, layer by layer,
/// each layer as (column-major weights out x in, then bias).
class Denoiser {
public:
    Denoiser() = default;
    Denoiser(Architecture arch, std::uint64_t seed);
    Denoiser(Architecture arch, Eigen::VectorXd parameters);

    const Architecture& architecture() const { return arch_; }
    const Eigen::VectorXd& parameters() const { return theta_; }
    Eigen::VectorXd& parameters() { return theta_; }
    int layer_count() const { return static_cast<int>(arch_.hidden.size()) + 1; }

    /// Noise prediction for columns of x_t (data_dim x n) and conditions
    /// (cond_dim x n); `t` holds one step per column.
    Eigen::MatrixXd predict(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& cond,
                            const std::vector<int>& t) const;
    /// Same step for every column.
    Eigen::MatrixXd predict(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& cond, int t) const;

    /// Mean squared error over all entries against `noise`, with the
    /// parameter gradient written to `gradient` when non-null.
    double loss(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& cond, const std::vector<int>& t,
                const Eigen::MatrixXd& noise, Eigen::VectorXd* gradient = nullptr) const;

private:
    Eigen::MatrixXd assemble_input(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& cond,
                                   const std::vector<int>& t) const;
    std::vector<Eigen::Index> offsets_;  // start of each layer's weights
    void build_offsets();

    Architecture arch_;
    Eigen::VectorXd theta_;
};

enum class OptimizerKind { SgdMomentum, Adam };

struct TrainConfig {
    int max_epochs = 200;
    int batch_size = 128;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::SgdMomentum;
    double momentum = 0.9;           ///< SGD
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double final_lr_fraction = 1.0;  ///< cosine decay to lr * fraction; 1 = constant
    int patience = 10;
    double tolerance = 1e-3;  ///< relative improvement over the patience window
};

struct TrainResult {
    Denoiser model;
    std::vector<double> epoch_loss;
    bool early_stopped = false;
};

/// Algorithm: each epoch visits a seeded permutation of the columns in
/// batches; each sample draws t uniform in {1..steps} and z ~ N(0, I) and
/// regresses the denoiser onto z. Deterministic given `seed`. Throws
/// NumericalError if the loss becomes non-finite.
TrainResult train_denoiser(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& cond,
                           const NoiseSchedule& schedule, const Architecture& arch,
                           const TrainConfig& config, std::uint64_t seed);

/// Reverse diffusion for every column of `cond`; column j draws its noise
/// from its own stream seeded by `stream_seeds[j]`. Returns data_dim x n in
/// standardized units. Throws NumericalError naming the step on non-finite
/// state.
Eigen::MatrixXd sample_batch(const Eigen::MatrixXd& cond, const Denoiser& model,
                             const NoiseSchedule& schedule,
                             const std::vector<std::uint64_t>& stream_seeds);

/// Stream seed used for a (seed, condition) pair.
std::uint64_t condition_stream(std::uint64_t seed, const Eigen::VectorXd& cond,
                               std::uint64_t draw = 0);

/// Single conditional sample (standardized units).
Eigen::VectorXd sample(const Eigen::VectorXd& cond, const Denoiser& model,
                       const NoiseSchedule& schedule, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Field surrogate
// ---------------------------------------------------------------------------

/// Rows `x1 x2 M alpha T P B`.
struct FieldDataset {
    std::vector<std::array<double, 7>> rows;

    void save(const std::filesystem::path& path) const;
    static FieldDataset load(const std::filesystem::path& path);
};

struct DatasetOptions {
    int points_per_ray = 48;     ///< random positions along each slot's LoS ray
    int uniform_points = 256;    ///< uniform draws over the grid box per condition
};

/// Samples each condition's generated field along all slot LoS rays (the
/// region predict_attenuation queries) and uniformly over the grid box.
/// Fields are generated with `field_seed`; point positions use `seed`.
FieldDataset build_dataset(const std::vector<flowfield::FlightCondition>& conditions,
                           const flowfield::GridSpec& grid,
                           const flowfield::WakeModelParams& params, double c0,
                           const channel::Scenario& scenario, const DatasetOptions& options,
                           std::uint64_t field_seed, std::uint64_t seed);

/// Per-channel affine standardization; the B channel is first mapped to
/// log10(B + b_floor).
struct Normalization {
    Eigen::VectorXd target_mean, target_scale;  // 3
    Eigen::VectorXd cond_mean, cond_scale;      // 4
    double b_floor = 1e-20;

    static Normalization fit(const FieldDataset& data);
    Eigen::MatrixXd targets(const FieldDataset& data) const;     ///< 3 x n standardized
    Eigen::MatrixXd conditions(const FieldDataset& data) const;  ///< 4 x n standardized
    Eigen::VectorXd condition(double x1, double x2, double mach, double attack) const;
    /// Standardized (T, P, log B) -> physical (T, P, B).
    std::array<double, 3> physical(const Eigen::VectorXd& standardized) const;
};

/// Body-frame box covered by the training data.
struct DomainBox {
    double x1_lo = 0.0, x1_hi = 0.0, x2_lo = 0.0, x2_hi = 0.0;
};

struct SurrogateModel {
    NoiseSchedule schedule;
    Denoiser denoiser;
    Normalization norm;
    DomainBox domain;
    std::uint64_t training_seed = 0;

    /// Text container; numbers use the shortest round-trip format, so
    /// load followed by save reproduces the file byte for byte.
    void save(const std::filesystem::path& path) const;
    static SurrogateModel load(const std::filesystem::path& path);
};

struct SurrogateTraining {
    SurrogateModel model;
    std::vector<double> epoch_loss;
    bool early_stopped = false;
};

SurrogateTraining train_surrogate(const FieldDataset& data, const NoiseSchedule& schedule,
                                  const Architecture& arch, const TrainConfig& config,
                                  std::uint64_t seed);

struct PredictOptions {
    int n_path = 128;
    int draws = 4;  ///< reverse chains per path point, averaged in the log-B domain
    std::uint64_t seed = 0;
};

/// Height-weighted B integral along one slot's LoS path using surrogate
/// samples over the part of the path inside the training box.
double predict_path_integral(double mach, double attack_deg, const channel::SlotGeometry& path,
                             const SurrogateModel& model, double altitude_m, double ground_ref_m,
                             const PredictOptions& options = {});

/// Batched variant: one integral per (condition, path) pair, all chains run
/// together.
std::vector<double> predict_path_integrals(const std::vector<flowfield::FlightCondition>& conditions,
                                           const std::vector<channel::SlotGeometry>& paths,
                                           const SurrogateModel& model, double altitude_m,
                                           double ground_ref_m, const PredictOptions& options = {});

/// Turbulence loss [dB] at frequency f for one slot.
double predict_attenuation(double mach, double attack_deg, const channel::SlotGeometry& path,
                           const SurrogateModel& model, double f_hz, double altitude_m,
                           double ground_ref_m, const PredictOptions& options = {});

}  // namespace thzag::surrogate
