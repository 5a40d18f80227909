// Frequency-selective THz air-to-ground link budget.
//
// Geometry: the aircraft flies along x at altitude H from S = (0, H) to
// D = (L, H); the base station sits at (L/2, 0). Time is discretized into K
// slots, slot k placing the aircraft at x_k = k L / (K - 1).
#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "thzag/common.hpp"

namespace thzag::channel {

struct SubBand {
    double center_hz = 0.0;
    double width_hz = 0.0;
};

/// Specific attenuation coefficients for rain and cloud. Coefficients are
/// frequency-flat; supply a different set per run to model another band.
struct WeatherModel {
    double rain_rate_mm_h = 0.0;
    double cloud_density_g_m3 = 0.0;
    double rain_k = 1.0;   ///< dB/km per (mm/h)^rain_a
    double rain_a = 0.7;
    double cloud_k = 4.0;  ///< dB/km per g/m^3
};

/// Molecular absorption coefficient mu_abs(f, h) [1/m] on a rectangular
/// (frequency x altitude) grid with bilinear interpolation.
class AbsorptionTable {
public:
    AbsorptionTable(std::vector<double> frequencies_hz, std::vector<double> altitudes_m,
                    std::vector<double> mu_per_m);

    /// Reads the columnar text format `f_Hz h_m mu_per_m`, sorted by (f, h).
    static AbsorptionTable load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    /// Two Lorentzian water-vapour lines plus a quadratic continuum, decaying
    /// with the water-vapour scale height. Covers 50 GHz - 1.1 THz, 0 - 20 km.
    static AbsorptionTable lorentzian_default();

    /// Constant coefficient over the given frequency and altitude ranges.
    static AbsorptionTable constant(double mu_per_m, double f_lo, double f_hi, double h_lo,
                                    double h_hi);

    double mu(double f_hz, double h_m) const;

    const std::vector<double>& frequencies() const { return freqs_; }
    const std::vector<double>& altitudes() const { return alts_; }

private:
    std::vector<double> freqs_;
    std::vector<double> alts_;
    std::vector<double> mu_;  // row-major [freq][alt]
};

struct Scenario {
    double flight_length_m = 6000.0;
    double altitude_m = 1000.0;
    double ground_ref_m = 0.0;  ///< h0 in the height-weighting of the Rytov integral
    int slot_count = 21;
    double slot_length_s = 1.5;
    std::vector<SubBand> sub_bands;
    double reference_frequency_hz = 100e9;  ///< band used for per-slot L_turb reports
    double tx_gain_dbi = 30.0;
    double rx_gain_dbi = 30.0;
    double noise_psd_dbm_hz = -169.0;
    double avg_power_dbm = 10.0;
    double avg_mach_floor = 0.6;
    std::vector<double> feasible_mach{0.5, 0.7};
    std::vector<double> feasible_attack_deg{0.0, -10.0, 10.0};
    WeatherModel weather;
    AbsorptionTable absorption = AbsorptionTable::lorentzian_default();
    int absorption_quadrature = 64;

    double horizon_s() const { return slot_count * slot_length_s; }
    double avg_power_w() const { return dbm_to_watts(avg_power_dbm); }
    double total_bandwidth_hz() const;

    /// Throws ValidationError naming the first violated invariant.
    void validate() const;
};

/// `count` centers evenly spaced over [lo, hi], each `width` wide.
std::vector<SubBand> even_bands(double lo_hz, double hi_hz, int count, double width_hz);

/// Contiguous grid of `width`-wide bands tiling [lo, hi).
std::vector<SubBand> contiguous_bands(double lo_hz, double hi_hz, double width_hz);

/// Reference scenario (21 slots, 6 km at 1 km altitude) with the desk-scale 8-band grid (100-500 GHz, 10 MHz).
Scenario default_scenario();

struct Point2 {
    double x = 0.0;
    double h = 0.0;
};

struct SlotGeometry {
    int slot = 0;
    Point2 aircraft;
    Point2 base_station;
    double range_m = 0.0;

    /// World point at distance u from the aircraft along the LoS path.
    Point2 at(double u) const;
};

SlotGeometry slot_geometry(const Scenario& scenario, int slot);

/// 20 log10(4 pi r f / c).
double fspl_db(double f_hz, double r_m);

/// exp(-integral of mu_abs along the slant LoS path), trapezoidal rule.
double absorption_transmittance(double f_hz, const SlotGeometry& path,
                                const AbsorptionTable& table, int n_quad = 64);

/// Rain plus cloud loss in dB over `path_length_m`.
double weather_loss_db(double f_hz, const WeatherModel& weather, double path_length_m);

/// Received-power coefficient A_k^i (linear), everything except transmit
/// power and turbulence.
double coefficient_a(const Scenario& scenario, int slot, int band);

/// Noise power per band, N0 * width [W].
Eigen::VectorXd band_noise_w(const Scenario& scenario);
Eigen::VectorXd band_widths_hz(const Scenario& scenario);

/// Sum over bands of width * log2(1 + A P / (L N)) in bit/s.
double slot_capacity(std::span<const double> gain, std::span<const double> noise_w,
                     std::span<const double> width_hz, std::span<const double> power_w,
                     std::span<const double> turb_loss_linear);

double slot_capacity(const Scenario& scenario, int slot, std::span<const double> power_w,
                     std::span<const double> turb_loss_linear);

/// Precomputed per-slot, per-band coefficients of one scenario.
struct LinkBudget {
    RowMatrix gain;            ///< K x I, A_k^i
    Eigen::VectorXd noise_w;   ///< I
    Eigen::VectorXd width_hz;  ///< I
    double avg_power_w = 0.0;
    double antenna_gain = 0.0;  ///< G_Tx G_Rx, linear

    int slots() const { return static_cast<int>(gain.rows()); }
    int bands() const { return static_cast<int>(gain.cols()); }
};

LinkBudget make_link_budget(const Scenario& scenario);

}  // namespace thzag::channel
