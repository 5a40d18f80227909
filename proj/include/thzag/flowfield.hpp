// Turbulence fields (T, P, E, W) around the aircraft.
//
// Coordinates are in the aircraft-body frame with the origin at the aircraft
// reference point: x1 is the distance behind the aircraft (downstream
// positive) and x2 is the altitude offset h - H. The fields stand in for the
// output of a RANS / SST k-omega solver: either generated by the parametric
// wake model below or imported from an external CFD export.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "thzag/common.hpp"

namespace thzag::flowfield {

struct FlightCondition {
    double mach = 0.0;
    double attack_deg = 0.0;
};

/// Values returned outside the grid's bounding box.
struct Freestream {
    double temperature_k = 281.65;
    double pressure_pa = 89874.6;
    double tke_floor = 1e-6;  ///< m^2/s^2
    double dissipation = 1.0;  ///< 1/s
};

struct FieldSample {
    double temperature = 0.0;  ///< K
    double pressure = 0.0;     ///< Pa
    double tke = 0.0;          ///< turbulent kinetic energy, m^2/s^2
    double dissipation = 0.0;  ///< specific dissipation rate, 1/s
};

struct GridSpec {
    double x1_min = -50.0, x1_max = 150.0;
    int n1 = 201;
    double x2_min = -50.0, x2_max = 50.0;
    int n2 = 101;
};

/// Immutable structured 2-D grid of the four turbulence fields. Matrices are
/// stored row-major as [i][j] with i indexing x1 and j indexing x2.
class FieldGrid {
public:
    FieldGrid(std::vector<double> x1, std::vector<double> x2, std::vector<double> temperature,
              std::vector<double> pressure, std::vector<double> tke,
              std::vector<double> dissipation, FlightCondition condition, Freestream freestream);

    const std::vector<double>& x1() const { return x1_; }
    const std::vector<double>& x2() const { return x2_; }
    std::size_t n1() const { return x1_.size(); }
    std::size_t n2() const { return x2_.size(); }
    std::size_t index(std::size_t i, std::size_t j) const { return i * x2_.size() + j; }

    const std::vector<double>& temperature() const { return t_; }
    const std::vector<double>& pressure() const { return p_; }
    const std::vector<double>& tke() const { return e_; }
    const std::vector<double>& dissipation() const { return w_; }
    const FlightCondition& condition() const { return condition_; }
    const Freestream& freestream() const { return freestream_; }

    FieldSample node(std::size_t i, std::size_t j) const;
    bool contains(double x1, double x2) const;

    /// Local x2 spacing of the cell containing x2 (edge spacing outside).
    double x2_spacing(double x2) const;
    double max_spacing() const;

private:
    std::vector<double> x1_, x2_;
    std::vector<double> t_, p_, e_, w_;
    FlightCondition condition_;
    Freestream freestream_;
};

/// Parametric wake model. Every perturbation scales with a power of Mach,
/// so M = 0 reproduces the undisturbed freestream exactly.
///
/// Structure (r^2 = x1^2 + x2^2):
///   core(x)  = exp(-r^2 / 2 core_radius^2)          near-body turbulent shroud
///   plume(x) = env(x1) exp(-(x2 - d)^2 / 2 w^2) w0/w  downstream wake
///   d(x1)    = -deflection_gain * alpha * (1 - exp(-x1+/deflection_length))
///   w(x1)    = wake_width + wake_spread * x1+
/// A shed-vortex ripple of relative size heterogeneity_gain*|alpha| rides on
/// the plume, and a seeded band-limited modulation multiplies all
/// perturbations.
struct WakeModelParams {
    Freestream freestream;
    double gravity = 9.80665;
    double gas_constant = 287.053;  ///< dry air, J/(kg K)

    double core_radius = 12.0;
    double wake_width = 4.0;
    double wake_spread = 0.08;
    double wake_decay_length = 60.0;
    double nose_length = 8.0;
    double deflection_gain = 0.5;  ///< m per degree of attack
    double deflection_length = 30.0;
    double heterogeneity_gain = 0.05;  ///< per degree of |alpha|
    double heterogeneity_wavelength = 25.0;

    // Amplitudes at M = 1; tke and temperature scale with M^2, dissipation with M.
    double core_tke = 400.0;
    double wake_tke = 10.0;
    double core_temperature = 0.0;
    double wake_temperature = 0.006;
    double core_pressure_drop = 0.0;  ///< fraction of local static pressure
    double core_dissipation = 300.0;
    double wake_dissipation = 10.0;

    double modulation = 0.01;  ///< relative amplitude of the seeded modulation
    int modulation_modes = 16;
    double modulation_min_wavelength = 10.0;
    double modulation_max_wavelength = 40.0;

    /// Hydrostatic pressure at altitude offset x2 with isothermal freestream.
    double hydrostatic_pressure(double x2) const;

    /// Throws ValidationError when a width is non-positive or amplitudes
    /// would break positivity.
    void validate() const;
};

FieldGrid generate_wake_field(FlightCondition condition, const GridSpec& grid,
                              const WakeModelParams& params, std::uint64_t seed);

/// Bilinear interpolation of all four fields; freestream outside the box.
FieldSample sample_field(const FieldGrid& field, double x1, double x2);

void export_field(const FieldGrid& field, const std::filesystem::path& path);
FieldGrid import_field(const std::filesystem::path& path);

/// Canonical file name used by gen-fields and by directory imports.
std::string field_file_name(FlightCondition condition);

}  // namespace thzag::flowfield
