// Turbulence-induced attenuation from flow fields along the LoS path.
//
// Pipeline: structure parameter B at each path point, height-weighted path
// integral giving the Rytov variance sigma^2, gamma-gamma large/small-scale
// parameters, and finally the closed-form loss
//   L_turb = -10 log10 |1 - sqrt(1/alpha + 1/beta + 1/(alpha beta))|  [dB].
#pragma once

#include <functional>
#include <iosfwd>

#include "thzag/channel.hpp"
#include "thzag/flowfield.hpp"

namespace thzag::turbulence {

inline constexpr double kStructureConstant = 2.8;
inline constexpr double kPotentialTemperatureExponent = 0.286;

/// Gamma-gamma fading parameters for one (sigma^2, f, r). The large/small
/// scale parameters are infinite when sigma^2 = 0; use the reciprocal
/// fields, which are always finite.
struct FadingParams {
    double sigma2 = 0.0;
    double aperture = 0.0;      ///< D
    double length_scale = 0.0;  ///< l = lambda / pi
    double frequency_hz = 0.0;
    double range_m = 0.0;
    double large_exponent = 0.0;  ///< exponent inside the alpha expression
    double small_exponent = 0.0;  ///< exponent inside the beta expression
    double inv_alpha = 0.0;       ///< 1 / alpha_ls = expm1(large_exponent)
    double inv_beta = 0.0;        ///< 1 / beta_ss = expm1(small_exponent)

    double alpha_ls() const;
    double beta_ss() const;
    /// 1/alpha + 1/beta + 1/(alpha beta).
    double scintillation() const { return inv_alpha + inv_beta + inv_alpha * inv_beta; }
};

struct Attenuation {
    double loss_db = 0.0;
    double linear = 1.0;  ///< 10^(loss_db / 10), divides received power
    bool singular = false;  ///< |1 - sqrt(s)| hit the 1e-12 floor
    bool clamped = false;   ///< negative loss clamped to 0 dB
};

/// T (1000 / P_hPa)^0.286 with P given in Pa.
double potential_temperature(double temperature_k, double pressure_pa);

/// c0 (E W)^(2/3) / T^2 * (d theta / dh)^2 at a body-frame point. The
/// vertical derivative is a central difference with one native x2 spacing,
/// one-sided where the stencil would leave the grid. Zero outside the grid,
/// where the freestream is uniform.
double structure_parameter_b(const flowfield::FieldGrid& field, double x1, double x2, double c0);

/// 2.25 (2 pi f / c)^(7/6) (H - h0)^(5/6).
double rytov_prefactor(double f_hz, double altitude_m, double ground_ref_m);

/// Body-frame coordinates of a world point relative to the aircraft.
struct BodyPoint {
    double x1 = 0.0;
    double x2 = 0.0;
};
BodyPoint to_body(const channel::SlotGeometry& path, const channel::Point2& world);

struct RytovOptions {
    int n_quad = 128;
    std::ostream* trace = nullptr;  ///< CSV dump of (u, h, B, running sigma^2)
};

/// Trapezoidal integral over u in [u_begin, u_end] of B(r) ((h - h0)/(H - h0))^(5/6),
/// with nodes graded toward u_end when the path ends at the reference height.
/// `trace_scale` multiplies the running integral in the diagnostic dump.
double weighted_path_integral(const std::function<double(const channel::Point2&)>& b_at,
                              const channel::SlotGeometry& path, double altitude_m,
                              double ground_ref_m, double u_begin, double u_end,
                              const RytovOptions& options, double trace_scale = 1.0);

/// Sub-interval of the path whose body-frame image lies in the box
/// [x1_lo, x1_hi] x [x2_lo, x2_hi]; empty when begin >= end.
struct PathInterval {
    double begin = 0.0;
    double end = 0.0;
    bool empty() const { return !(end > begin); }
};
PathInterval clip_to_box(const channel::SlotGeometry& path, double x1_lo, double x1_hi,
                         double x2_lo, double x2_hi);

/// Rytov variance of an arbitrary B profile over the whole LoS path.
double rytov_variance(const std::function<double(const channel::Point2&)>& b_at,
                      const channel::SlotGeometry& path, double f_hz, double altitude_m,
                      double ground_ref_m, const RytovOptions& options = {});

/// Frequency-independent part of the Rytov variance for a field: the
/// weighted integral of B over the portion of the path inside the grid.
/// Outside that box B is exactly zero.
double field_path_integral(const flowfield::FieldGrid& field, const channel::SlotGeometry& path,
                           double altitude_m, double ground_ref_m, double c0,
                           const RytovOptions& options = {});

double rytov_variance(const flowfield::FieldGrid& field, const channel::SlotGeometry& path,
                      double f_hz, double altitude_m, double ground_ref_m, double c0,
                      const RytovOptions& options = {});

/// Fading parameters with D = sqrt(pi f l^2 / (2 c r)), l = (c / f) / pi.
FadingParams fading_parameters(double sigma2, double f_hz, double r_m);

/// Same expressions with the aperture parameter D given directly.
FadingParams fading_parameters_from_aperture(double sigma2, double aperture);

Attenuation turbulence_attenuation(const FadingParams& params);

/// exp(a) exp(b) - 1, the expanded form of the scintillation sum.
double scintillation_expanded(const FadingParams& params);

/// Convenience: sigma^2 -> loss for one band and range.
Attenuation attenuation_from_sigma2(double sigma2, double f_hz, double r_m);

}  // namespace thzag::turbulence
