#include "thzag/turbulence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace thzag::turbulence {

using channel::Point2;
using channel::SlotGeometry;

double FadingParams::alpha_ls() const {
    return inv_alpha > 0 ? 1.0 / inv_alpha : std::numeric_limits<double>::infinity();
}

double FadingParams::beta_ss() const {
    return inv_beta > 0 ? 1.0 / inv_beta : std::numeric_limits<double>::infinity();
}

double potential_temperature(double temperature_k, double pressure_pa) {
    return temperature_k * std::pow(1000.0 / (pressure_pa / 100.0), kPotentialTemperatureExponent);
}

double structure_parameter_b(const flowfield::FieldGrid& field, double x1, double x2, double c0) {
    // The freestream outside the grid is uniform, so it carries no
    // potential-temperature gradient.
    if (!field.contains(x1, x2)) return 0.0;
    const flowfield::FieldSample here = flowfield::sample_field(field, x1, x2);
    const double h = field.x2_spacing(x2);
    const double lo_edge = field.x2().front(), hi_edge = field.x2().back();
    double lo = std::max(x2 - h, lo_edge), hi = std::min(x2 + h, hi_edge);
    if (lo == x2 && hi == x2) return 0.0;
    auto theta = [&](double z) {
        const flowfield::FieldSample s = flowfield::sample_field(field, x1, z);
        return potential_temperature(s.temperature, s.pressure);
    };
    const double gradient = (theta(hi) - theta(lo)) / (hi - lo);
    const double turbulence = std::pow(here.tke * here.dissipation, 2.0 / 3.0);
    return c0 * turbulence / (here.temperature * here.temperature) * gradient * gradient;
}

double rytov_prefactor(double f_hz, double altitude_m, double ground_ref_m) {
    if (!(f_hz > 0)) throw DomainError("rytov variance requires f > 0");
    if (!(altitude_m > ground_ref_m)) throw DomainError("rytov variance requires H > h0");
    return 2.25 * std::pow(2.0 * kPi * f_hz / kSpeedOfLight, 7.0 / 6.0) *
           std::pow(altitude_m - ground_ref_m, 5.0 / 6.0);
}

BodyPoint to_body(const SlotGeometry& path, const Point2& world) {
    return {path.aircraft.x - world.x, world.h - path.aircraft.h};
}

double weighted_path_integral(const std::function<double(const Point2&)>& b_at,
                              const SlotGeometry& path, double altitude_m, double ground_ref_m,
                              double u_begin, double u_end, const RytovOptions& options,
                              double trace_scale) {
    if (options.n_quad < 2) throw DomainError("rytov quadrature needs N_quad >= 2");
    if (!(u_end > u_begin)) return 0.0;
    const int n = options.n_quad;
    const double depth = altitude_m - ground_ref_m;
    auto height_at = [&](double u) { return std::max(path.at(u).h - ground_ref_m, 0.0) / depth; };
    // When the path ends on the reference height the weight behaves like
    // (u_end - u)^(5/6), which caps the uniform trapezoid rule near order
    // 1.8. Grading the nodes quadratically toward that end, u = u_end -
    // len (1 - s)^2, turns the integrand into a (1 - s)^(8/3) profile in s
    // and restores second order.
    const bool graded = height_at(u_end) <= 1e-12;
    const double len = u_end - u_begin;
    const double ds = 1.0 / (n - 1);
    if (options.trace) *options.trace << "u_m,x_m,h_m,B,running_sigma2\n";
    double sum = 0.0, prev = 0.0;
    for (int q = 0; q < n; ++q) {
        const double s = q * ds;
        const double u = graded ? (q == n - 1 ? u_end : u_end - len * (1.0 - s) * (1.0 - s))
                                : u_begin + len * s;
        const double jacobian = graded ? 2.0 * len * (1.0 - s) : len;
        const Point2 p = path.at(u);
        const double height = std::max(p.h - ground_ref_m, 0.0) / depth;
        const double b = b_at(p);
        const double value = b * std::pow(height, 5.0 / 6.0) * jacobian;
        if (q > 0) sum += 0.5 * (prev + value) * ds;
        prev = value;
        if (options.trace) {
            *options.trace << format_exact(u) << ',' << format_exact(p.x) << ',' << format_exact(p.h)
                           << ',' << format_exact(b) << ',' << format_exact(sum * trace_scale) << '\n';
        }
    }
    return sum;
}

PathInterval clip_to_box(const SlotGeometry& path, double x1_lo, double x1_hi, double x2_lo,
                         double x2_hi) {
    // Body coordinates are linear in u: b(u) = dir * u, starting at the origin.
    const Point2 end = path.base_station;
    const BodyPoint far = to_body(path, end);
    const double r = path.range_m;
    const double d1 = far.x1 / r, d2 = far.x2 / r;
    double lo = 0.0, hi = r;
    auto clip = [&](double d, double a, double b) {
        // Keep u with a <= d u <= b.
        if (d == 0.0) {
            if (a > 0.0 || b < 0.0) hi = -1.0;
            return;
        }
        double u0 = a / d, u1 = b / d;
        if (u0 > u1) std::swap(u0, u1);
        lo = std::max(lo, u0);
        hi = std::min(hi, u1);
    };
    clip(d1, x1_lo, x1_hi);
    clip(d2, x2_lo, x2_hi);
    return {lo, hi};
}

double rytov_variance(const std::function<double(const Point2&)>& b_at, const SlotGeometry& path,
                      double f_hz, double altitude_m, double ground_ref_m,
                      const RytovOptions& options) {
    const double prefactor = rytov_prefactor(f_hz, altitude_m, ground_ref_m);
    return prefactor * weighted_path_integral(b_at, path, altitude_m, ground_ref_m, 0.0,
                                              path.range_m, options, prefactor);
}

double field_path_integral(const flowfield::FieldGrid& field, const SlotGeometry& path,
                           double altitude_m, double ground_ref_m, double c0,
                           const RytovOptions& options) {
    const PathInterval span =
        clip_to_box(path, field.x1().front(), field.x1().back(), field.x2().front(), field.x2().back());
    if (span.empty()) return 0.0;
    auto b_at = [&](const Point2& world) {
        const BodyPoint p = to_body(path, world);
        return structure_parameter_b(field, p.x1, p.x2, c0);
    };
    return weighted_path_integral(b_at, path, altitude_m, ground_ref_m, span.begin, span.end,
                                  options);
}

double rytov_variance(const flowfield::FieldGrid& field, const SlotGeometry& path, double f_hz,
                      double altitude_m, double ground_ref_m, double c0,
                      const RytovOptions& options) {
    const double prefactor = rytov_prefactor(f_hz, altitude_m, ground_ref_m);
    return prefactor * field_path_integral(field, path, altitude_m, ground_ref_m, c0, options);
}

FadingParams fading_parameters_from_aperture(double sigma2, double aperture) {
    if (!(sigma2 >= 0) || !std::isfinite(sigma2)) throw DomainError("fading parameters need sigma2 >= 0");
    if (!(aperture >= 0)) throw DomainError("fading parameters need D >= 0");
    FadingParams p;
    p.sigma2 = sigma2;
    p.aperture = aperture;
    const double d2 = aperture * aperture;
    const double s125 = std::pow(sigma2, 6.0 / 5.0);  // sigma^(12/5)
    p.large_exponent = 0.49 * sigma2 / std::pow(1.0 + 0.18 * d2 + 0.56 * s125, 7.0 / 6.0);
    p.small_exponent = 0.51 * sigma2 * std::pow(1.0 + 0.69 * d2 * s125, -5.0 / 6.0) /
                       std::pow(1.0 + 0.9 * d2 + 0.62 * s125, 7.0 / 6.0);
    p.inv_alpha = std::expm1(p.large_exponent);
    p.inv_beta = std::expm1(p.small_exponent);
    return p;
}

FadingParams fading_parameters(double sigma2, double f_hz, double r_m) {
    if (!(f_hz > 0) || !(r_m > 0)) throw DomainError("fading parameters need f > 0 and r > 0");
    const double l = (kSpeedOfLight / f_hz) / kPi;
    const double aperture = std::sqrt(kPi * f_hz * l * l / (2.0 * kSpeedOfLight * r_m));
    FadingParams p = fading_parameters_from_aperture(sigma2, aperture);
    p.length_scale = l;
    p.frequency_hz = f_hz;
    p.range_m = r_m;
    return p;
}

Attenuation turbulence_attenuation(const FadingParams& params) {
    constexpr double kFloor = 1e-12;
    Attenuation out;
    const double s = params.scintillation();
    double gap = std::abs(1.0 - std::sqrt(s));
    if (gap < kFloor) {
        gap = kFloor;
        out.singular = true;
    }
    double loss = -10.0 * std::log10(gap);
    if (!(loss > 0.0)) {
        out.clamped = loss < 0.0;
        loss = 0.0;
    }
    out.loss_db = loss;
    out.linear = db_to_linear(loss);
    return out;
}

double scintillation_expanded(const FadingParams& params) {
    return std::exp(params.large_exponent) * std::exp(params.small_exponent) - 1.0;
}

Attenuation attenuation_from_sigma2(double sigma2, double f_hz, double r_m) {
    return turbulence_attenuation(fading_parameters(sigma2, f_hz, r_m));
}

}  // namespace thzag::turbulence
