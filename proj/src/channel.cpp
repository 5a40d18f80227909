#include "thzag/channel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace thzag::channel {

namespace {

// Index i such that axis[i] <= v <= axis[i + 1]; axis strictly increasing.
std::size_t bracket(const std::vector<double>& axis, double v) {
    auto it = std::upper_bound(axis.begin(), axis.end(), v);
    std::size_t i = (it == axis.begin()) ? 0 : static_cast<std::size_t>(it - axis.begin()) - 1;
    return std::min(i, axis.size() - 2);
}

void require_increasing(const std::vector<double>& axis, const char* name) {
    if (axis.size() < 2) {
        throw ValidationError(std::string("absorption table: ") + name +
                              " axis needs at least two values");
    }
    for (std::size_t i = 1; i < axis.size(); ++i) {
        if (!(axis[i] > axis[i - 1])) {
            throw ValidationError(std::string("absorption table: ") + name +
                                  " axis not strictly increasing at index " + std::to_string(i));
        }
    }
}

}  // namespace

AbsorptionTable::AbsorptionTable(std::vector<double> frequencies_hz,
                                 std::vector<double> altitudes_m, std::vector<double> mu_per_m)
    : freqs_(std::move(frequencies_hz)), alts_(std::move(altitudes_m)), mu_(std::move(mu_per_m)) {
    require_increasing(freqs_, "frequency");
    require_increasing(alts_, "altitude");
    if (mu_.size() != freqs_.size() * alts_.size()) {
        throw ValidationError("absorption table: expected " +
                              std::to_string(freqs_.size() * alts_.size()) + " values, got " +
                              std::to_string(mu_.size()));
    }
    for (std::size_t n = 0; n < mu_.size(); ++n) {
        if (!(mu_[n] >= 0.0) || !std::isfinite(mu_[n])) {
            throw ValidationError("absorption table: negative or non-finite mu at f=" +
                                  format_exact(freqs_[n / alts_.size()]) +
                                  " h=" + format_exact(alts_[n % alts_.size()]));
        }
    }
}

AbsorptionTable AbsorptionTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open absorption table " + path.string());
    struct Row {
        double f, h, mu;
        int line;
    };
    std::vector<Row> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        Row r{0, 0, 0, line_no};
        if (!(is >> r.f >> r.h >> r.mu)) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                  ": expected `f_Hz h_m mu_per_m`");
        }
        rows.push_back(r);
    }
    if (rows.empty()) throw ValidationError(path.string() + ": empty absorption table");

    std::vector<double> freqs, alts;
    for (const auto& r : rows) {
        if (r.f != rows.front().f) break;
        alts.push_back(r.h);
    }
    for (std::size_t n = 0; n < rows.size(); n += alts.size()) freqs.push_back(rows[n].f);
    std::vector<double> mu;
    mu.reserve(rows.size());
    for (std::size_t n = 0; n < rows.size(); ++n) {
        const std::size_t i = n / alts.size(), j = n % alts.size();
        if (rows[n].f != freqs[i] || rows[n].h != alts[j]) {
            throw ValidationError(path.string() + ":" + std::to_string(rows[n].line) +
                                  ": table is not a full (f, h) grid sorted by (f, h)");
        }
        mu.push_back(rows[n].mu);
    }
    if (rows.size() != freqs.size() * alts.size()) {
        throw ValidationError(path.string() + ": last frequency block is incomplete");
    }
    return AbsorptionTable(std::move(freqs), std::move(alts), std::move(mu));
}

void AbsorptionTable::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write absorption table " + path.string());
    out << "# f_Hz h_m mu_per_m\n";
    for (std::size_t i = 0; i < freqs_.size(); ++i) {
        for (std::size_t j = 0; j < alts_.size(); ++j) {
            out << format_exact(freqs_[i]) << ' ' << format_exact(alts_[j]) << ' '
                << format_exact(mu_[i * alts_.size() + j]) << '\n';
        }
    }
}

AbsorptionTable AbsorptionTable::lorentzian_default() {
    struct Line {
        double center_hz, half_width_hz, peak_per_m;
    };
    // Water-vapour lines at 183.31 and 325.15 GHz, sea-level peak values.
    constexpr Line lines[] = {{183.31e9, 3.0e9, 7.0e-3}, {325.15e9, 4.0e9, 8.0e-3}};
    constexpr double continuum_per_m = 1.0e-4;  // at 100 GHz, scales as f^2
    constexpr double vapour_scale_height_m = 2000.0;

    std::vector<double> freqs, alts, mu;
    for (double f = 50e9; f <= 1100e9 + 1.0; f += 0.25e9) freqs.push_back(f);
    for (double h = 0.0; h <= 20000.0 + 1e-9; h += 250.0) alts.push_back(h);
    mu.reserve(freqs.size() * alts.size());
    for (double f : freqs) {
        double sea_level = continuum_per_m * (f / 100e9) * (f / 100e9);
        for (const auto& l : lines) {
            const double df = f - l.center_hz;
            sea_level += l.peak_per_m * l.half_width_hz * l.half_width_hz /
                         (df * df + l.half_width_hz * l.half_width_hz);
        }
        for (double h : alts) mu.push_back(sea_level * std::exp(-h / vapour_scale_height_m));
    }
    return AbsorptionTable(std::move(freqs), std::move(alts), std::move(mu));
}

AbsorptionTable AbsorptionTable::constant(double mu_per_m, double f_lo, double f_hi,
                                          double h_lo, double h_hi) {
    return AbsorptionTable({f_lo, f_hi}, {h_lo, h_hi}, {mu_per_m, mu_per_m, mu_per_m, mu_per_m});
}

double AbsorptionTable::mu(double f_hz, double h_m) const {
    if (f_hz < freqs_.front() || f_hz > freqs_.back()) {
        throw DomainError("absorption table does not cover f=" + format_exact(f_hz) + " Hz");
    }
    if (h_m < alts_.front() || h_m > alts_.back()) {
        throw DomainError("absorption table does not cover h=" + format_exact(h_m) + " m");
    }
    const std::size_t i = bracket(freqs_, f_hz);
    const std::size_t j = bracket(alts_, h_m);
    const double tf = (f_hz - freqs_[i]) / (freqs_[i + 1] - freqs_[i]);
    const double th = (h_m - alts_[j]) / (alts_[j + 1] - alts_[j]);
    const std::size_t n = alts_.size();
    const double m00 = mu_[i * n + j], m01 = mu_[i * n + j + 1];
    const double m10 = mu_[(i + 1) * n + j], m11 = mu_[(i + 1) * n + j + 1];
    return (1 - tf) * ((1 - th) * m00 + th * m01) + tf * ((1 - th) * m10 + th * m11);
}

double Scenario::total_bandwidth_hz() const {
    double sum = 0.0;
    for (const auto& b : sub_bands) sum += b.width_hz;
    return sum;
}

void Scenario::validate() const {
    auto fail = [](const std::string& msg) { throw ValidationError("scenario: " + msg); };
    if (slot_count < 1) fail("slot_count must be >= 1");
    if (!(slot_length_s > 0)) fail("slot_length_s must be > 0");
    if (!(flight_length_m > 0)) fail("flight_length_m must be > 0");
    if (!(ground_ref_m < altitude_m)) fail("ground_ref_m must be below altitude_m");
    if (sub_bands.empty()) fail("at least one sub-band required");
    for (std::size_t i = 0; i < sub_bands.size(); ++i) {
        if (!(sub_bands[i].width_hz > 0)) fail("sub-band " + std::to_string(i) + " width <= 0");
        if (!(sub_bands[i].center_hz > 0)) fail("sub-band " + std::to_string(i) + " center <= 0");
        if (i > 0 && !(sub_bands[i].center_hz > sub_bands[i - 1].center_hz)) {
            fail("sub-band centers not strictly increasing at index " + std::to_string(i));
        }
    }
    if (!std::isfinite(avg_power_dbm)) fail("avg_power_dbm must be finite");
    if (feasible_mach.empty()) fail("feasible_mach is empty");
    if (feasible_attack_deg.empty()) fail("feasible_attack_deg is empty");
    for (double m : feasible_mach) {
        if (!(m >= 0.0) || !std::isfinite(m)) fail("feasible_mach values must be finite and >= 0");
    }
    // A floor above max(feasible_mach) is well-formed but infeasible; the
    // optimizer reports it as such.
    if (!(avg_mach_floor >= 0.0) || !std::isfinite(avg_mach_floor))
        fail("avg_mach_floor must be finite and >= 0");
    if (absorption_quadrature < 2) fail("absorption quadrature needs >= 2 samples");
}

std::vector<SubBand> even_bands(double lo_hz, double hi_hz, int count, double width_hz) {
    std::vector<SubBand> out;
    if (count == 1) return {{lo_hz, width_hz}};
    for (int i = 0; i < count; ++i) {
        out.push_back({lo_hz + (hi_hz - lo_hz) * i / (count - 1), width_hz});
    }
    return out;
}

std::vector<SubBand> contiguous_bands(double lo_hz, double hi_hz, double width_hz) {
    std::vector<SubBand> out;
    const auto n = static_cast<long>(std::floor((hi_hz - lo_hz) / width_hz + 1e-9));
    out.reserve(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) out.push_back({lo_hz + (i + 0.5) * width_hz, width_hz});
    return out;
}

Scenario default_scenario() {
    Scenario s;
    s.sub_bands = even_bands(100e9, 500e9, 8, 10e6);
    return s;
}

Point2 SlotGeometry::at(double u) const {
    const double t = u / range_m;
    return {aircraft.x + (base_station.x - aircraft.x) * t,
            aircraft.h + (base_station.h - aircraft.h) * t};
}

SlotGeometry slot_geometry(const Scenario& scenario, int slot) {
    if (slot < 0 || slot >= scenario.slot_count) {
        throw DomainError("slot index " + std::to_string(slot) + " out of range");
    }
    SlotGeometry g;
    g.slot = slot;
    const double x = scenario.slot_count == 1
                         ? scenario.flight_length_m / 2
                         : scenario.flight_length_m * slot / (scenario.slot_count - 1);
    g.aircraft = {x, scenario.altitude_m};
    g.base_station = {scenario.flight_length_m / 2, 0.0};
    g.range_m = std::hypot(g.base_station.x - x, scenario.altitude_m);
    return g;
}

double fspl_db(double f_hz, double r_m) {
    if (!(f_hz > 0) || !(r_m > 0)) throw DomainError("fspl_db requires f > 0 and r > 0");
    return 20.0 * std::log10(4.0 * kPi * r_m * f_hz / kSpeedOfLight);
}

double absorption_transmittance(double f_hz, const SlotGeometry& path,
                                const AbsorptionTable& table, int n_quad) {
    if (n_quad < 2) throw DomainError("absorption quadrature needs >= 2 samples");
    const double step = path.range_m / (n_quad - 1);
    double integral = 0.0;
    for (int n = 0; n < n_quad; ++n) {
        const double w = (n == 0 || n == n_quad - 1) ? 0.5 : 1.0;
        integral += w * table.mu(f_hz, path.at(n * step).h);
    }
    return std::exp(-integral * step);
}

double weather_loss_db(double /*f_hz*/, const WeatherModel& weather, double path_length_m) {
    if (weather.rain_rate_mm_h < 0 || weather.cloud_density_g_m3 < 0 || path_length_m < 0) {
        throw DomainError("weather_loss_db: negative rain rate, cloud density or length");
    }
    const double rain = weather.rain_rate_mm_h > 0
                            ? weather.rain_k * std::pow(weather.rain_rate_mm_h, weather.rain_a)
                            : 0.0;
    const double cloud = weather.cloud_k * weather.cloud_density_g_m3;
    return (rain + cloud) * path_length_m / 1000.0;
}

double coefficient_a(const Scenario& scenario, int slot, int band) {
    const SlotGeometry g = slot_geometry(scenario, slot);
    const double f = scenario.sub_bands.at(static_cast<std::size_t>(band)).center_hz;
    const double gains_db = scenario.tx_gain_dbi + scenario.rx_gain_dbi;
    const double tau = absorption_transmittance(f, g, scenario.absorption,
                                                scenario.absorption_quadrature);
    const double loss_db = fspl_db(f, g.range_m) + weather_loss_db(f, scenario.weather, g.range_m);
    return db_to_linear(gains_db - loss_db) * tau;
}

Eigen::VectorXd band_noise_w(const Scenario& scenario) {
    const double n0 = dbm_to_watts(scenario.noise_psd_dbm_hz);
    Eigen::VectorXd n(static_cast<Eigen::Index>(scenario.sub_bands.size()));
    for (Eigen::Index i = 0; i < n.size(); ++i) {
        n[i] = n0 * scenario.sub_bands[static_cast<std::size_t>(i)].width_hz;
    }
    return n;
}

Eigen::VectorXd band_widths_hz(const Scenario& scenario) {
    Eigen::VectorXd w(static_cast<Eigen::Index>(scenario.sub_bands.size()));
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        w[i] = scenario.sub_bands[static_cast<std::size_t>(i)].width_hz;
    }
    return w;
}

double slot_capacity(std::span<const double> gain, std::span<const double> noise_w,
                     std::span<const double> width_hz, std::span<const double> power_w,
                     std::span<const double> turb_loss_linear) {
    const std::size_t n = gain.size();
    if (noise_w.size() != n || width_hz.size() != n || power_w.size() != n ||
        turb_loss_linear.size() != n) {
        throw DomainError("slot_capacity: per-band inputs differ in length");
    }
    double c = 0.0;
    for (std::size_t i = 0; i < gain.size(); ++i) {
        if (power_w[i] < 0) throw DomainError("slot_capacity: negative power");
        const double snr = gain[i] * power_w[i] / (turb_loss_linear[i] * noise_w[i]);
        c += width_hz[i] * std::log2(1.0 + snr);
    }
    return c;
}

double slot_capacity(const Scenario& scenario, int slot, std::span<const double> power_w,
                     std::span<const double> turb_loss_linear) {
    const std::size_t bands = scenario.sub_bands.size();
    if (power_w.size() != bands || turb_loss_linear.size() != bands) {
        throw DomainError("slot_capacity: row length does not match band count");
    }
    std::vector<double> gain(bands);
    for (std::size_t i = 0; i < bands; ++i) gain[i] = coefficient_a(scenario, slot, static_cast<int>(i));
    const Eigen::VectorXd noise = band_noise_w(scenario);
    const Eigen::VectorXd width = band_widths_hz(scenario);
    return slot_capacity(gain, {noise.data(), bands}, {width.data(), bands}, power_w,
                         turb_loss_linear);
}

LinkBudget make_link_budget(const Scenario& scenario) {
    scenario.validate();
    LinkBudget b;
    const int k = scenario.slot_count;
    const int n = static_cast<int>(scenario.sub_bands.size());
    b.gain.resize(k, n);
    for (int s = 0; s < k; ++s) {
        for (int i = 0; i < n; ++i) b.gain(s, i) = coefficient_a(scenario, s, i);
    }
    b.noise_w = band_noise_w(scenario);
    b.width_hz = band_widths_hz(scenario);
    b.avg_power_w = scenario.avg_power_w();
    b.antenna_gain = db_to_linear(scenario.tx_gain_dbi + scenario.rx_gain_dbi);
    return b;
}

}  // namespace thzag::channel
