#include "thzag/flowfield.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace thzag::flowfield {

namespace {

std::size_t bracket(const std::vector<double>& axis, double v) {
    auto it = std::upper_bound(axis.begin(), axis.end(), v);
    std::size_t i = (it == axis.begin()) ? 0 : static_cast<std::size_t>(it - axis.begin()) - 1;
    return std::min(i, axis.size() - 2);
}

void check_axis(const std::vector<double>& axis, const char* name) {
    if (axis.size() < 2) {
        throw ValidationError(std::string("field grid: axis ") + name + " needs at least 2 points");
    }
    for (std::size_t i = 0; i < axis.size(); ++i) {
        if (!std::isfinite(axis[i])) {
            throw ValidationError(std::string("field grid: axis ") + name + " value " +
                                  std::to_string(i) + " is not finite");
        }
        if (i > 0 && !(axis[i] > axis[i - 1])) {
            throw ValidationError(std::string("field grid: axis ") + name +
                                  " not strictly increasing at index " + std::to_string(i));
        }
    }
}

std::string cell(std::size_t i, std::size_t j) {
    return "(" + std::to_string(i) + ", " + std::to_string(j) + ")";
}

// Seeded sum of plane waves with wavelengths in [lo, hi], unit RMS.
class Modulation {
public:
    Modulation(int modes, double lo, double hi, std::uint64_t seed) {
        Rng rng(seed);
        const double amp = std::sqrt(2.0 / std::max(modes, 1));
        for (int m = 0; m < modes; ++m) {
            const double dir = rng.uniform(0.0, 2.0 * kPi);
            const double wavelength = rng.uniform(lo, hi);
            const double k = 2.0 * kPi / wavelength;
            waves_.push_back({k * std::cos(dir), k * std::sin(dir), rng.uniform(0.0, 2.0 * kPi), amp});
        }
    }

    double operator()(double x1, double x2) const {
        double v = 0.0;
        for (const auto& w : waves_) v += w.amp * std::cos(w.k1 * x1 + w.k2 * x2 + w.phase);
        return v;
    }

private:
    struct Wave {
        double k1, k2, phase, amp;
    };
    std::vector<Wave> waves_;
};

}  // namespace

FieldGrid::FieldGrid(std::vector<double> x1, std::vector<double> x2,
                     std::vector<double> temperature, std::vector<double> pressure,
                     std::vector<double> tke, std::vector<double> dissipation,
                     FlightCondition condition, Freestream freestream)
    : x1_(std::move(x1)),
      x2_(std::move(x2)),
      t_(std::move(temperature)),
      p_(std::move(pressure)),
      e_(std::move(tke)),
      w_(std::move(dissipation)),
      condition_(condition),
      freestream_(freestream) {
    check_axis(x1_, "x1");
    check_axis(x2_, "x2");
    const std::size_t n = x1_.size() * x2_.size();
    const std::pair<const char*, const std::vector<double>*> fields[] = {
        {"T", &t_}, {"P", &p_}, {"E", &e_}, {"W", &w_}};
    for (const auto& [name, values] : fields) {
        if (values->size() != n) {
            throw ValidationError(std::string("field grid: matrix ") + name + " has " +
                                  std::to_string(values->size()) + " values, grid needs " +
                                  std::to_string(n));
        }
    }
    for (std::size_t i = 0; i < x1_.size(); ++i) {
        for (std::size_t j = 0; j < x2_.size(); ++j) {
            const std::size_t k = index(i, j);
            if (!(t_[k] > 0) || !std::isfinite(t_[k])) {
                throw ValidationError("field grid: non-positive temperature at cell " + cell(i, j));
            }
            if (!(p_[k] > 0) || !std::isfinite(p_[k])) {
                throw ValidationError("field grid: non-positive pressure at cell " + cell(i, j));
            }
            if (!(e_[k] >= 0) || !std::isfinite(e_[k])) {
                throw ValidationError("field grid: negative kinetic energy at cell " + cell(i, j));
            }
            if (!(w_[k] > 0) || !std::isfinite(w_[k])) {
                throw ValidationError("field grid: non-positive dissipation rate at cell " +
                                      cell(i, j));
            }
        }
    }
}

FieldSample FieldGrid::node(std::size_t i, std::size_t j) const {
    const std::size_t k = index(i, j);
    return {t_[k], p_[k], e_[k], w_[k]};
}

bool FieldGrid::contains(double x1, double x2) const {
    return x1 >= x1_.front() && x1 <= x1_.back() && x2 >= x2_.front() && x2 <= x2_.back();
}

double FieldGrid::x2_spacing(double x2) const {
    const std::size_t j = bracket(x2_, x2);
    return x2_[j + 1] - x2_[j];
}

double FieldGrid::max_spacing() const {
    double h = 0.0;
    for (std::size_t i = 1; i < x1_.size(); ++i) h = std::max(h, x1_[i] - x1_[i - 1]);
    for (std::size_t j = 1; j < x2_.size(); ++j) h = std::max(h, x2_[j] - x2_[j - 1]);
    return h;
}

double WakeModelParams::hydrostatic_pressure(double x2) const {
    const double scale_height = gas_constant * freestream.temperature_k / gravity;
    return freestream.pressure_pa * std::exp(-x2 / scale_height);
}

void WakeModelParams::validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("wake model: " + m); };
    if (!(freestream.temperature_k > 0) || !(freestream.pressure_pa > 0) ||
        !(freestream.dissipation > 0) || !(freestream.tke_floor >= 0)) {
        fail("freestream values must be positive");
    }
    for (double w : {core_radius, wake_width, wake_decay_length, nose_length, deflection_length,
                     heterogeneity_wavelength, modulation_min_wavelength,
                     modulation_max_wavelength}) {
        if (!(w > 0)) fail("widths and lengths must be > 0");
    }
    if (wake_spread < 0) fail("wake_spread must be >= 0");
    for (double a : {core_tke, wake_tke, core_temperature, wake_temperature, core_dissipation,
                     wake_dissipation, core_pressure_drop, modulation, heterogeneity_gain}) {
        if (!(a >= 0)) fail("amplitudes must be >= 0");
    }
    if (core_pressure_drop >= 1.0) fail("core_pressure_drop must be < 1");
}

FieldGrid generate_wake_field(FlightCondition condition, const GridSpec& grid,
                              const WakeModelParams& params, std::uint64_t seed) {
    if (grid.n1 <= 1 || grid.n2 <= 1 || !(grid.x1_max > grid.x1_min) ||
        !(grid.x2_max > grid.x2_min)) {
        throw ValidationError("grid spec is degenerate (needs > 1 point and positive extent per axis)");
    }
    params.validate();

    std::vector<double> x1(static_cast<std::size_t>(grid.n1)), x2(static_cast<std::size_t>(grid.n2));
    for (int i = 0; i < grid.n1; ++i) {
        x1[static_cast<std::size_t>(i)] = grid.x1_min + (grid.x1_max - grid.x1_min) * i / (grid.n1 - 1);
    }
    for (int j = 0; j < grid.n2; ++j) {
        x2[static_cast<std::size_t>(j)] = grid.x2_min + (grid.x2_max - grid.x2_min) * j / (grid.n2 - 1);
    }

    const double mach = condition.mach;
    const double alpha = condition.attack_deg;
    const double m2 = mach * mach;
    const Modulation modulation(params.modulation_modes, params.modulation_min_wavelength,
                                params.modulation_max_wavelength, seed);

    const std::size_t n = x1.size() * x2.size();
    std::vector<double> t(n), p(n), e(n), w(n);
    const Freestream& fs = params.freestream;
    for (std::size_t i = 0; i < x1.size(); ++i) {
        const double a = x1[i];
        const double downstream = std::max(a, 0.0);
        const double width = params.wake_width + params.wake_spread * downstream;
        const double deflection = -params.deflection_gain * alpha *
                                  (1.0 - std::exp(-downstream / params.deflection_length));
        const double envelope = a >= 0 ? std::exp(-downstream / params.wake_decay_length)
                                       : std::exp(-a * a / (2 * params.nose_length * params.nose_length));
        // Vortex shedding only develops behind the body.
        const double ripple = std::max(
            0.0, 1.0 + params.heterogeneity_gain * std::abs(alpha) *
                           std::sin(2 * kPi * downstream / params.heterogeneity_wavelength));
        for (std::size_t j = 0; j < x2.size(); ++j) {
            const double b = x2[j];
            const double core =
                std::exp(-(a * a + b * b) / (2 * params.core_radius * params.core_radius));
            const double dz = b - deflection;
            const double plume = envelope * std::exp(-dz * dz / (2 * width * width)) *
                                 (params.wake_width / width) * ripple;
            const double mod =
                params.modulation > 0 ? std::max(0.0, 1.0 + params.modulation * modulation(a, b)) : 1.0;

            const std::size_t k = i * x2.size() + j;
            t[k] = fs.temperature_k +
                   m2 * mod * (params.core_temperature * core + params.wake_temperature * plume);
            p[k] = params.hydrostatic_pressure(b) * (1.0 - m2 * mod * params.core_pressure_drop * core);
            e[k] = m2 * mod * (params.core_tke * core + params.wake_tke * plume);
            w[k] = fs.dissipation +
                   mach * mod * (params.core_dissipation * core + params.wake_dissipation * plume);
        }
    }
    return FieldGrid(std::move(x1), std::move(x2), std::move(t), std::move(p), std::move(e),
                     std::move(w), condition, fs);
}

FieldSample sample_field(const FieldGrid& field, double x1, double x2) {
    if (!field.contains(x1, x2)) {
        const Freestream& fs = field.freestream();
        return {fs.temperature_k, fs.pressure_pa, fs.tke_floor, fs.dissipation};
    }
    const auto& a1 = field.x1();
    const auto& a2 = field.x2();
    const std::size_t i = bracket(a1, x1);
    const std::size_t j = bracket(a2, x2);
    const double u = (x1 - a1[i]) / (a1[i + 1] - a1[i]);
    const double v = (x2 - a2[j]) / (a2[j + 1] - a2[j]);
    const std::size_t k00 = field.index(i, j), k01 = field.index(i, j + 1);
    const std::size_t k10 = field.index(i + 1, j), k11 = field.index(i + 1, j + 1);
    // std::lerp is exact at both ends and for constant data.
    auto lerp = [&](const std::vector<double>& m) {
        return std::lerp(std::lerp(m[k00], m[k01], v), std::lerp(m[k10], m[k11], v), u);
    };
    return {lerp(field.temperature()), lerp(field.pressure()), lerp(field.tke()),
            lerp(field.dissipation())};
}

void export_field(const FieldGrid& field, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write field file " + path.string());
    out << "# axis x1:";
    for (double v : field.x1()) out << ' ' << format_exact(v);
    out << "\n# axis x2:";
    for (double v : field.x2()) out << ' ' << format_exact(v);
    out << "\n# condition M=" << format_exact(field.condition().mach)
        << ", alpha_deg=" << format_exact(field.condition().attack_deg) << '\n';
    const Freestream& fs = field.freestream();
    out << "# freestream T=" << format_exact(fs.temperature_k) << ", P=" << format_exact(fs.pressure_pa)
        << ", E=" << format_exact(fs.tke_floor) << ", W=" << format_exact(fs.dissipation) << '\n';
    out << "# units SI\n";
    for (std::size_t i = 0; i < field.n1(); ++i) {
        for (std::size_t j = 0; j < field.n2(); ++j) {
            const FieldSample s = field.node(i, j);
            out << i << ' ' << j << ' ' << format_exact(s.temperature) << ' '
                << format_exact(s.pressure) << ' ' << format_exact(s.tke) << ' '
                << format_exact(s.dissipation) << '\n';
        }
    }
    if (!out) throw ValidationError("failed writing field file " + path.string());
}

namespace {

std::vector<double> parse_values(const std::string& text, const std::string& where) {
    std::istringstream is(text);
    std::vector<double> out;
    std::string tok;
    while (is >> tok) {
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0') throw ValidationError(where + ": bad number '" + tok + "'");
        out.push_back(v);
    }
    return out;
}

// Parses "k1=v1, k2=v2" into a map.
std::map<std::string, double> parse_assignments(const std::string& text, const std::string& where) {
    std::map<std::string, double> out;
    std::string item;
    std::istringstream is(text);
    while (std::getline(is, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ValidationError(where + ": expected key=value in '" + item + "'");
        std::string key = item.substr(0, eq);
        key.erase(0, key.find_first_not_of(" \t"));
        key.erase(key.find_last_not_of(" \t") + 1);
        out[key] = parse_values(item.substr(eq + 1), where).at(0);
    }
    return out;
}

}  // namespace

FieldGrid import_field(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open field file " + path.string());
    const std::string name = path.string();

    std::vector<double> x1, x2;
    FlightCondition condition;
    bool have_condition = false, have_freestream = false;
    Freestream fs;
    std::vector<double> t, p, e, w;
    std::vector<char> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = name + ":" + std::to_string(line_no);
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string body = line.substr(1);
            if (body.rfind(" axis x1:", 0) == 0) {
                x1 = parse_values(body.substr(9), where);
            } else if (body.rfind(" axis x2:", 0) == 0) {
                x2 = parse_values(body.substr(9), where);
            } else if (body.rfind(" condition ", 0) == 0) {
                const auto kv = parse_assignments(body.substr(11), where);
                if (!kv.count("M") || !kv.count("alpha_deg")) {
                    throw ValidationError(where + ": condition needs M and alpha_deg");
                }
                condition = {kv.at("M"), kv.at("alpha_deg")};
                have_condition = true;
            } else if (body.rfind(" freestream ", 0) == 0) {
                const auto kv = parse_assignments(body.substr(12), where);
                fs = {kv.at("T"), kv.at("P"), kv.count("E") ? kv.at("E") : 1e-6, kv.at("W")};
                have_freestream = true;
            } else if (body.rfind(" units ", 0) == 0) {
                if (body.substr(7) != "SI") throw ValidationError(where + ": only SI units are supported");
            }
            continue;
        }
        if (x1.empty() || x2.empty()) throw ValidationError(where + ": data row before axis headers");
        if (t.empty()) {
            const std::size_t n = x1.size() * x2.size();
            t.assign(n, 0);
            p.assign(n, 0);
            e.assign(n, 0);
            w.assign(n, 0);
            seen.assign(n, 0);
        }
        std::istringstream is(line);
        long i = -1, j = -1;
        double vt, vp, ve, vw;
        if (!(is >> i >> j >> vt >> vp >> ve >> vw)) {
            throw ValidationError(where + ": expected `i j T P E W`");
        }
        if (i < 0 || j < 0 || static_cast<std::size_t>(i) >= x1.size() ||
            static_cast<std::size_t>(j) >= x2.size()) {
            throw ValidationError(where + ": cell index " + cell(static_cast<std::size_t>(std::max(i, 0L)),
                                                                  static_cast<std::size_t>(std::max(j, 0L))) +
                                  " outside the " + std::to_string(x1.size()) + "x" +
                                  std::to_string(x2.size()) + " grid (shape mismatch)");
        }
        const std::size_t k = static_cast<std::size_t>(i) * x2.size() + static_cast<std::size_t>(j);
        if (seen[k]) throw ValidationError(where + ": duplicate cell " + cell(static_cast<std::size_t>(i), static_cast<std::size_t>(j)));
        seen[k] = 1;
        auto cite = [&](const char* what) {
            return where + ": " + what + " at cell " +
                   cell(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        };
        if (!(vt > 0)) throw ValidationError(cite("non-positive temperature"));
        if (!(vp > 0)) throw ValidationError(cite("non-positive pressure"));
        if (!(ve >= 0)) throw ValidationError(cite("negative kinetic energy"));
        if (!(vw > 0)) throw ValidationError(cite("non-positive dissipation rate"));
        t[k] = vt;
        p[k] = vp;
        e[k] = ve;
        w[k] = vw;
    }
    if (x1.empty() || x2.empty()) throw ValidationError(name + ": missing axis headers");
    if (!have_condition) throw ValidationError(name + ": missing condition header");
    const std::size_t expected = x1.size() * x2.size();
    const auto filled = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1));
    if (filled != expected) {
        throw ValidationError(name + ": shape mismatch, " + std::to_string(filled) + " rows for a " +
                              std::to_string(x1.size()) + "x" + std::to_string(x2.size()) + " grid");
    }
    if (!have_freestream) {
        // Mean over the boundary nodes.
        double st = 0, sp = 0, sw = 0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < x1.size(); ++i) {
            for (std::size_t j = 0; j < x2.size(); ++j) {
                if (i != 0 && j != 0 && i + 1 != x1.size() && j + 1 != x2.size()) continue;
                const std::size_t k = i * x2.size() + j;
                st += t[k];
                sp += p[k];
                sw += w[k];
                ++count;
            }
        }
        fs = {st / count, sp / count, 1e-6, sw / count};
    }
    return FieldGrid(std::move(x1), std::move(x2), std::move(t), std::move(p), std::move(e),
                     std::move(w), condition, fs);
}

std::string field_file_name(FlightCondition condition) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "field_M%.3f_a%+.2f.txt", condition.mach, condition.attack_deg);
    return buf;
}

}  // namespace thzag::flowfield
