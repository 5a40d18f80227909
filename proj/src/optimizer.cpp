#include "thzag/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace thzag::optimizer {

namespace {

void require_finite(const RowMatrix& m, const char* what) {
    if (!m.allFinite()) throw NumericalError(std::string("non-finite values in ") + what);
}

void require_finite(const Eigen::VectorXd& v, const char* what) {
    if (!v.allFinite()) throw NumericalError(std::string("non-finite values in ") + what);
}

/// Noise floor L N / A per (slot, band).
RowMatrix noise_floor(const RowMatrix& gain, const RowMatrix& loss, const Eigen::VectorXd& noise) {
    RowMatrix floor(gain.rows(), gain.cols());
    for (Eigen::Index k = 0; k < gain.rows(); ++k)
        for (Eigen::Index i = 0; i < gain.cols(); ++i)
            floor(k, i) = loss(k, i) * noise(i) / gain(k, i);
    return floor;
}

/// Sum of [K df / (lambda ln2) - floor]^+ over all slots and bands.
double allocated(double lambda, const RowMatrix& floor, const Eigen::VectorXd& width, int slots) {
    double total = 0.0;
    for (Eigen::Index k = 0; k < floor.rows(); ++k)
        for (Eigen::Index i = 0; i < floor.cols(); ++i)
            total += std::max(0.0, slots * width(i) / (lambda * kLn2) - floor(k, i));
    return total;
}

/// Integer Mach lattice: values in micro-Mach units divided by their gcd;
/// the floor becomes sum(units) >= threshold.
struct MachLattice {
    std::vector<long long> units;
    long long threshold = 0;

    MachLattice(const FeasibleSets& sets, int slots) {
        long long g = 0;
        for (double m : sets.mach) {
            units.push_back(std::llround(m * 1e6));
            g = std::gcd(g, units.back());
        }
        if (g == 0) g = 1;
        for (auto& u : units) u /= g;
        const double quantum = static_cast<double>(g) * 1e-6;
        threshold = std::max(
            0LL, static_cast<long long>(std::ceil(slots * sets.avg_mach_floor / quantum - 1e-9)));
    }
};

}  // namespace

bool meets_mach_floor(const FeasibleSets& sets, const std::vector<int>& mach_index) {
    const MachLattice lattice(sets, static_cast<int>(mach_index.size()));
    long long sum = 0;
    for (int m : mach_index) sum += lattice.units.at(static_cast<std::size_t>(m));
    return sum >= lattice.threshold;
}

FeasibleSets feasible_sets(const channel::Scenario& scenario) {
    return {scenario.feasible_mach, scenario.feasible_attack_deg, scenario.avg_mach_floor};
}

// ---------------------------------------------------------------------------
// Attenuation table
// ---------------------------------------------------------------------------

AttenuationTable::AttenuationTable(int slots, int mach_count, int attack_count, int bands)
    : slots_(slots), mach_(mach_count), attack_(attack_count), bands_(bands) {
    if (slots <= 0 || mach_count <= 0 || attack_count <= 0 || bands <= 0)
        throw DomainError("attenuation table dimensions must be positive");
    values_.assign(static_cast<std::size_t>(slots) * mach_count * attack_count * bands, 1.0);
}

std::size_t AttenuationTable::offset(int slot, int mach_idx, int attack_idx) const {
    if (slot < 0 || slot >= slots_ || mach_idx < 0 || mach_idx >= mach_ || attack_idx < 0 ||
        attack_idx >= attack_)
        throw DomainError("attenuation table index out of range");
    return ((static_cast<std::size_t>(slot) * mach_ + mach_idx) * attack_ + attack_idx) * bands_;
}

std::span<double> AttenuationTable::row(int slot, int mach_idx, int attack_idx) {
    return {values_.data() + offset(slot, mach_idx, attack_idx), static_cast<std::size_t>(bands_)};
}

std::span<const double> AttenuationTable::row(int slot, int mach_idx, int attack_idx) const {
    return {values_.data() + offset(slot, mach_idx, attack_idx), static_cast<std::size_t>(bands_)};
}

AttenuationTable tabulate(const AttenuationOracle& oracle, const FeasibleSets& sets, int slots,
                          int bands) {
    AttenuationTable table(slots, static_cast<int>(sets.mach.size()),
                           static_cast<int>(sets.attack_deg.size()), bands);
    for (int k = 0; k < slots; ++k)
        for (std::size_t m = 0; m < sets.mach.size(); ++m)
            for (std::size_t a = 0; a < sets.attack_deg.size(); ++a) {
                const std::vector<double> losses = oracle(sets.mach[m], sets.attack_deg[a], k);
                if (static_cast<int>(losses.size()) != bands)
                    throw ValidationError("attenuation oracle returned " +
                                          std::to_string(losses.size()) + " bands, expected " +
                                          std::to_string(bands));
                auto row = table.row(k, static_cast<int>(m), static_cast<int>(a));
                for (int i = 0; i < bands; ++i) {
                    if (!std::isfinite(losses[i]) || losses[i] < 1.0)
                        throw NumericalError("attenuation oracle returned a loss below 1 or non-finite");
                    row[i] = losses[i];
                }
            }
    return table;
}

// ---------------------------------------------------------------------------
// Flight plans
// ---------------------------------------------------------------------------

std::string FlightPlan::summary() const {
    std::string out;
    char buf[48];
    for (std::size_t k = 0; k < mach.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%s%g/%g", k ? ";" : "", mach[k], attack_deg[k]);
        out += buf;
    }
    return out;
}

FlightPlan make_plan(const FeasibleSets& sets, std::vector<int> mach_index,
                     std::vector<int> attack_index) {
    if (mach_index.size() != attack_index.size())
        throw DomainError("flight plan index vectors differ in length");
    FlightPlan plan;
    plan.mach_index = std::move(mach_index);
    plan.attack_index = std::move(attack_index);
    double sum = 0.0;
    for (std::size_t k = 0; k < plan.mach_index.size(); ++k) {
        const int m = plan.mach_index[k], a = plan.attack_index[k];
        if (m < 0 || m >= static_cast<int>(sets.mach.size()) || a < 0 ||
            a >= static_cast<int>(sets.attack_deg.size()))
            throw DomainError("flight plan index outside the feasible sets");
        plan.mach.push_back(sets.mach[m]);
        plan.attack_deg.push_back(sets.attack_deg[a]);
        sum += sets.mach[m];
    }
    plan.average_mach = plan.mach.empty() ? 0.0 : sum / static_cast<double>(plan.mach.size());
    return plan;
}

FlightPlan fixed_plan(const FeasibleSets& sets, int slots) {
    if (sets.mach.empty() || sets.attack_deg.empty()) throw DomainError("empty feasible sets");
    const int m = static_cast<int>(std::max_element(sets.mach.begin(), sets.mach.end()) -
                                   sets.mach.begin());
    int a = 0;
    for (std::size_t j = 0; j < sets.attack_deg.size(); ++j)
        if (sets.attack_deg[j] == 0.0) {
            a = static_cast<int>(j);
            break;
        }
    return make_plan(sets, std::vector<int>(slots, m), std::vector<int>(slots, a));
}

RowMatrix plan_losses(const AttenuationTable& table, const FlightPlan& plan) {
    if (plan.slots() != table.slots()) throw DomainError("plan and table slot counts differ");
    RowMatrix loss(table.slots(), table.bands());
    for (int k = 0; k < table.slots(); ++k) {
        const auto row = table.row(k, plan.mach_index[k], plan.attack_index[k]);
        for (int i = 0; i < table.bands(); ++i) loss(k, i) = row[i];
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Water-filling
// ---------------------------------------------------------------------------

double KktReport::worst() const {
    return std::max({stationarity, budget_complementarity, slackness, primal_feasibility,
                     dual_feasibility});
}

WaterfillSolution waterfill(const RowMatrix& gain, const RowMatrix& loss, double avg_power_w,
                            const Eigen::VectorXd& noise_w, const Eigen::VectorXd& width_hz) {
    const int slots = static_cast<int>(gain.rows());
    const int bands = static_cast<int>(gain.cols());
    if (slots == 0 || bands == 0) throw DomainError("water-filling needs K >= 1 and I >= 1");
    if (loss.rows() != slots || loss.cols() != bands || noise_w.size() != bands ||
        width_hz.size() != bands)
        throw DomainError("water-filling inputs have inconsistent shapes");
    require_finite(gain, "gain");
    require_finite(loss, "turbulence loss");
    require_finite(noise_w, "noise");
    require_finite(width_hz, "bandwidth");
    if (!std::isfinite(avg_power_w)) throw NumericalError("non-finite power budget");
    if (!(avg_power_w > 0)) throw DomainError("water-filling needs Pbar > 0");
    if ((gain.array() <= 0).any()) throw DomainError("water-filling needs A > 0");
    if ((loss.array() < 1).any()) throw DomainError("water-filling needs L >= 1");
    if ((noise_w.array() <= 0).any() || (width_hz.array() <= 0).any())
        throw DomainError("water-filling needs positive noise and bandwidth");

    const RowMatrix floor = noise_floor(gain, loss, noise_w);
    const double budget = slots * avg_power_w;

    // Bracket: at lambda_hi every water level is at or below the lowest floor.
    double lambda_hi = slots * width_hz.maxCoeff() / (kLn2 * floor.minCoeff());
    double lambda_lo = lambda_hi;
    int doublings = 0;
    while (allocated(lambda_lo, floor, width_hz, slots) < budget) {
        lambda_lo *= 0.5;
        if (++doublings > 1000 || !(lambda_lo > 0))
            throw NumericalError("water-filling bracket search did not converge");
    }
    for (int it = 0; it < 300; ++it) {
        const double mid = std::sqrt(lambda_lo * lambda_hi);
        if (!(mid > lambda_lo && mid < lambda_hi)) break;
        if (allocated(mid, floor, width_hz, slots) >= budget)
            lambda_lo = mid;
        else
            lambda_hi = mid;
    }

    // Closed-form polish on the active set: sum_S (K df/(lambda ln2) - floor) = K Pbar.
    double lambda = lambda_lo;
    for (int pass = 0; pass < 64; ++pass) {
        double width_sum = 0.0, floor_sum = 0.0;
        for (int k = 0; k < slots; ++k)
            for (int i = 0; i < bands; ++i)
                if (slots * width_hz(i) / (lambda * kLn2) > floor(k, i)) {
                    width_sum += width_hz(i);
                    floor_sum += floor(k, i);
                }
        const double next = slots * width_sum / (kLn2 * (budget + floor_sum));
        if (!std::isfinite(next) || !(next > 0)) throw NumericalError("water-filling polish failed");
        if (next == lambda) break;
        lambda = next;
    }

    WaterfillSolution out;
    out.lambda = lambda;
    out.power.resize(slots, bands);
    out.mu.resize(slots, bands);
    const double nu = lambda / slots;
    for (int k = 0; k < slots; ++k)
        for (int i = 0; i < bands; ++i) {
            const double p = slots * width_hz(i) / (lambda * kLn2) - floor(k, i);
            out.power(k, i) = std::max(0.0, p);
            out.mu(k, i) = p > 0 ? 0.0 : std::max(0.0, nu - width_hz(i) / (kLn2 * floor(k, i)));
        }
    require_finite(out.power, "water-filling power");
    out.kkt = check_kkt(out, gain, loss, noise_w, width_hz, avg_power_w);
    return out;
}

KktReport check_kkt(const WaterfillSolution& s, const RowMatrix& gain, const RowMatrix& loss,
                    const Eigen::VectorXd& noise_w, const Eigen::VectorXd& width_hz,
                    double avg_power_w) {
    const int slots = static_cast<int>(gain.rows());
    const int bands = static_cast<int>(gain.cols());
    const RowMatrix floor = noise_floor(gain, loss, noise_w);
    const double nu = s.lambda / slots;
    const double scale = std::abs(nu) > 0 ? std::abs(nu) : 1.0;

    KktReport r;
    double power_sum = 0.0, min_power = 0.0, min_mu = 0.0;
    for (int k = 0; k < slots; ++k)
        for (int i = 0; i < bands; ++i) {
            const double p = s.power(k, i), mu = s.mu(k, i);
            power_sum += p;
            min_power = std::min(min_power, p);
            min_mu = std::min(min_mu, mu);
            // d/dP of (1/K) sum df log2(1 + P/floor), with the 1/K folded into nu.
            const double grad = width_hz(i) / (kLn2 * (floor(k, i) + p));
            r.stationarity = std::max(r.stationarity, std::abs(grad - nu + mu) / scale);
            r.slackness = std::max(r.slackness, std::abs(mu * p) / (scale * avg_power_w));
        }
    const double gap = power_sum / slots - avg_power_w;
    r.budget_complementarity = std::abs(gap) / avg_power_w * (s.lambda > 0 ? 1.0 : 0.0);
    r.primal_feasibility = std::max(std::max(0.0, gap), std::max(0.0, -min_power)) / avg_power_w;
    r.dual_feasibility = std::max(std::max(0.0, -s.lambda) / scale, std::max(0.0, -min_mu) / scale);
    return r;
}

RowMatrix uniform_power(int slots, int bands, double avg_power_w) {
    return RowMatrix::Constant(slots, bands, avg_power_w / bands);
}

std::vector<double> slot_capacities(const channel::LinkBudget& budget, const RowMatrix& loss,
                                    const RowMatrix& power) {
    std::vector<double> out(budget.slots(), 0.0);
    for (int k = 0; k < budget.slots(); ++k) {
        double c = 0.0;
        for (int i = 0; i < budget.bands(); ++i)
            c += budget.width_hz(i) *
                 std::log2(1.0 + budget.gain(k, i) * power(k, i) / (loss(k, i) * budget.noise_w(i)));
        out[k] = c;
    }
    return out;
}

double total_capacity(const channel::LinkBudget& budget, const RowMatrix& loss,
                      const RowMatrix& power) {
    const std::vector<double> c = slot_capacities(budget, loss, power);
    return std::accumulate(c.begin(), c.end(), 0.0);
}

double capacity_upper_bound(const channel::LinkBudget& budget) {
    const RowMatrix gain = RowMatrix::Constant(budget.slots(), budget.bands(), budget.antenna_gain);
    const RowMatrix ones = RowMatrix::Ones(budget.slots(), budget.bands());
    const WaterfillSolution s =
        waterfill(gain, ones, budget.avg_power_w, budget.noise_w, budget.width_hz);
    double total = 0.0;
    for (int k = 0; k < budget.slots(); ++k)
        for (int i = 0; i < budget.bands(); ++i)
            total += budget.width_hz(i) *
                     std::log2(1.0 + budget.antenna_gain * s.power(k, i) / budget.noise_w(i));
    return total;
}

// ---------------------------------------------------------------------------
// Attitude search
// ---------------------------------------------------------------------------

FlightPlan attitude_search(const RowMatrix& power, const channel::LinkBudget& budget,
                           const AttenuationTable& table, const FeasibleSets& sets) {
    const int slots = budget.slots();
    const int n_mach = static_cast<int>(sets.mach.size());
    const int n_attack = static_cast<int>(sets.attack_deg.size());
    if (n_mach == 0 || n_attack == 0) throw DomainError("empty feasible sets");
    if (table.slots() != slots || table.mach_count() != n_mach || table.attack_count() != n_attack ||
        table.bands() != budget.bands())
        throw DomainError("attenuation table does not match the scenario");
    const double max_mach = *std::max_element(sets.mach.begin(), sets.mach.end());
    if (sets.avg_mach_floor > max_mach)
        throw InfeasibleError("average Mach floor " + format_exact(sets.avg_mach_floor) +
                              " exceeds the largest feasible Mach " + format_exact(max_mach));

    const MachLattice lattice(sets, slots);
    const std::vector<long long>& units = lattice.units;
    const long long threshold = lattice.threshold;

    // Candidate order encodes the tie-breaking rule.
    struct Candidate {
        int mach, attack;
    };
    std::vector<Candidate> order;
    for (int m = 0; m < n_mach; ++m)
        for (int a = 0; a < n_attack; ++a) order.push_back({m, a});
    std::stable_sort(order.begin(), order.end(), [&](const Candidate& x, const Candidate& y) {
        if (sets.mach[x.mach] != sets.mach[y.mach]) return sets.mach[x.mach] < sets.mach[y.mach];
        return std::abs(sets.attack_deg[x.attack]) < std::abs(sets.attack_deg[y.attack]);
    });

    // Per-slot capacity for every candidate.
    std::vector<std::vector<double>> value(slots, std::vector<double>(order.size()));
    for (int k = 0; k < slots; ++k)
        for (std::size_t c = 0; c < order.size(); ++c) {
            const auto loss = table.row(k, order[c].mach, order[c].attack);
            double cap = 0.0;
            for (int i = 0; i < budget.bands(); ++i)
                cap += budget.width_hz(i) *
                       std::log2(1.0 + budget.gain(k, i) * power(k, i) / (loss[i] * budget.noise_w(i)));
            value[k][c] = cap;
        }

    // Backward DP over the capped cumulative Mach sum.
    const double neg_inf = -std::numeric_limits<double>::infinity();
    const std::size_t states = static_cast<std::size_t>(threshold) + 1;
    std::vector<double> next(states, neg_inf), cur(states);
    next[threshold] = 0.0;
    std::vector<std::vector<int>> choice(slots, std::vector<int>(states, -1));
    for (int k = slots - 1; k >= 0; --k) {
        for (std::size_t s = 0; s < states; ++s) {
            double best = neg_inf;
            int arg = -1;
            for (std::size_t c = 0; c < order.size(); ++c) {
                const long long t = std::min<long long>(threshold, static_cast<long long>(s) +
                                                                        units[order[c].mach]);
                const double tail = next[static_cast<std::size_t>(t)];
                if (tail == neg_inf) continue;
                const double v = value[k][c] + tail;
                if (v > best) {
                    best = v;
                    arg = static_cast<int>(c);
                }
            }
            cur[s] = best;
            choice[k][s] = arg;
        }
        std::swap(cur, next);
    }
    if (next[0] == neg_inf) throw InfeasibleError("no flight plan satisfies the average Mach floor");

    std::vector<int> mach_index(slots), attack_index(slots);
    long long s = 0;
    for (int k = 0; k < slots; ++k) {
        const int c = choice[k][static_cast<std::size_t>(s)];
        mach_index[k] = order[c].mach;
        attack_index[k] = order[c].attack;
        s = std::min(threshold, s + units[order[c].mach]);
    }
    return make_plan(sets, std::move(mach_index), std::move(attack_index));
}

// ---------------------------------------------------------------------------
// Alternating optimization
// ---------------------------------------------------------------------------

std::uint64_t hash_matrix(const RowMatrix& m) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t b = 0; b < static_cast<std::size_t>(m.size()) * sizeof(double); ++b) {
        h ^= bytes[b];
        h *= 0x100000001b3ULL;
    }
    return h;
}

void IterationTrace::write_csv(std::ostream& out) const {
    out << "iter,total_capacity_bps,lambda,plan_summary\n";
    for (const IterationRecord& r : records)
        out << r.iteration << ',' << format_exact(r.total_capacity) << ',' << format_exact(r.lambda)
            << ',' << r.plan.summary() << '\n';
}

JointResult joint_optimize(const channel::LinkBudget& budget, const AttenuationTable& table,
                           const FeasibleSets& sets, const JointOptions& options) {
    if (options.max_iter < 1) throw DomainError("joint optimization needs max_iter >= 1");
    JointResult out;
    out.capacity_bound = capacity_upper_bound(budget);
    const double delta = options.delta > 0 ? options.delta : 1e-6 * out.capacity_bound;
    out.trace.delta = delta;

    const double max_mach = *std::max_element(sets.mach.begin(), sets.mach.end());
    if (sets.avg_mach_floor > max_mach)
        throw InfeasibleError("average Mach floor " + format_exact(sets.avg_mach_floor) +
                              " exceeds the largest feasible Mach " + format_exact(max_mach));

    FlightPlan plan = fixed_plan(sets, budget.slots());
    RowMatrix power = uniform_power(budget.slots(), budget.bands(), budget.avg_power_w);
    double previous = total_capacity(budget, plan_losses(table, plan), power);
    out.trace.records.push_back({0, previous, 0.0, hash_matrix(power), plan});

    WaterfillSolution solution;
    for (int it = 1; it <= options.max_iter; ++it) {
        solution = waterfill(budget.gain, plan_losses(table, plan), budget.avg_power_w,
                             budget.noise_w, budget.width_hz);
        // Once the allocation has converged, rounding can make the fresh
        // water-filling a hair worse than the incumbent power; keep the
        // incumbent then.
        if (total_capacity(budget, plan_losses(table, plan), solution.power) >= previous)
            power = solution.power;
        FlightPlan candidate = attitude_search(power, budget, table, sets);
        // Keep the incumbent plan when the DP finds no strict improvement so
        // that ties cannot make the iteration cycle.
        const double with_candidate = total_capacity(budget, plan_losses(table, candidate), power);
        const double with_incumbent = total_capacity(budget, plan_losses(table, plan), power);
        if (with_candidate > with_incumbent) plan = std::move(candidate);
        const double current = std::max(with_candidate, with_incumbent);
        out.trace.records.push_back({it, current, solution.lambda, hash_matrix(power), plan});
        if (!std::isfinite(current)) throw NumericalError("capacity became non-finite");
        if (std::abs(current - previous) < delta) {
            out.trace.converged = true;
            break;
        }
        previous = current;
    }
    // Final power matches the final plan.
    solution = waterfill(budget.gain, plan_losses(table, plan), budget.avg_power_w, budget.noise_w,
                         budget.width_hz);
    out.solution = std::move(solution);
    out.plan = std::move(plan);
    return out;
}

}  // namespace thzag::optimizer
