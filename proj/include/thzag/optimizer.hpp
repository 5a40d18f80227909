// Joint power / flight-configuration optimization.
//
//   Q1  power allocation for a fixed plan: generalized water-filling,
//       P = [K df / (lambda ln 2) - L N / A]^+ with sum P = K Pbar.
//   Q2  flight plan for fixed power: exact DP over slots with the cumulative
//       Mach sum as state (finite lattice because the Mach set is finite).
//   Q0  alternation of Q1 and Q2; the total capacity never decreases.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "thzag/channel.hpp"
#include "thzag/common.hpp"

namespace thzag::optimizer {

struct FeasibleSets {
    std::vector<double> mach;
    std::vector<double> attack_deg;
    double avg_mach_floor = 0.0;
};

FeasibleSets feasible_sets(const channel::Scenario& scenario);

/// Linear turbulence loss per band for every (slot, Mach, attack) candidate.
class AttenuationTable {
public:
    AttenuationTable() = default;
    AttenuationTable(int slots, int mach_count, int attack_count, int bands);

    int slots() const { return slots_; }
    int mach_count() const { return mach_; }
    int attack_count() const { return attack_; }
    int bands() const { return bands_; }

    std::span<double> row(int slot, int mach_idx, int attack_idx);
    std::span<const double> row(int slot, int mach_idx, int attack_idx) const;

private:
    std::size_t offset(int slot, int mach_idx, int attack_idx) const;
    int slots_ = 0, mach_ = 0, attack_ = 0, bands_ = 0;
    std::vector<double> values_;
};

/// (Mach, attack_deg, slot) -> linear loss per band. Must be pure.
using AttenuationOracle = std::function<std::vector<double>(double, double, int)>;

AttenuationTable tabulate(const AttenuationOracle& oracle, const FeasibleSets& sets, int slots,
                          int bands);

struct FlightPlan {
    std::vector<int> mach_index;
    std::vector<int> attack_index;
    std::vector<double> mach;
    std::vector<double> attack_deg;
    double average_mach = 0.0;

    int slots() const { return static_cast<int>(mach.size()); }
    std::string summary() const;  ///< "M/alpha;M/alpha;..."
    bool operator==(const FlightPlan& other) const {
        return mach_index == other.mach_index && attack_index == other.attack_index;
    }
};

FlightPlan make_plan(const FeasibleSets& sets, std::vector<int> mach_index,
                     std::vector<int> attack_index);

/// True when (1/K) sum M_k >= Mbar, evaluated exactly on the integer Mach
/// lattice used by attitude_search.
bool meets_mach_floor(const FeasibleSets& sets, const std::vector<int>& mach_index);

/// Max Mach and 0 deg attack (first attack value when 0 is not feasible).
FlightPlan fixed_plan(const FeasibleSets& sets, int slots);

/// K x I linear losses for a plan.
RowMatrix plan_losses(const AttenuationTable& table, const FlightPlan& plan);

struct KktReport {
    double stationarity = 0.0;
    double budget_complementarity = 0.0;
    double slackness = 0.0;
    double primal_feasibility = 0.0;
    double dual_feasibility = 0.0;

    double worst() const;
    bool pass(double tolerance = 1e-8) const { return worst() <= tolerance; }
};

struct WaterfillSolution {
    RowMatrix power;  ///< K x I, W
    double lambda = 0.0;
    RowMatrix mu;  ///< K x I non-negativity multipliers
    KktReport kkt;
};

WaterfillSolution waterfill(const RowMatrix& gain, const RowMatrix& loss, double avg_power_w,
                            const Eigen::VectorXd& noise_w, const Eigen::VectorXd& width_hz);

/// Residuals of the KKT system for a candidate solution (power, lambda, mu),
/// each scaled to be dimensionless.
KktReport check_kkt(const WaterfillSolution& solution, const RowMatrix& gain,
                    const RowMatrix& loss, const Eigen::VectorXd& noise_w,
                    const Eigen::VectorXd& width_hz, double avg_power_w);

/// P = Pbar / I in every slot and band.
RowMatrix uniform_power(int slots, int bands, double avg_power_w);

/// Per-slot capacity [bit/s].
std::vector<double> slot_capacities(const channel::LinkBudget& budget, const RowMatrix& loss,
                                    const RowMatrix& power);
double total_capacity(const channel::LinkBudget& budget, const RowMatrix& loss,
                      const RowMatrix& power);

/// Loss-free capacity bound: water-filling with A = G_Tx G_Rx and L = 1.
double capacity_upper_bound(const channel::LinkBudget& budget);

/// Exhaustive per-slot evaluation plus exact lattice DP under the average
/// Mach floor. Ties go to smaller Mach, then smaller |attack|, then earlier
/// enumeration order.
FlightPlan attitude_search(const RowMatrix& power, const channel::LinkBudget& budget,
                           const AttenuationTable& table, const FeasibleSets& sets);

struct IterationRecord {
    int iteration = 0;
    double total_capacity = 0.0;
    double lambda = 0.0;
    std::uint64_t power_hash = 0;
    FlightPlan plan;
};

struct IterationTrace {
    std::vector<IterationRecord> records;
    double delta = 0.0;
    bool converged = false;

    /// `iter,total_capacity_bps,lambda,plan_summary`
    void write_csv(std::ostream& out) const;
};

struct JointOptions {
    double delta = 0.0;  ///< <= 0 selects 1e-6 * C_max
    int max_iter = 50;
};

struct JointResult {
    IterationTrace trace;
    WaterfillSolution solution;
    FlightPlan plan;
    double capacity_bound = 0.0;
};

JointResult joint_optimize(const channel::LinkBudget& budget, const AttenuationTable& table,
                           const FeasibleSets& sets, const JointOptions& options = {});

std::uint64_t hash_matrix(const RowMatrix& m);

}  // namespace thzag::optimizer
