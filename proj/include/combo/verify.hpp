#pragma once

// Mechanical checks of the conservative-critic theory against exact
// dynamic-programming computations. Every check returns a report; failed
// reports carry a witness with the numbers needed to reproduce them.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "combo/baselines.hpp"
#include "combo/combo.hpp"
#include "combo/dataset.hpp"
#include "combo/mdp.hpp"
#include "combo/model.hpp"
#include "combo/serialize.hpp"

namespace combo {

/// High-probability concentration constants for rewards and dynamics.
struct ConcentrationConfig {
    double delta = 0.05;
    double c_r = 0.0;
    double c_p = 0.0;
    double c_rt = 0.0;

    /// c_r = R_max sqrt(ln(2/delta) / 2), c_p = sqrt(2 |S| ln(2/delta)),
    /// c_rt = ((1 - gamma) c_r + 2 gamma c_p R_max) / R_max.
    static ConcentrationConfig defaults(const TabularMDP& template_mdp, double delta = 0.05);
    /// delta in (0, 1); constants finite and non-negative (zero stands for
    /// the infinite-data limit).
    void validate() const;
};

struct VerificationReport {
    std::string check_name;
    bool passed = false;
    /// "pass", "fail", or a non-failing qualifier such as "inconclusive",
    /// "boundary", "not-applicable" or "premise-unmet".
    std::string status;
    double margin = 0.0;
    double tolerance = 0.0;
    std::uint64_t seed = 0;
    Json witness = Json::object();
};

/// status is "pass" or "fail" from `passed`.
VerificationReport make_report(std::string name, bool passed, double margin, double tolerance,
                               std::uint64_t seed = 0);

std::string report_to_jsonl(const VerificationReport& report);
std::string reports_csv_header();
std::string report_to_csv_row(const VerificationReport& report);

/// Random (rho, d) pairs on 2..12 cells (Dirichlet, near-disjoint with a
/// 1e-6 floor, or identical) on an 11-point f grid:
///   nu >= -1e-12, nu non-decreasing in f, nu <= 1e-12 exactly when f = 0
///   or TV(rho, d) <= 1e-12, nu~ <= 1e-12, and nu~ < 0 when TV > 1e-6, f < 1.
VerificationReport check_interpolation_lemma(int samples, std::uint64_t seed);

/// || Q_hat - (Q^pi_{M_f} - beta S^pi_{M_f}[penalty]) ||_inf <= 1e-8.
VerificationReport check_pointwise_identity(const ComboSolveResult& solve, const EmpiricalMDP& empirical,
                                            const LearnedModel& model, const TabularPolicy& policy, double f,
                                            double beta);

/// Computes beta* and checks E_{mu0,pi}[Q_hat] <= E_{mu0,pi}[Q^pi] + 1e-8 at
/// beta = 1.01 beta* + 1. With `expect_failure_at_zero` the unpenalized
/// critic must also overestimate.
VerificationReport check_expected_lower_bound(const TabularMDP& truth, const EmpiricalMDP& empirical,
                                              const LearnedModel& model, const TabularPolicy& policy,
                                              const ComboConfig& config, const OccupancyMeasure& data_dist,
                                              bool expect_failure_at_zero = false);

/// nu~(rho, d, f) < 0 when TV(rho, d) > 1e-9 and f < 1.
VerificationReport check_dataset_overestimation(const OccupancyMeasure& rho, const OccupancyMeasure& data_dist,
                                                double f);

/// E_rho[pi / pi_b] - E_{d(s), pi}[pi / pi_b] with pi_b floored at epsilon_pb.
double prop2_condition(const TabularPolicy& policy, const TabularPolicy& behavior, const OccupancyMeasure& rho,
                       const OccupancyMeasure& data_state_dist, double epsilon_pb = 1e-6);

/// Dataset-averaged critic values of the two methods at f = 1.
struct Prop2Values {
    double delta_combo = 0.0;
    double delta_cql = 0.0;
    double condition = 0.0;
};

Prop2Values prop2_values(const TabularMDP& template_mdp, const Dataset& dataset, const TabularPolicy& policy,
                         double beta, double epsilon_pb = 1e-6);

/// Whenever the condition is <= 0, Delta_COMBO >= Delta_CQL - 1e-8. Only
/// the shape, discount and mu0 of `truth` are read.
VerificationReport check_prop2_ordering(const TabularMDP& truth, const Dataset& dataset, const TabularPolicy& policy,
                                        double beta, double epsilon_pb = 1e-6);

/// sum_a pi (pi / pi_b - 1) per state.
Vector d_cql_distance(const TabularPolicy& policy, const TabularPolicy& behavior, double epsilon_pb = 1e-6);

/// Occupancy under which the dynamics and reward terms of alpha are taken.
enum class AlphaBasis {
    /// d^pi of the interpolant; the terms then bound the return gap exactly.
    Interpolant,
    /// d^pi of the auxiliary MDP.
    Auxiliary,
};

struct InterpolantBound {
    double j_interpolant = 0.0;
    double j_aux = 0.0;
    double alpha = 0.0;
    double model_term = 0.0;
    double dynamics_term = 0.0;
    double reward_term = 0.0;
};

InterpolantBound interpolant_return_bound(const TabularMDP& m1, const TabularMDP& m2, const TabularMDP& aux,
                                          double f, const TabularPolicy& policy,
                                          AlphaBasis basis = AlphaBasis::Interpolant);

/// |J(pi, M_f) - J(pi, aux)| <= alpha.
VerificationReport check_interpolant_return_bound(const TabularMDP& m1, const TabularMDP& m2, const TabularMDP& aux,
                                                  double f, const TabularPolicy& policy,
                                                  AlphaBasis basis = AlphaBasis::Interpolant);

struct ZetaBreakdown {
    double sampling_term = 0.0;
    double behavior_term = 0.0;
    double reward_term = 0.0;
    double model_term = 0.0;
    /// nu(rho^pi_out, f) - nu(rho^behavior, f).
    double c = 0.0;
    double penalty_term = 0.0;
    double zeta = 0.0;
};

ZetaBreakdown zeta_breakdown(const TabularMDP& truth, const Dataset& dataset, const LearnedModel& model,
                             const TabularPolicy& pi_out, const TabularPolicy& behavior, const ComboConfig& config,
                             const ConcentrationConfig& conc);

double compute_zeta(const TabularMDP& truth, const Dataset& dataset, const LearnedModel& model,
                    const TabularPolicy& pi_out, const TabularPolicy& behavior, const ComboConfig& config,
                    const ConcentrationConfig& conc);

/// Runs COMBO and checks J(pi_out) >= J(pi_b) - zeta. The behavior policy
/// defaults to behavior cloning of the dataset.
VerificationReport check_safe_policy_improvement(const TabularMDP& truth, const Dataset& dataset,
                                                 const ComboConfig& config, const ConcentrationConfig& conc,
                                                 std::uint64_t seed,
                                                 const std::optional<TabularPolicy>& behavior = std::nullopt);

}  // namespace combo
