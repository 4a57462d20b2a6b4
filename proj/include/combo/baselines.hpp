#pragma once

// Reference algorithms: tabular CQL, an uncertainty-penalized model planner,
// Dyna-style policy iteration on the mixed MDP, behavior cloning and the
// exact value-iteration optimum.

#include <utility>

#include "combo/combo.hpp"
#include "combo/dataset.hpp"
#include "combo/mdp.hpp"
#include "combo/model.hpp"

namespace combo {

struct BaselineConfig {
    double beta_cql = 1.0;
    double lambda_mopo = 1.0;
    double f = 0.5;
    ImprovementKind improvement = ImprovementKind::Greedy;
    double temperature = 1.0;
    double eval_tol = 1e-8;
    /// 0 selects the same budget rule as ComboConfig.
    int max_eval_iters = 0;
    int outer_iters = 10;
    /// Floor on behavior probabilities in the CQL penalty.
    double epsilon_pb = 1e-6;
    /// Action distribution whose values CQL pushes down.
    MuChoice cql_mu = MuChoice::CurrentPolicy;
    /// Bellman-optimality residual for value iteration.
    double vi_tol = 1e-10;

    void validate() const;
    bool operator==(const BaselineConfig&) const = default;
};

void apply_baseline_field(BaselineConfig& config, const std::string& key, const std::string& value);
std::string baseline_config_to_key_values(const BaselineConfig& config);

/// (mu(a | s) - pi_b(a | s)) / max(pi_b(a | s), epsilon_pb) with mu the
/// configured pushed-down distribution.
Matrix cql_penalty(const TabularPolicy& policy, const TabularPolicy& behavior, const BaselineConfig& config);

/// Cells where a positive policy probability met a behavior probability
/// below the floor.
int count_floored_cells(const TabularPolicy& policy, const TabularPolicy& behavior, double epsilon_pb);

struct CqlSolve {
    QTable q;
    int iters_used = 0;
    int floored_cells = 0;
};

/// Fixed point of Q <- B^pi_empirical Q - beta_cql * penalty by iteration.
CqlSolve cql_solve(const EmpiricalMDP& empirical, const TabularPolicy& policy, const TabularPolicy& behavior,
                   const BaselineConfig& config);
QTable cql_policy_evaluation(const EmpiricalMDP& empirical, const TabularPolicy& policy,
                             const TabularPolicy& behavior, const BaselineConfig& config);
/// Q^pi_empirical - beta_cql * S^pi[penalty] by a direct solve.
QTable cql_closed_form(const EmpiricalMDP& empirical, const TabularPolicy& policy, const TabularPolicy& behavior,
                       const BaselineConfig& config);

/// Policy iteration against the CQL critic from the uniform policy.
TabularPolicy cql_policy_optimization(const EmpiricalMDP& empirical, const TabularPolicy& behavior,
                                      const BaselineConfig& config);

/// Greedy policy of the model with reward r_hat - lambda * u, solved by value iteration.
TabularPolicy mopo_policy_optimization(const LearnedModel& model, const Matrix& uncertainty,
                                       const BaselineConfig& config, const TabularMDP& truth_for_eval);

/// COMBO's outer loop with beta = 0 and rho from the model occupancy.
/// `truth_for_eval` is not read.
TabularPolicy dyna_policy_optimization(const EmpiricalMDP& empirical, const LearnedModel& model,
                                       const BaselineConfig& config, const TabularMDP& truth_for_eval);

/// The ComboConfig that Dyna runs with.
ComboConfig dyna_combo_config(const BaselineConfig& config);

/// N(s, a) / N(s); uniform rows on unvisited states.
TabularPolicy behavior_cloning(const Dataset& dataset);

/// Optimal Q for the MDP's dynamics under an arbitrary reward table,
/// with the greedy policy (lowest-index tie-break). Value iteration to
/// `tol` followed by exact policy-iteration polishing.
std::pair<TabularPolicy, QTable> solve_optimal(const TabularMDP& mdp, const Matrix& reward, double tol);

std::pair<TabularPolicy, QTable> value_iteration_oracle(const TabularMDP& mdp, double tol);

}  // namespace combo
