#pragma once

// Conservative offline model-based policy optimization on tabular MDPs.
//
// The critic is the fixed point of
//
//     Q <- (B_f^pi Q) - beta * (rho - d) / d_f
//
// where B_f^pi is the Bellman operator of the f-interpolant between the
// empirical MDP (weight f) and the learned model (weight 1 - f), rho is the
// distribution whose Q-values are pushed down, d the dataset distribution,
// and d_f = f d + (1 - f) d^mu_model the distribution the backups are
// sampled from. The policy is then improved greedily (or by a Boltzmann
// step) against that critic on the states rho visits.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "combo/dataset.hpp"
#include "combo/mdp.hpp"
#include "combo/model.hpp"

namespace combo {

enum class RhoChoice { ModelOccupancy, DF };
enum class MuChoice { UniformActions, CurrentPolicy };
enum class SolveMode { Exact, Sampled };
enum class QSolver { Iterative, ClosedForm };
enum class ImprovementKind { Greedy, Softmax };

struct ComboConfig {
    double beta = 1.0;
    double f = 0.5;
    RhoChoice rho_choice = RhoChoice::ModelOccupancy;
    MuChoice mu_choice = MuChoice::CurrentPolicy;
    int rollout_len = 5;
    /// Rollouts drawn per outer iteration in Sampled mode.
    int n_rollouts = 2000;
    SolveMode solve_mode = SolveMode::Exact;
    QSolver q_solver = QSolver::Iterative;
    double eval_tol = 1e-8;
    /// 0 selects 10 * ceil(ln(1 / eval_tol) / (1 - gamma)).
    int max_eval_iters = 0;
    ImprovementKind improvement = ImprovementKind::Greedy;
    double temperature = 1.0;
    int outer_iters = 10;
    double epsilon_df = 1e-8;
    /// Pseudo-count used when run_combo fits its model.
    double model_smoothing = 0.0;

    void validate() const;
    int eval_iteration_budget(double gamma) const;
    std::uint64_t hash() const;

    bool operator==(const ComboConfig&) const = default;
};

std::string to_string(RhoChoice v);
std::string to_string(MuChoice v);
std::string to_string(SolveMode v);
std::string to_string(QSolver v);
std::string to_string(ImprovementKind v);

/// Flat key-value form; every field is written. Parsing starts from the
/// defaults, so a file may list any subset of keys.
std::string config_to_key_values(const ComboConfig& config);
ComboConfig config_from_key_values(const std::string& text);
/// Applies one "key=value" override; throws ValidationError on unknown keys.
void apply_config_field(ComboConfig& config, const std::string& key, const std::string& value);

/// Transitions simulated in a learned model.
struct RolloutBuffer {
    std::vector<Transition> transitions;
    /// Step index within its rollout for each transition.
    std::vector<int> steps;
    std::string start_state_source = "dataset-states";
    std::string rollout_policy_id;
    int horizon = 0;
};

/// Start states drawn uniformly from the dataset's transitions; each rollout
/// runs `h` steps under `rollout_policy` in the model.
RolloutBuffer generate_model_rollouts(const LearnedModel& model, const Dataset& dataset,
                                      const TabularPolicy& rollout_policy, int h, int n_rollouts,
                                      std::uint64_t seed, std::string policy_id = "rollout");

/// Frequency of (s, a) in the buffer with step t weighted by gamma^t.
OccupancyMeasure rollout_distribution(const RolloutBuffer& buffer, int n_states, int n_actions, double gamma);

/// Analytic counterpart of rollout_distribution: start from the dataset state
/// marginal, truncate after h steps.
OccupancyMeasure truncated_model_occupancy(const LearnedModel& model, const TabularPolicy& policy,
                                           const Dataset& dataset, int h);

/// The policy used for model rollouts under the configured mu choice.
TabularPolicy rollout_policy(const ComboConfig& config, const TabularPolicy& policy);

/// d^mu in the model (exact, from mu0, untruncated).
OccupancyMeasure model_rollout_distribution(const LearnedModel& model, const TabularPolicy& policy,
                                            const ComboConfig& config);

/// f d + (1 - f) model_dist.
OccupancyMeasure df_mixture(const OccupancyMeasure& data_dist, const OccupancyMeasure& model_dist, double f);

/// ModelOccupancy: d^pi_model(s) pi(a | s). DF: the d_f mixture itself.
OccupancyMeasure rho_distribution(const LearnedModel& model, const TabularPolicy& policy,
                                  const ComboConfig& config, const OccupancyMeasure& data_dist);

/// (rho - d) / max(d_f, epsilon_df), with 0 where rho = d = 0.
Matrix penalty_table(const OccupancyMeasure& rho, const OccupancyMeasure& data_dist,
                     const OccupancyMeasure& df, double epsilon_df);

/// Expected penalty under rho with d_f = f d + (1 - f) rho:
///   nu(rho, f) = E_rho[(rho - d) / d_f].
double nu(const OccupancyMeasure& rho, const OccupancyMeasure& data_dist, double f, double epsilon_df = 1e-8);

/// The same penalty in expectation under the dataset distribution:
///   nu~(rho, d, f) = E_d[(rho - d) / d_f].
double nu_tilde(const OccupancyMeasure& rho, const OccupancyMeasure& data_dist, double f,
                double epsilon_df = 1e-8);

/// Everything the critic recursion needs for a fixed policy.
struct ComboTerms {
    OccupancyMeasure rho;
    OccupancyMeasure df;
    Matrix penalty;
    TabularMDP interpolant;
};

/// Precomputed rho and model distribution for Sampled mode.
struct SampledDistributions {
    OccupancyMeasure rho;
    OccupancyMeasure model_dist;
};

ComboTerms prepare_combo_terms(const EmpiricalMDP& empirical, const LearnedModel& model,
                               const TabularPolicy& policy, const OccupancyMeasure& data_dist,
                               const ComboConfig& config, const SampledDistributions* sampled = nullptr);

struct ComboSolveResult {
    QTable q;
    Matrix penalty;
    /// E_rho[penalty] for the distributions actually used.
    double nu_value = 0.0;
    int iters_used = 0;
    bool converged = false;
    /// Last sup-norm change of the iterate (0 for the closed form).
    double last_delta = 0.0;
    OccupancyMeasure rho_used;
    OccupancyMeasure df_used;
};

/// Solves the conservative critic with the configured solver. Iterative
/// mode runs the recursion from Q = 0 and throws ConvergenceError if the
/// budget runs out; ClosedForm solves (I - gamma P_f^pi) Q = r_f - beta pen.
ComboSolveResult combo_policy_evaluation(const EmpiricalMDP& empirical, const LearnedModel& model,
                                         const TabularPolicy& policy, const OccupancyMeasure& data_dist,
                                         const ComboConfig& config,
                                         const SampledDistributions* sampled = nullptr);

/// Both solvers on already prepared terms.
ComboSolveResult solve_combo_iterative(const ComboTerms& terms, const TabularPolicy& policy,
                                       const ComboConfig& config);
ComboSolveResult solve_combo_closed_form(const ComboTerms& terms, const TabularPolicy& policy,
                                         const ComboConfig& config);

/// Greedy (lowest-index tie-break) or Boltzmann policy from the critic on
/// states where rho has mass; other states keep `previous`'s row.
TabularPolicy combo_policy_improvement(const ComboSolveResult& result, const ComboConfig& config,
                                       const TabularPolicy& previous);

/// E_rho[Q] - E_d[Q], the offline model-selection statistic.
double regularizer_value(const ComboSolveResult& result, const OccupancyMeasure& data_dist);

struct ComboRun {
    TabularPolicy policy;
    std::vector<ComboSolveResult> iterations;
    /// True return after each improvement step; empty when not logged.
    std::vector<double> true_returns;
    LearnedModel model;
};

using ReturnProbe = std::function<double(const TabularPolicy&)>;

/// The outer loop on an already fitted model: starts from the uniform
/// policy and alternates evaluation and improvement `outer_iters` times.
/// `probe`, when set, is called on each new policy for logging only.
/// Sampled mode draws rollout start states from `rollout_source`.
ComboRun combo_outer_loop(const EmpiricalMDP& empirical, const LearnedModel& model,
                          const OccupancyMeasure& data_dist, const ComboConfig& config, std::uint64_t seed,
                          const ReturnProbe& probe = {}, const Dataset* rollout_source = nullptr);

/// Fits the model once from the dataset, then runs combo_outer_loop. Only
/// the shape, discount, mu0 and r_max of `truth_for_eval` enter the
/// algorithm; its dynamics and rewards are read only to log true returns,
/// and not at all when `log_true_returns` is false.
ComboRun run_combo(const TabularMDP& truth_for_eval, const Dataset& dataset, const ComboConfig& config,
                   std::uint64_t seed, bool log_true_returns = true);

struct MinBetaAnalysis {
    double beta_star = 0.0;
    /// E_{mu0,pi}[Q_hat at beta = 0] - E_{mu0,pi}[Q^pi in the truth].
    double overestimation = 0.0;
    /// d/d beta of E_{mu0,pi}[Q_hat]; the critic is affine in beta.
    double slope = 0.0;
    /// E_rho[penalty].
    double nu_value = 0.0;
};

/// Smallest beta for which the mu0-expected critic does not exceed the true
/// value. Throws UnattainableBound when the expected penalty is zero, or when
/// the critic overestimates and no beta can fix it.
MinBetaAnalysis analyze_min_beta(const EmpiricalMDP& empirical, const LearnedModel& model, const TabularMDP& truth,
                                 const TabularPolicy& policy, const ComboConfig& config,
                                 const OccupancyMeasure& data_dist);

double compute_min_beta(const EmpiricalMDP& empirical, const LearnedModel& model, const TabularMDP& truth,
                        const TabularPolicy& policy, const ComboConfig& config, const OccupancyMeasure& data_dist);

/// Diagnostics as JSON text.
std::string solve_result_to_json(const ComboSolveResult& result);

}  // namespace combo
