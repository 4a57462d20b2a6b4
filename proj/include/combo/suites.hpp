#pragma once

// Seeded instance families and the verification suites run over them.
// Each suite returns one report per instance (or per fixture).

#include <cstdint>
#include <string>
#include <vector>

#include "combo/combo.hpp"
#include "combo/dataset.hpp"
#include "combo/experiment.hpp"
#include "combo/mdp.hpp"
#include "combo/model.hpp"
#include "combo/verify.hpp"

namespace combo {

/// A random truth MDP with a dataset, the MDPs fitted to it, an evaluation
/// policy and a critic config.
struct Instance {
    TabularMDP truth;
    Dataset dataset;
    EmpiricalMDP empirical;
    LearnedModel model;
    OccupancyMeasure data_dist;
    TabularPolicy policy;
    TabularPolicy behavior;
    ComboConfig config;
};

enum class InstanceBias { None, DynamicsNoise, PessimisticReward, OptimisticReward };

struct InstanceOptions {
    int min_states = 2;
    int max_states = 20;
    int n_actions = 4;
    /// Transitions per state-action cell collected under the behavior policy.
    int transitions_per_cell = 20;
    /// Every cell gets at least one extra sampled transition.
    bool full_coverage = true;
    InstanceBias bias = InstanceBias::None;
    double bias_magnitude = 0.0;
    double gamma = 0.9;
};

/// Random Dirichlet rows.
TabularPolicy random_policy(int n_states, int n_actions, std::uint64_t seed);

Instance make_instance(std::uint64_t seed, const InstanceOptions& options = {});

/// Iterative and closed-form critics agree within 1e-7 (sup norm).
VerificationReport check_fixed_point_equivalence(const Instance& inst, std::uint64_t seed = 0);

/// Pessimistic state values of tabular CQL at every state:
/// V_hat(s) <= V^pi(s) + 1e-8, with the empirical MDP equal to the truth.
VerificationReport check_cql_pointwise_bound(const TabularMDP& truth, const TabularPolicy& policy,
                                             const TabularPolicy& behavior, double beta, std::uint64_t seed = 0);

/// A deterministic three-state fixture on which the critic exceeds Q^pi on
/// a dataset cell while its mu0-expected value stays below the true value.
VerificationReport check_pointwise_overestimation_fixture();

struct SuiteOptions {
    int samples = 0;  // 0 selects the suite's default size
    std::uint64_t seed = 0;
};

/// Names accepted by run_suite, in run order.
const std::vector<std::string>& suite_names();

/// interpolation-lemma, fixed-point (equivalence and pointwise identity),
/// lower-bound (random and optimistic fixtures), cql-contrast, interpolant,
/// safe-improvement, generalization, selection.
std::vector<VerificationReport> run_suite(const std::string& name, const SuiteOptions& options = {});

std::vector<VerificationReport> suite_interpolation_lemma(int samples, std::uint64_t seed);
std::vector<VerificationReport> suite_fixed_point(int samples, std::uint64_t seed);
/// Random instances with sampling error and/or pessimistic bias, then
/// optimistic-reward fixtures that must fail at beta = 0.
std::vector<VerificationReport> suite_lower_bound(int samples, int optimistic, std::uint64_t seed);
std::vector<VerificationReport> suite_cql_pointwise(int samples, std::uint64_t seed);
std::vector<VerificationReport> suite_prop2(int samples, std::uint64_t seed);
std::vector<VerificationReport> suite_interpolant(int samples, std::uint64_t seed,
                                                  AlphaBasis basis = AlphaBasis::Interpolant);

/// COMBO settings used by the gridworld suites: rho = d_f with uniform
/// rollout actions, beta 0.5, f 0.5. With rho = d^pi (the default) greedy
/// improvement chases the penalty's bonus on untaken data actions and the
/// policy oscillates between iterations.
ComboConfig gridworld_combo_config();

/// 5x5 gridworld, goal at (4, 4), slip 0.1, Medium data in 25-step episodes,
/// gridworld_combo_config(), no wall-clock timing.
ExperimentConfig gridworld_experiment(int n_transitions);

/// The 5x5 gridworld with Medium data used for safe-improvement runs.
struct SafeImprovementSetup {
    int width = 5;
    int height = 5;
    double slip = 0.1;
    double gamma = 0.9;
    int n_transitions = 2000;
    int episode_len = 25;
    ComboConfig config = gridworld_combo_config();
};

struct SafeImprovementOutcome {
    VerificationReport report;
    double j_out = 0.0;
    double j_behavior = 0.0;
};

std::vector<SafeImprovementOutcome> suite_safe_improvement(int seeds, std::uint64_t seed,
                                                           const SafeImprovementSetup& setup = {});

/// Data collected for the (4, 4) goal, rewards relabeled to `relabel_goal`.
/// Passes when mean COMBO >= mean BC and mean COMBO >= mean CQL minus 5% of
/// the optimal return.
struct GeneralizationCheck {
    GeneralizationSummary summary;
    VerificationReport report;
};

GeneralizationCheck suite_generalization(int seeds, std::uint64_t seed, int relabel_goal = 20,
                                         int n_transitions = 1000);

/// One report per dataset: the regularizer-argmin beta in {0.5, 1, 5} is
/// within 10% of the best candidate's true return.
std::vector<VerificationReport> suite_selection(int seeds, std::uint64_t seed, int n_transitions = 1000);

}  // namespace combo
