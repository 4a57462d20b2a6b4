#pragma once

// Experiment orchestration: dataset generation per seed, algorithm runs
// against a truth object the algorithms cannot read, offline
// hyperparameter selection, reward-relabel suites and result persistence.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "combo/baselines.hpp"
#include "combo/combo.hpp"
#include "combo/dataset.hpp"
#include "combo/environment.hpp"
#include "combo/mdp.hpp"
#include "combo/serialize.hpp"

namespace combo {

enum class Algo { COMBO, CQL, MOPO, Dyna, BC };

std::string to_string(Algo algo);
Algo algo_from_string(const std::string& s);

struct ExperimentConfig {
    EnvSpec env;
    BehaviorQuality quality = BehaviorQuality::Medium;
    int n_transitions = 500;
    int episode_len = 20;
    /// Base of the per-seed dataset seeds.
    std::uint64_t data_seed = 0;
    Algo algo = Algo::COMBO;
    ComboConfig combo;
    BaselineConfig baseline;
    std::vector<std::uint64_t> eval_seeds{0};
    /// Stem for `<stem>.csv` and `<stem>.jsonl`; empty writes nothing.
    std::string output_path;
    /// When false the wall_time column is written as 0.
    bool record_wall_time = true;

    void validate() const;
    /// Digest over everything that determines the results (seeds, output
    /// path and timing excluded).
    std::uint64_t hash() const;
};

/// Flat key names accepted by apply_experiment_field, in a stable order.
const std::vector<std::string>& experiment_config_keys();

/// Keys shared by the COMBO and baseline configs set both.
void apply_experiment_field(ExperimentConfig& config, const std::string& key, const std::string& value);
KeyValues experiment_config_to_key_values(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_key_values(const KeyValues& values);

struct IterationDiagnostics {
    double true_return = 0.0;
    double regularizer_value = 0.0;
    double nu_value = 0.0;
    int eval_iters = 0;
};

struct ResultRecord {
    std::uint64_t config_hash = 0;
    Algo algo = Algo::COMBO;
    std::uint64_t seed = 0;
    double true_return = 0.0;
    double behavior_return = 0.0;
    /// Present for COMBO runs.
    std::optional<double> regularizer_value;
    int n_iterations = 0;
    std::vector<IterationDiagnostics> iterations;
    double wall_time = 0.0;
    /// Empty on success; the failure message otherwise.
    std::string error;

    bool ok() const { return error.empty(); }
};

std::string records_csv_header();
std::string record_to_csv_row(const ResultRecord& record);
std::string record_to_jsonl(const ResultRecord& record);
/// Parses a CSV written by records_to_csv (per-iteration data is not part
/// of the CSV and comes back empty).
std::vector<ResultRecord> records_from_csv(const std::string& text);
std::string records_to_csv(const std::vector<ResultRecord>& records);
std::string records_to_jsonl(const std::vector<ResultRecord>& records);

/// The MDP returns are evaluated in: the environment with the relabeled
/// reward when a relabel is configured.
TabularMDP evaluation_mdp(const ExperimentConfig& config);

/// The behavior policy, built on the environment before any relabel.
TabularPolicy experiment_behavior(const ExperimentConfig& config);

/// Collected under the behavior policy on the original environment, with
/// rewards relabeled when configured. Seed: mix_seed(data_seed, seed).
Dataset make_experiment_dataset(const ExperimentConfig& config, std::uint64_t seed);

/// One seed of one algorithm. Algorithms only see `truth.poisoned()`;
/// failures are recorded in the record's error field.
ResultRecord run_single(const ExperimentConfig& config, const TabularMDP& truth, std::uint64_t seed);

/// All eval seeds in order; writes the CSV and JSONL outputs when an
/// output path is set.
std::vector<ResultRecord> run_experiment(const ExperimentConfig& config);

/// The COMBO run used for selection and for result records: model fitted
/// from the dataset, outer loop on `template_mdp` (only its shape, discount,
/// mu0 and r_max are read).
ComboRun run_combo_offline(const Dataset& dataset, const TabularMDP& template_mdp, const ComboConfig& config,
                           std::uint64_t seed, const ReturnProbe& probe = {});

/// E_rho[Q] - E_d[Q] averaged over the last `average_last` evaluations of
/// the run (fewer when the run is shorter). A run without iterations is
/// evaluated once at its policy.
double run_regularizer(const ComboRun& run, const Dataset& dataset, const TabularMDP& template_mdp,
                       const ComboConfig& config, int average_last = 1);

struct CandidateScore {
    std::optional<double> regularizer_value;
    std::optional<TabularPolicy> policy;
    std::string error;
};

struct Selection {
    std::size_t index = 0;
    ComboConfig config;
    std::vector<CandidateScore> table;
};

/// Runs every candidate offline and returns the regularizer argmin
/// (lowest index on ties). Throws ConvergenceError when every candidate
/// failed.
Selection select_hyperparameters(const std::vector<ComboConfig>& candidates, const Dataset& dataset,
                                 const TabularMDP& template_mdp, std::uint64_t seed = 0, int average_last = 1);

struct AlgoSummary {
    Algo algo = Algo::COMBO;
    double mean = 0.0;
    /// Half-width of the normal-approximation 95% interval.
    double ci_half_width = 0.0;
    int n_ok = 0;
    int n_failed = 0;
};

/// Mean and 1.96 sd / sqrt(n) of the successful records' true returns.
AlgoSummary summarize(Algo algo, const std::vector<ResultRecord>& records);

struct GeneralizationSummary {
    std::vector<AlgoSummary> algos;
    std::vector<std::vector<ResultRecord>> records;
    /// Discounted returns of the relabeled dataset's episodes, pooled over seeds.
    double batch_mean = 0.0;
    double batch_max = 0.0;
    double optimal_return = 0.0;
};

/// Collects data on the original reward, relabels it to `relabel_goal`,
/// runs each algorithm and evaluates under the relabeled reward. Without a
/// relabel goal the suite is plain run_experiment per algorithm.
GeneralizationSummary run_generalization_suite(const ExperimentConfig& base, std::optional<int> relabel_goal,
                                               const std::vector<Algo>& algos,
                                               const std::vector<std::uint64_t>& seeds);

std::string generalization_summary_csv(const GeneralizationSummary& summary);

/// Cartesian product of beta, f, mu and rho values over the base config's
/// COMBO settings (empty lists keep the base value).
std::vector<ExperimentConfig> sweep_configs(const ExperimentConfig& base, const std::vector<double>& betas,
                                            const std::vector<double>& fs, const std::vector<MuChoice>& mus,
                                            const std::vector<RhoChoice>& rhos);

}  // namespace combo
