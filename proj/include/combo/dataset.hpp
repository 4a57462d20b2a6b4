#pragma once

// Offline datasets: collection under a behavior policy, the empirical MDP
// they induce, and the empirical state-action distribution.

#include <cstdint>
#include <string>
#include <vector>

#include "combo/mdp.hpp"

namespace combo {

struct Transition {
    int s = 0;
    int a = 0;
    double r = 0.0;
    int s_next = 0;

    bool operator==(const Transition&) const = default;
};

/// Ordered transitions plus the counts they induce. Counts are recomputed
/// from the transition list on construction, so they can never drift.
class Dataset {
public:
    /// `episode_len` records how the transitions were chunked into episodes
    /// (0 when unknown); it only matters for per-episode statistics.
    Dataset(int n_states, int n_actions, std::vector<Transition> transitions,
            std::uint64_t source_seed = 0, int episode_len = 0);

    int n_states() const { return n_states_; }
    int n_actions() const { return n_actions_; }
    std::size_t size() const { return transitions_.size(); }
    bool empty() const { return transitions_.empty(); }
    const std::vector<Transition>& transitions() const { return transitions_; }
    std::uint64_t source_seed() const { return source_seed_; }
    int episode_len() const { return episode_len_; }

    std::int64_t count(int s) const { return counts_s_[static_cast<std::size_t>(s)]; }
    std::int64_t count(int s, int a) const { return counts_sa_[index(s, a)]; }
    std::int64_t count(int s, int a, int s_next) const {
        return counts_sas_[index(s, a) * static_cast<std::size_t>(n_states_) + static_cast<std::size_t>(s_next)];
    }

    /// Which (s, a) cells appear at least once.
    Mask visited() const;

    /// Transition list followed by `other`'s; the seed of `this` is kept.
    Dataset concatenated(const Dataset& other) const;

    /// Same transitions with rewards replaced by reward(s, a).
    Dataset relabeled(const Matrix& reward) const;

    /// Digest over the transitions and shape.
    std::uint64_t hash() const;
    /// Digest over the count tensor only.
    std::uint64_t counts_digest() const;

    bool operator==(const Dataset& other) const;

private:
    std::size_t index(int s, int a) const {
        return static_cast<std::size_t>(s) * static_cast<std::size_t>(n_actions_) + static_cast<std::size_t>(a);
    }

    int n_states_;
    int n_actions_;
    std::vector<Transition> transitions_;
    std::uint64_t source_seed_;
    int episode_len_;
    std::vector<std::int64_t> counts_s_;
    std::vector<std::int64_t> counts_sa_;
    std::vector<std::int64_t> counts_sas_;
};

/// The count-based MDP induced by a dataset. Unvisited (s, a) cells are
/// self-loops with reward 0 and are flagged false in `visited`.
struct EmpiricalMDP {
    TabularMDP mdp;
    Mask visited;
};

/// Episodic rollouts from mu0 under `behavior`, restarted every
/// `episode_len` steps, until `n_transitions` are logged.
Dataset collect_dataset(const TabularMDP& mdp, const TabularPolicy& behavior, int n_transitions,
                        int episode_len, std::uint64_t seed);

/// Count ratios and mean observed rewards. Only the shape, discount, initial
/// distribution and r_max of `template_mdp` are read.
EmpiricalMDP build_empirical_mdp(const Dataset& dataset, const TabularMDP& template_mdp);

/// d(s, a) = N(s, a) / |D|.
OccupancyMeasure dataset_distribution(const Dataset& dataset);

/// Per-episode discounted returns, splitting the transition list into
/// consecutive chunks of `episode_len`.
std::vector<double> episode_returns(const Dataset& dataset, double gamma);

// Text format: one transition per line, "s a r s_next" separated by single
// tabs, reward written in shortest round-trip form. Lines starting with '#'
// are comments. The JSON sidecar carries the seed, MDP hash and counts digest.
std::string dataset_to_text(const Dataset& dataset);
Dataset dataset_from_text(const std::string& text, int n_states, int n_actions,
                          std::uint64_t source_seed = 0, int episode_len = 0);
std::string dataset_sidecar_json(const Dataset& dataset, std::uint64_t mdp_hash);

/// Writes `<stem>.tsv` and `<stem>.json`.
void write_dataset(const Dataset& dataset, std::uint64_t mdp_hash, const std::string& stem);
/// Reads a dataset written by write_dataset and checks the counts digest.
Dataset read_dataset(const std::string& stem);

}  // namespace combo
