#pragma once

// Small generated MDPs (gridworlds, random MDPs, chains), reward relabeling
// and the behavior policies that stand in for dataset-quality levels.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "combo/mdp.hpp"
#include "combo/serialize.hpp"

namespace combo {

enum class EnvKind { Gridworld, RandomMDP, Chain };

/// A grid cell as (x, y); state index y * width + x.
using Cell = std::pair<int, int>;

struct EnvSpec {
    EnvKind kind = EnvKind::Gridworld;

    // Gridworld: actions 0 up (y - 1), 1 right, 2 down, 3 left. Moving into a
    // wall stays put. With probability `slip` the move goes to one of the two
    // perpendicular directions instead (split evenly). The goal is absorbing
    // and pays 1 per step; hazards pay -1 and are not absorbing. Start (0, 0).
    int width = 5;
    int height = 5;
    Cell goal{4, 4};
    std::vector<Cell> hazards;
    double slip = 0.1;

    // RandomMDP: `branching` successors per (s, a) with simplex weights,
    // rewards uniform in [0, 1), uniform initial distribution.
    int n_states = 10;
    int n_actions = 4;
    int branching = 3;
    std::uint64_t seed = 0;

    // Chain: action 0 advances, action 1 stays; the last state is absorbing
    // and pays 1. Start at state 0.
    int length = 2;

    double gamma = 0.9;

    /// Reward relabel: the given state (a gridworld cell index for
    /// gridworlds) pays 1 for every action and every other state pays 0.
    /// Dynamics are untouched, so the original goal remains absorbing.
    std::optional<int> relabel_goal;

    void validate() const;
    bool operator==(const EnvSpec&) const = default;
};

std::string to_string(EnvKind kind);
EnvKind env_kind_from_string(const std::string& s);

int cell_index(const EnvSpec& spec, Cell cell);

/// Builds the MDP, applying the relabel when present.
TabularMDP make_environment(const EnvSpec& spec);

/// The relabeled reward table for `mdp` (same shape, goal row 1, others 0).
Matrix relabel_reward(const TabularMDP& mdp, int goal_state);

Json env_spec_to_json(const EnvSpec& spec);
EnvSpec env_spec_from_json(const Json& j);

enum class BehaviorQuality { Random, Medium, Expert, MediumExpert, MediumReplay };

std::string to_string(BehaviorQuality q);
BehaviorQuality behavior_quality_from_string(const std::string& s);

/// Exploration rates of the epsilon-greedy stand-ins.
inline constexpr double kExpertEpsilon = 0.05;
inline constexpr double kMediumEpsilon = 0.4;

/// (1 - epsilon) * oracle-greedy + epsilon * uniform.
TabularPolicy epsilon_greedy_oracle(const TabularMDP& mdp, double epsilon);

/// Random: uniform. Expert / Medium: epsilon-greedy on the optimal policy.
/// MediumExpert: per-state average of the Medium and Expert rows.
/// MediumReplay: per-state average of uniform and Medium rows. The
/// stand-ins are deterministic; `seed` is accepted for interface stability
/// and does not change the result.
TabularPolicy make_behavior_policy(const TabularMDP& mdp, BehaviorQuality quality, std::uint64_t seed);

}  // namespace combo
