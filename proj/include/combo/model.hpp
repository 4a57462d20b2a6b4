#pragma once

// Count-based model learning, controlled model corruption and model-error
// measurement against a ground-truth MDP.

#include <cstdint>
#include <string>
#include <vector>

#include "combo/dataset.hpp"
#include "combo/mdp.hpp"

namespace combo {

struct BiasSpec {
    std::string kind;  // "dynamics-noise" or "reward-shift"
    double magnitude = 0.0;
    std::uint64_t seed = 0;
};

struct LearnedModel {
    TabularMDP mdp;
    double smoothing = 0.0;
    Mask visited;
    std::uint64_t dataset_hash = 0;
    std::vector<BiasSpec> bias;
};

/// Maximum-likelihood dynamics with additive pseudo-count `smoothing`:
///   P(s' | s, a) = (N(s, a, s') + smoothing) / (N(s, a) + smoothing * n_states).
/// With smoothing 0 an unvisited cell falls back to a self-loop. Rewards are
/// per-cell sample means, 0 on unvisited cells.
LearnedModel fit_mle_model(const Dataset& dataset, const TabularMDP& template_mdp, double smoothing);

/// Mixes every dynamics row with a seeded random distribution:
///   P' = (1 - magnitude) P + magnitude * noise.
LearnedModel inject_model_bias(const LearnedModel& model, double magnitude, std::uint64_t seed);

/// Adds `delta` to every reward of the model (an optimistic model when
/// delta > 0). r_max is widened to keep the model valid.
LearnedModel shift_model_reward(const LearnedModel& model, double delta);

struct ModelErrorProfile {
    Matrix tv;            // TV(P_model(.|s,a), P_truth(.|s,a)) per cell
    Matrix reward_error;  // |r_model - r_truth| per cell
    double max_tv = 0.0;
    double max_reward_error = 0.0;
};

ModelErrorProfile model_error_profile(const LearnedModel& model, const TabularMDP& truth);

/// u(s, a) = 1 / sqrt(max(N(s, a), 1)).
Matrix count_uncertainty(const Dataset& dataset);

/// MDP JSON with a provenance block (dataset hash, smoothing, bias history).
std::string learned_model_to_json(const LearnedModel& model);
LearnedModel learned_model_from_json(const std::string& text);

}  // namespace combo
