#pragma once

// Exact finite-MDP machinery: policy evaluation, occupancy measures,
// Bellman operators, resolvents and MDP interpolation.
//
// Conventions used throughout the library:
//   * dynamics are stored per action, P_a(s, s') = P(s' | s, a);
//   * state-action tables (rewards, Q-values, penalties, occupancies) are
//     n_states x n_actions matrices.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace combo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Tolerance on row sums of probability tables accepted at construction.
inline constexpr double kProbabilityTolerance = 1e-12;

/// Advisory upper bound on the state count; dense factorizations are
/// cubic in it.
inline constexpr int kSoftStateCap = 2000;

class TabularMDP {
public:
    /// Validates and stores a finite MDP. `dynamics[a]` is the n x n matrix
    /// P(. | ., a). When `r_max` is omitted the largest |r| is used.
    TabularMDP(std::vector<Matrix> dynamics, Matrix reward, Vector init_dist, double gamma,
               std::optional<double> r_max = std::nullopt);

    int n_states() const { return n_states_; }
    int n_actions() const { return n_actions_; }
    double gamma() const { return gamma_; }
    double r_max() const { return r_max_; }
    const Vector& init_dist() const { return init_dist_; }

    /// P(. | ., a). Throws TruthAccessError on a poisoned instance.
    const Matrix& dynamics(int action) const;
    const std::vector<Matrix>& dynamics() const;
    /// Reward table r(s, a). Throws TruthAccessError on a poisoned instance.
    const Matrix& reward() const;

    double transition(int s, int a, int s_next) const { return dynamics(a)(s, s_next); }
    double reward(int s, int a) const { return reward()(s, a); }

    /// Same MDP with a different reward table; r_max is recomputed unless given.
    TabularMDP with_reward(Matrix reward, std::optional<double> r_max = std::nullopt) const;

    /// A copy whose dynamics and reward accessors throw. Shape, discount,
    /// initial distribution and r_max stay readable, so the copy can be used
    /// as a template by code that must never see the true model.
    TabularMDP poisoned() const;
    bool is_poisoned() const { return poisoned_; }

    /// Stable 64-bit digest of the full specification.
    std::uint64_t hash() const;

private:
    void guard() const;

    int n_states_ = 0;
    int n_actions_ = 0;
    std::vector<Matrix> dynamics_;
    Matrix reward_;
    Vector init_dist_;
    double gamma_ = 0.0;
    double r_max_ = 0.0;
    bool poisoned_ = false;
};

/// Row-stochastic action distribution per state.
class TabularPolicy {
public:
    explicit TabularPolicy(Matrix probs);

    static TabularPolicy uniform(int n_states, int n_actions);
    /// One action per state, encoded as a point mass.
    static TabularPolicy deterministic(std::span<const int> actions, int n_actions);

    int n_states() const { return static_cast<int>(probs_.rows()); }
    int n_actions() const { return static_cast<int>(probs_.cols()); }
    const Matrix& probs() const { return probs_; }
    double operator()(int s, int a) const { return probs_(s, a); }
    auto row(int s) const { return probs_.row(s); }

    bool operator==(const TabularPolicy& other) const { return probs_ == other.probs_; }

private:
    Matrix probs_;
};

/// Q-values (or any state-action value table).
struct QTable {
    Matrix values;

    int n_states() const { return static_cast<int>(values.rows()); }
    int n_actions() const { return static_cast<int>(values.cols()); }
    double operator()(int s, int a) const { return values(s, a); }
};

/// Normalized distribution over state-action pairs with its state marginal.
class OccupancyMeasure {
public:
    explicit OccupancyMeasure(Matrix sa_dist);
    /// d(s, a) = d(s) pi(a | s).
    static OccupancyMeasure from_states(const Vector& state_dist, const TabularPolicy& policy);

    int n_states() const { return static_cast<int>(sa_.rows()); }
    int n_actions() const { return static_cast<int>(sa_.cols()); }
    const Matrix& sa_dist() const { return sa_; }
    const Vector& state_dist() const { return state_; }
    double operator()(int s, int a) const { return sa_(s, a); }

private:
    Matrix sa_;
    Vector state_;
};

/// V(s) = sum_a pi(a | s) Q(s, a).
Vector state_values(const TabularPolicy& policy, const Matrix& q);

/// State-to-state transition matrix under the policy, P^pi(s, s').
Matrix policy_state_transition(const TabularMDP& mdp, const TabularPolicy& policy);

/// Exact Q^pi by a direct solve of Q = r + gamma P^pi Q.
QTable exact_policy_q(const TabularMDP& mdp, const TabularPolicy& policy);

/// Q solving Q = reward + gamma P^pi Q for an arbitrary reward table (the
/// table need not respect the MDP's r_max).
QTable solve_policy_q(const TabularMDP& mdp, const TabularPolicy& policy, const Matrix& reward);

/// One exact application of B^pi.
QTable bellman_backup(const TabularMDP& mdp, const TabularPolicy& policy, const QTable& q);

/// Same backup with an explicit reward table.
Matrix bellman_backup(const TabularMDP& mdp, const TabularPolicy& policy, const Matrix& reward,
                      const Matrix& q);

/// Applies the state-action resolvent S^pi = (I - gamma P^pi)^{-1} to x.
Matrix apply_resolvent(const TabularMDP& mdp, const TabularPolicy& policy, const Matrix& x);

/// Discounted state-action occupancy of the policy from the MDP's initial
/// distribution.
OccupancyMeasure state_action_occupancy(const TabularMDP& mdp, const TabularPolicy& policy);

/// Discounted occupancy from an arbitrary start distribution.
OccupancyMeasure discounted_occupancy(const TabularMDP& mdp, const TabularPolicy& policy,
                                      const Vector& start);

/// Occupancy of rollouts truncated after `horizon` steps, each step weighted
/// by gamma^t and the total renormalized.
OccupancyMeasure truncated_occupancy(const TabularMDP& mdp, const TabularPolicy& policy,
                                     const Vector& start, int horizon);

/// Monte Carlo estimate of the discounted occupancy: `n_rollouts` episodes of
/// length `horizon` from the initial distribution, step t weighted gamma^t.
/// Cross-check only.
OccupancyMeasure monte_carlo_occupancy(const TabularMDP& mdp, const TabularPolicy& policy,
                                       int n_rollouts, int horizon, std::uint64_t seed);

/// J = E_{d^pi}[r] / (1 - gamma).
double policy_return(const TabularMDP& mdp, const TabularPolicy& policy);

/// E_{s ~ mu0, a ~ pi}[Q(s, a)].
double expected_initial_value(const Vector& init_dist, const TabularPolicy& policy,
                              const Matrix& q);

/// Half the L1 distance between two distributions.
double tv_divergence(std::span<const double> p, std::span<const double> q);
double tv_divergence(const Vector& p, const Vector& q);

/// Dynamics and rewards mixed with weight f on m1.
TabularMDP interpolant_mdp(const TabularMDP& m1, const TabularMDP& m2, double f);

/// max_a Q(s, a) argmax with lowest-index tie-break; values within
/// `tie_tolerance` of the maximum count as ties.
int greedy_action(const Eigen::Ref<const Eigen::RowVectorXd>& row, double tie_tolerance = 1e-10);

}  // namespace combo
