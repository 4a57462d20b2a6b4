#include "combo/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "combo/errors.hpp"
#include "combo/hash.hpp"
#include "combo/rng.hpp"

namespace combo {

namespace {

void check_distribution(const Eigen::Ref<const Eigen::RowVectorXd>& row, const std::string& what) {
    for (Eigen::Index i = 0; i < row.size(); ++i) {
        if (!std::isfinite(row[i]) || row[i] < 0.0)
            throw ValidationError(what + ": negative or non-finite probability");
    }
    if (std::abs(row.sum() - 1.0) > kProbabilityTolerance)
        throw ValidationError(what + ": probabilities sum to " + std::to_string(row.sum()));
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ValidationError(std::string(what) + ": shape mismatch");
}

}  // namespace

// ---------------------------------------------------------------------------
// TabularMDP

TabularMDP::TabularMDP(std::vector<Matrix> dynamics, Matrix reward, Vector init_dist, double gamma,
                       std::optional<double> r_max)
    : n_states_(static_cast<int>(init_dist.size())),
      n_actions_(static_cast<int>(dynamics.size())),
      dynamics_(std::move(dynamics)),
      reward_(std::move(reward)),
      init_dist_(std::move(init_dist)),
      gamma_(gamma) {
    if (n_states_ <= 0 || n_actions_ <= 0) throw ValidationError("TabularMDP: empty state or action set");
    if (!(gamma_ > 0.0 && gamma_ < 1.0)) throw ValidationError("TabularMDP: gamma must lie in (0, 1)");
    if (reward_.rows() != n_states_ || reward_.cols() != n_actions_)
        throw ValidationError("TabularMDP: reward table shape mismatch");
    for (int a = 0; a < n_actions_; ++a) {
        const Matrix& p = dynamics_[a];
        if (p.rows() != n_states_ || p.cols() != n_states_)
            throw ValidationError("TabularMDP: dynamics shape mismatch");
        for (int s = 0; s < n_states_; ++s)
            check_distribution(p.row(s), "TabularMDP dynamics (s=" + std::to_string(s) +
                                             ", a=" + std::to_string(a) + ")");
    }
    check_distribution(init_dist_.transpose(), "TabularMDP initial distribution");
    if (!reward_.allFinite()) throw ValidationError("TabularMDP: non-finite reward");
    const double largest = reward_.cwiseAbs().maxCoeff();
    r_max_ = r_max.value_or(largest);
    if (largest > r_max_) throw ValidationError("TabularMDP: |r| exceeds r_max");
}

void TabularMDP::guard() const {
    if (poisoned_) throw TruthAccessError("access to poisoned MDP dynamics or rewards");
}

const Matrix& TabularMDP::dynamics(int action) const {
    guard();
    return dynamics_.at(static_cast<std::size_t>(action));
}

const std::vector<Matrix>& TabularMDP::dynamics() const {
    guard();
    return dynamics_;
}

const Matrix& TabularMDP::reward() const {
    guard();
    return reward_;
}

TabularMDP TabularMDP::with_reward(Matrix reward, std::optional<double> r_max) const {
    guard();
    return TabularMDP(dynamics_, std::move(reward), init_dist_, gamma_, r_max);
}

TabularMDP TabularMDP::poisoned() const {
    TabularMDP copy = *this;
    copy.poisoned_ = true;
    return copy;
}

std::uint64_t TabularMDP::hash() const {
    guard();
    Fnv1a h;
    h.add(n_states_);
    h.add(n_actions_);
    h.add(gamma_);
    h.add(r_max_);
    for (const Matrix& p : dynamics_) h.add(p);
    h.add(reward_);
    h.add(init_dist_);
    return h.digest();
}

// ---------------------------------------------------------------------------
// TabularPolicy / OccupancyMeasure

TabularPolicy::TabularPolicy(Matrix probs) : probs_(std::move(probs)) {
    if (probs_.rows() == 0 || probs_.cols() == 0) throw ValidationError("TabularPolicy: empty table");
    for (Eigen::Index s = 0; s < probs_.rows(); ++s)
        check_distribution(probs_.row(s), "TabularPolicy row " + std::to_string(s));
}

TabularPolicy TabularPolicy::uniform(int n_states, int n_actions) {
    return TabularPolicy(Matrix::Constant(n_states, n_actions, 1.0 / n_actions));
}

TabularPolicy TabularPolicy::deterministic(std::span<const int> actions, int n_actions) {
    Matrix probs = Matrix::Zero(static_cast<Eigen::Index>(actions.size()), n_actions);
    for (std::size_t s = 0; s < actions.size(); ++s) {
        if (actions[s] < 0 || actions[s] >= n_actions)
            throw ValidationError("TabularPolicy::deterministic: action out of range");
        probs(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
    }
    return TabularPolicy(std::move(probs));
}

OccupancyMeasure::OccupancyMeasure(Matrix sa_dist) : sa_(std::move(sa_dist)) {
    if (sa_.size() == 0) throw ValidationError("OccupancyMeasure: empty table");
    if (!sa_.allFinite() || sa_.minCoeff() < 0.0)
        throw ValidationError("OccupancyMeasure: negative or non-finite mass");
    if (std::abs(sa_.sum() - 1.0) > 1e-10)
        throw ValidationError("OccupancyMeasure: total mass " + std::to_string(sa_.sum()));
    state_ = sa_.rowwise().sum();
}

OccupancyMeasure OccupancyMeasure::from_states(const Vector& state_dist, const TabularPolicy& policy) {
    if (state_dist.size() != policy.n_states()) throw ValidationError("OccupancyMeasure: shape mismatch");
    return OccupancyMeasure(state_dist.asDiagonal() * policy.probs());
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

void check_policy_fits(const TabularMDP& mdp, const TabularPolicy& policy) {
    if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
        throw ValidationError("policy shape does not match MDP");
}

/// (I - gamma P^pi)^{-1} applied on the right to a state vector.
Vector state_resolvent(const TabularMDP& mdp, const TabularPolicy& policy, const Vector& rhs) {
    const int n = mdp.n_states();
    const Matrix system = Matrix::Identity(n, n) - mdp.gamma() * policy_state_transition(mdp, policy);
    return system.partialPivLu().solve(rhs);
}

/// Left action: x^T (I - gamma P^pi)^{-1}.
Vector state_resolvent_left(const TabularMDP& mdp, const TabularPolicy& policy, const Vector& lhs) {
    const int n = mdp.n_states();
    const Matrix system = Matrix::Identity(n, n) - mdp.gamma() * policy_state_transition(mdp, policy);
    return system.transpose().partialPivLu().solve(lhs);
}

}  // namespace

Vector state_values(const TabularPolicy& policy, const Matrix& q) {
    return policy.probs().cwiseProduct(q).rowwise().sum();
}

Matrix policy_state_transition(const TabularMDP& mdp, const TabularPolicy& policy) {
    check_policy_fits(mdp, policy);
    Matrix p = Matrix::Zero(mdp.n_states(), mdp.n_states());
    for (int a = 0; a < mdp.n_actions(); ++a) p += policy.probs().col(a).asDiagonal() * mdp.dynamics(a);
    return p;
}

Matrix bellman_backup(const TabularMDP& mdp, const TabularPolicy& policy, const Matrix& reward,
                      const Matrix& q) {
    check_policy_fits(mdp, policy);
    check_same_shape(reward, q, "bellman_backup");
    if (q.rows() != mdp.n_states() || q.cols() != mdp.n_actions())
        throw ValidationError("bellman_backup: Q shape does not match MDP");
    const Vector v = state_values(policy, q);
    Matrix out(mdp.n_states(), mdp.n_actions());
    for (int a = 0; a < mdp.n_actions(); ++a) out.col(a) = reward.col(a) + mdp.gamma() * (mdp.dynamics(a) * v);
    return out;
}

QTable bellman_backup(const TabularMDP& mdp, const TabularPolicy& policy, const QTable& q) {
    return QTable{bellman_backup(mdp, policy, mdp.reward(), q.values)};
}

QTable solve_policy_q(const TabularMDP& mdp, const TabularPolicy& policy, const Matrix& reward) {
    check_policy_fits(mdp, policy);
    if (reward.rows() != mdp.n_states() || reward.cols() != mdp.n_actions())
        throw ValidationError("solve_policy_q: reward shape mismatch");
    // Q = r + gamma P V with V = (I - gamma P^pi)^{-1} r^pi.
    const Vector v = state_resolvent(mdp, policy, state_values(policy, reward));
    Matrix q(mdp.n_states(), mdp.n_actions());
    for (int a = 0; a < mdp.n_actions(); ++a) q.col(a) = reward.col(a) + mdp.gamma() * (mdp.dynamics(a) * v);

    const Matrix residual = q - bellman_backup(mdp, policy, reward, q);
    const double scale = std::max(1.0, q.cwiseAbs().maxCoeff());
    if (!q.allFinite() || residual.cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw NumericalError("policy evaluation: linear solve residual out of tolerance");
    return QTable{std::move(q)};
}

QTable exact_policy_q(const TabularMDP& mdp, const TabularPolicy& policy) {
    return solve_policy_q(mdp, policy, mdp.reward());
}

Matrix apply_resolvent(const TabularMDP& mdp, const TabularPolicy& policy, const Matrix& x) {
    // y = x + gamma P (Pi y) and Pi y solves v = Pi x + gamma P^pi v.
    return solve_policy_q(mdp, policy, x).values;
}

OccupancyMeasure discounted_occupancy(const TabularMDP& mdp, const TabularPolicy& policy,
                                      const Vector& start) {
    check_policy_fits(mdp, policy);
    if (start.size() != mdp.n_states()) throw ValidationError("discounted_occupancy: start shape mismatch");
    Vector d = (1.0 - mdp.gamma()) * state_resolvent_left(mdp, policy, start);
    // Clip round-off negatives and renormalize so the measure is exactly valid.
    d = d.cwiseMax(0.0);
    d /= d.sum();
    return OccupancyMeasure::from_states(d, policy);
}

OccupancyMeasure state_action_occupancy(const TabularMDP& mdp, const TabularPolicy& policy) {
    return discounted_occupancy(mdp, policy, mdp.init_dist());
}

OccupancyMeasure truncated_occupancy(const TabularMDP& mdp, const TabularPolicy& policy,
                                     const Vector& start, int horizon) {
    if (horizon < 1) throw ValidationError("truncated_occupancy: horizon must be >= 1");
    const Matrix p = policy_state_transition(mdp, policy);
    const Matrix pt = p.transpose();
    Vector marginal = start;
    Vector acc = Vector::Zero(mdp.n_states());
    double weight = 1.0;
    for (int t = 0; t < horizon; ++t) {
        acc += weight * marginal;
        marginal = pt * marginal;
        weight *= mdp.gamma();
    }
    return OccupancyMeasure::from_states(acc / acc.sum(), policy);
}

OccupancyMeasure monte_carlo_occupancy(const TabularMDP& mdp, const TabularPolicy& policy,
                                       int n_rollouts, int horizon, std::uint64_t seed) {
    check_policy_fits(mdp, policy);
    Rng rng(seed);
    Matrix acc = Matrix::Zero(mdp.n_states(), mdp.n_actions());
    for (int i = 0; i < n_rollouts; ++i) {
        int s = rng.categorical(mdp.init_dist());
        double weight = 1.0;
        for (int t = 0; t < horizon; ++t) {
            const int a = rng.categorical(policy.row(s).transpose());
            acc(s, a) += weight;
            s = rng.categorical(mdp.dynamics(a).row(s).transpose());
            weight *= mdp.gamma();
        }
    }
    return OccupancyMeasure(acc / acc.sum());
}

double expected_initial_value(const Vector& init_dist, const TabularPolicy& policy, const Matrix& q) {
    if (init_dist.size() != q.rows()) throw ValidationError("expected_initial_value: shape mismatch");
    return init_dist.dot(state_values(policy, q));
}

double policy_return(const TabularMDP& mdp, const TabularPolicy& policy) {
    const OccupancyMeasure d = state_action_occupancy(mdp, policy);
    return d.sa_dist().cwiseProduct(mdp.reward()).sum() / (1.0 - mdp.gamma());
}

double tv_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ValidationError("tv_divergence: length mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - q[i]);
    return 0.5 * total;
}

double tv_divergence(const Vector& p, const Vector& q) {
    return tv_divergence(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())),
                         std::span<const double>(q.data(), static_cast<std::size_t>(q.size())));
}

TabularMDP interpolant_mdp(const TabularMDP& m1, const TabularMDP& m2, double f) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("interpolant_mdp: f must lie in [0, 1]");
    if (m1.n_states() != m2.n_states() || m1.n_actions() != m2.n_actions())
        throw ValidationError("interpolant_mdp: shape mismatch");
    if (m1.gamma() != m2.gamma()) throw ValidationError("interpolant_mdp: discount mismatch");
    if (m1.init_dist() != m2.init_dist()) throw ValidationError("interpolant_mdp: initial distribution mismatch");
    if (f == 1.0) return m1;
    if (f == 0.0) return m2;
    std::vector<Matrix> dynamics;
    dynamics.reserve(static_cast<std::size_t>(m1.n_actions()));
    for (int a = 0; a < m1.n_actions(); ++a) dynamics.push_back(f * m1.dynamics(a) + (1.0 - f) * m2.dynamics(a));
    Matrix reward = f * m1.reward() + (1.0 - f) * m2.reward();
    return TabularMDP(std::move(dynamics), std::move(reward), m1.init_dist(), m1.gamma(),
                      std::max(m1.r_max(), m2.r_max()));
}

int greedy_action(const Eigen::Ref<const Eigen::RowVectorXd>& row, double tie_tolerance) {
    const double best = row.maxCoeff();
    for (Eigen::Index a = 0; a < row.size(); ++a)
        if (row[a] >= best - tie_tolerance) return static_cast<int>(a);
    return 0;
}

}  // namespace combo
