#include "combo/baselines.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "combo/errors.hpp"
#include "combo/serialize.hpp"

namespace combo {

void BaselineConfig::validate() const {
    if (!std::isfinite(beta_cql) || beta_cql < 0.0) throw ValidationError("beta_cql must be finite and >= 0");
    if (!std::isfinite(lambda_mopo) || lambda_mopo < 0.0) throw ValidationError("lambda_mopo must be finite and >= 0");
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("f must lie in [0, 1]");
    if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
    if (!(eval_tol > 0.0)) throw ValidationError("eval_tol must be positive");
    if (max_eval_iters < 0) throw ValidationError("max_eval_iters must be >= 0");
    if (outer_iters < 0) throw ValidationError("outer_iters must be >= 0");
    if (!(epsilon_pb > 0.0)) throw ValidationError("epsilon_pb must be positive");
    if (!(vi_tol > 0.0)) throw ValidationError("vi_tol must be positive");
}

void apply_baseline_field(BaselineConfig& c, const std::string& key, const std::string& value) {
    if (key == "beta_cql") c.beta_cql = parse_double(value);
    else if (key == "lambda_mopo") c.lambda_mopo = parse_double(value);
    else if (key == "epsilon_pb") c.epsilon_pb = parse_double(value);
    else if (key == "vi_tol") c.vi_tol = parse_double(value);
    else if (key == "cql_mu") {
        if (value == to_string(MuChoice::UniformActions)) c.cql_mu = MuChoice::UniformActions;
        else if (value == to_string(MuChoice::CurrentPolicy)) c.cql_mu = MuChoice::CurrentPolicy;
        else throw ValidationError("cql_mu: expected uniform|current-policy, got '" + value + "'");
    } else {
        // Fields shared with the COMBO config use the same spelling and parser.
        ComboConfig tmp;
        tmp.f = c.f;
        tmp.improvement = c.improvement;
        tmp.temperature = c.temperature;
        tmp.eval_tol = c.eval_tol;
        tmp.max_eval_iters = c.max_eval_iters;
        tmp.outer_iters = c.outer_iters;
        if (key != "f" && key != "improvement" && key != "temperature" && key != "eval_tol" &&
            key != "max_eval_iters" && key != "outer_iters")
            throw ValidationError("unknown baseline config key '" + key + "'");
        apply_config_field(tmp, key, value);
        c.f = tmp.f;
        c.improvement = tmp.improvement;
        c.temperature = tmp.temperature;
        c.eval_tol = tmp.eval_tol;
        c.max_eval_iters = tmp.max_eval_iters;
        c.outer_iters = tmp.outer_iters;
    }
}

std::string baseline_config_to_key_values(const BaselineConfig& c) {
    KeyValues kv;
    kv["beta_cql"] = format_double(c.beta_cql);
    kv["lambda_mopo"] = format_double(c.lambda_mopo);
    kv["f"] = format_double(c.f);
    kv["improvement"] = to_string(c.improvement);
    kv["temperature"] = format_double(c.temperature);
    kv["eval_tol"] = format_double(c.eval_tol);
    kv["max_eval_iters"] = std::to_string(c.max_eval_iters);
    kv["outer_iters"] = std::to_string(c.outer_iters);
    kv["epsilon_pb"] = format_double(c.epsilon_pb);
    kv["cql_mu"] = to_string(c.cql_mu);
    kv["vi_tol"] = format_double(c.vi_tol);
    return format_key_values(kv);
}

// ---------------------------------------------------------------------------
// CQL

Matrix cql_penalty(const TabularPolicy& policy, const TabularPolicy& behavior, const BaselineConfig& config) {
    if (policy.n_states() != behavior.n_states() || policy.n_actions() != behavior.n_actions())
        throw ValidationError("cql_penalty: policy and behavior shapes differ");
    const Matrix mu = config.cql_mu == MuChoice::UniformActions
                          ? TabularPolicy::uniform(policy.n_states(), policy.n_actions()).probs()
                          : policy.probs();
    const Matrix& pb = behavior.probs();
    return (mu - pb).cwiseQuotient(pb.cwiseMax(config.epsilon_pb));
}

int count_floored_cells(const TabularPolicy& policy, const TabularPolicy& behavior, double epsilon_pb) {
    int n = 0;
    for (int s = 0; s < policy.n_states(); ++s)
        for (int a = 0; a < policy.n_actions(); ++a)
            if (policy(s, a) > 0.0 && behavior(s, a) < epsilon_pb) ++n;
    return n;
}

namespace {

int budget_for(const BaselineConfig& config, double gamma) {
    ComboConfig c;
    c.eval_tol = config.eval_tol;
    c.max_eval_iters = config.max_eval_iters;
    return c.eval_iteration_budget(gamma);
}

// Iterates Q <- reward + gamma P^pi Q from zero with the same stopping rule
// as the COMBO critic.
Matrix iterate_evaluation(const TabularMDP& mdp, const TabularPolicy& policy, const Matrix& reward, double tol,
                          int budget, int& iters) {
    const double base = (1.0 - mdp.gamma()) * tol;
    Matrix q = Matrix::Zero(mdp.n_states(), mdp.n_actions());
    double delta = std::numeric_limits<double>::infinity();
    for (iters = 0; iters < budget;) {
        Matrix next = bellman_backup(mdp, policy, reward, q);
        delta = (next - q).cwiseAbs().maxCoeff();
        q = std::move(next);
        ++iters;
        if (!std::isfinite(delta)) break;
        if (delta <= std::max(base, 64.0 * std::numeric_limits<double>::epsilon() * q.cwiseAbs().maxCoeff()))
            return q;
    }
    throw ConvergenceError("policy evaluation did not converge within " + std::to_string(budget) + " iterations",
                           iters, delta);
}

TabularPolicy improve(const Matrix& q, ImprovementKind kind, double temperature) {
    Matrix probs = Matrix::Zero(q.rows(), q.cols());
    for (Eigen::Index s = 0; s < q.rows(); ++s) {
        if (kind == ImprovementKind::Greedy) {
            probs(s, greedy_action(q.row(s))) = 1.0;
        } else {
            const double top = q.row(s).maxCoeff();
            Eigen::RowVectorXd w = ((q.row(s).array() - top) / temperature).exp().matrix();
            probs.row(s) = w / w.sum();
        }
    }
    return TabularPolicy(std::move(probs));
}

}  // namespace

CqlSolve cql_solve(const EmpiricalMDP& empirical, const TabularPolicy& policy, const TabularPolicy& behavior,
                   const BaselineConfig& config) {
    config.validate();
    const TabularMDP& m = empirical.mdp;
    const Matrix reward = m.reward() - config.beta_cql * cql_penalty(policy, behavior, config);
    CqlSolve out;
    out.q.values = iterate_evaluation(m, policy, reward, config.eval_tol, budget_for(config, m.gamma()), out.iters_used);
    out.floored_cells = count_floored_cells(policy, behavior, config.epsilon_pb);
    return out;
}

QTable cql_policy_evaluation(const EmpiricalMDP& empirical, const TabularPolicy& policy,
                             const TabularPolicy& behavior, const BaselineConfig& config) {
    return cql_solve(empirical, policy, behavior, config).q;
}

QTable cql_closed_form(const EmpiricalMDP& empirical, const TabularPolicy& policy, const TabularPolicy& behavior,
                       const BaselineConfig& config) {
    const TabularMDP& m = empirical.mdp;
    const Matrix q = exact_policy_q(m, policy).values;
    return QTable{q - config.beta_cql * apply_resolvent(m, policy, cql_penalty(policy, behavior, config))};
}

TabularPolicy cql_policy_optimization(const EmpiricalMDP& empirical, const TabularPolicy& behavior,
                                      const BaselineConfig& config) {
    config.validate();
    TabularPolicy policy = TabularPolicy::uniform(empirical.mdp.n_states(), empirical.mdp.n_actions());
    for (int i = 0; i < config.outer_iters; ++i) {
        const QTable q = cql_policy_evaluation(empirical, policy, behavior, config);
        policy = improve(q.values, config.improvement, config.temperature);
    }
    return policy;
}

// ---------------------------------------------------------------------------
// Model-based baselines

TabularPolicy mopo_policy_optimization(const LearnedModel& model, const Matrix& uncertainty,
                                       const BaselineConfig& config, const TabularMDP& /*truth_for_eval*/) {
    config.validate();
    const TabularMDP& m = model.mdp;
    if (uncertainty.rows() != m.n_states() || uncertainty.cols() != m.n_actions())
        throw ValidationError("mopo: uncertainty table shape mismatch");
    if ((uncertainty.array() < 0.0).any()) throw ValidationError("mopo: uncertainty must be non-negative");
    return solve_optimal(m, m.reward() - config.lambda_mopo * uncertainty, config.vi_tol).first;
}

ComboConfig dyna_combo_config(const BaselineConfig& config) {
    ComboConfig c;
    c.beta = 0.0;
    c.f = config.f;
    c.improvement = config.improvement;
    c.temperature = config.temperature;
    c.eval_tol = config.eval_tol;
    c.max_eval_iters = config.max_eval_iters;
    c.outer_iters = config.outer_iters;
    return c;
}

TabularPolicy dyna_policy_optimization(const EmpiricalMDP& empirical, const LearnedModel& model,
                                       const BaselineConfig& config, const TabularMDP& /*truth_for_eval*/) {
    config.validate();
    // With beta = 0 the data distribution only enters through a penalty that
    // is multiplied by zero; any valid distribution on the visited cells does.
    Matrix d = empirical.visited.cast<double>().matrix();
    if (d.sum() == 0.0) throw ValidationError("dyna: empirical MDP has no visited cells");
    d /= d.sum();
    return combo_outer_loop(empirical, model, OccupancyMeasure(std::move(d)), dyna_combo_config(config), 0).policy;
}

TabularPolicy behavior_cloning(const Dataset& dataset) {
    const int ns = dataset.n_states();
    const int na = dataset.n_actions();
    Matrix probs(ns, na);
    for (int s = 0; s < ns; ++s) {
        const std::int64_t n = dataset.count(s);
        for (int a = 0; a < na; ++a)
            probs(s, a) = n > 0 ? static_cast<double>(dataset.count(s, a)) / static_cast<double>(n) : 1.0 / na;
    }
    return TabularPolicy(std::move(probs));
}

// ---------------------------------------------------------------------------
// Optimal control

std::pair<TabularPolicy, QTable> solve_optimal(const TabularMDP& mdp, const Matrix& reward, double tol) {
    if (!(tol > 0.0)) throw ValidationError("solve_optimal: tol must be positive");
    const int ns = mdp.n_states();
    const int na = mdp.n_actions();
    const double gamma = mdp.gamma();
    auto backup = [&](const Matrix& q) {
        const Vector v = q.rowwise().maxCoeff();
        Matrix out(ns, na);
        for (int a = 0; a < na; ++a) out.col(a) = reward.col(a) + gamma * (mdp.dynamics(a) * v);
        return out;
    };
    Matrix q = Matrix::Zero(ns, na);
    const double scale = std::max(1.0, reward.cwiseAbs().maxCoeff() / (1.0 - gamma));
    const int cap = static_cast<int>(std::ceil(std::log(tol * (1.0 - gamma) / (10.0 * scale)) / std::log(gamma))) + 100;
    for (int k = 0; k < std::max(cap, 100); ++k) {
        Matrix next = backup(q);
        const double residual = (next - q).cwiseAbs().maxCoeff();
        q = std::move(next);
        if (residual <= tol * (1.0 - gamma)) break;
    }

    // Policy-iteration polish: exact values of the greedy policy until the
    // greedy policy stops changing. Switching only on strict improvement
    // guarantees termination.
    const double tie = 1e-9 * scale;
    std::vector<int> actions(static_cast<std::size_t>(ns));
    for (int s = 0; s < ns; ++s) actions[static_cast<std::size_t>(s)] = greedy_action(q.row(s), tie);
    Matrix q_pi;
    for (int iter = 0; iter < 10 * ns * na + 10; ++iter) {
        q_pi = solve_policy_q(mdp, TabularPolicy::deterministic(actions, na), reward).values;
        bool changed = false;
        for (int s = 0; s < ns; ++s) {
            const int cur = actions[static_cast<std::size_t>(s)];
            const int best = greedy_action(q_pi.row(s), tie);
            if (q_pi(s, best) > q_pi(s, cur) + tie) {
                actions[static_cast<std::size_t>(s)] = best;
                changed = true;
            }
        }
        if (!changed) break;
    }
    for (int s = 0; s < ns; ++s) actions[static_cast<std::size_t>(s)] = greedy_action(q_pi.row(s), tie);
    return {TabularPolicy::deterministic(actions, na), QTable{std::move(q_pi)}};
}

std::pair<TabularPolicy, QTable> value_iteration_oracle(const TabularMDP& mdp, double tol) {
    return solve_optimal(mdp, mdp.reward(), tol);
}

}  // namespace combo
