#include "combo/combo.hpp"

#include <charconv>
#include <cmath>
#include <limits>

#include "combo/errors.hpp"
#include "combo/hash.hpp"
#include "combo/rng.hpp"
#include "combo/serialize.hpp"

namespace combo {

void ComboConfig::validate() const {
    if (!std::isfinite(beta) || beta < 0.0) throw ValidationError("beta must be finite and >= 0");
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("f must lie in [0, 1]");
    if (rollout_len < 1) throw ValidationError("rollout_len must be >= 1");
    if (n_rollouts < 1) throw ValidationError("n_rollouts must be >= 1");
    if (!(eval_tol > 0.0) || !std::isfinite(eval_tol)) throw ValidationError("eval_tol must be positive");
    if (max_eval_iters < 0) throw ValidationError("max_eval_iters must be >= 0");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ValidationError("temperature must be positive");
    if (outer_iters < 0) throw ValidationError("outer_iters must be >= 0");
    if (!(epsilon_df > 0.0 && epsilon_df <= 1e-6)) throw ValidationError("epsilon_df must lie in (0, 1e-6]");
    if (!(model_smoothing >= 0.0) || !std::isfinite(model_smoothing))
        throw ValidationError("model_smoothing must be >= 0");
}

int ComboConfig::eval_iteration_budget(double gamma) const {
    if (max_eval_iters > 0) return max_eval_iters;
    const double n = std::ceil(std::log(1.0 / eval_tol) / (1.0 - gamma));
    return static_cast<int>(std::min(10.0 * std::max(n, 1.0), 1e9));
}

std::uint64_t ComboConfig::hash() const {
    Fnv1a h;
    h.add(config_to_key_values(*this));
    return h.digest();
}

std::string to_string(RhoChoice v) { return v == RhoChoice::DF ? "df" : "model-occupancy"; }
std::string to_string(MuChoice v) { return v == MuChoice::UniformActions ? "uniform" : "current-policy"; }
std::string to_string(SolveMode v) { return v == SolveMode::Sampled ? "sampled" : "exact"; }
std::string to_string(QSolver v) { return v == QSolver::ClosedForm ? "closed-form" : "iterative"; }
std::string to_string(ImprovementKind v) { return v == ImprovementKind::Softmax ? "softmax" : "greedy"; }

namespace {

int parse_int(const std::string& key, const std::string& value) {
    int v = 0;
    const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size())
        throw ValidationError(key + ": expected an integer, got '" + value + "'");
    return v;
}

double parse_number(const std::string& key, const std::string& value) {
    try {
        return parse_double(value);
    } catch (const ValidationError&) {
        throw ValidationError(key + ": expected a number, got '" + value + "'");
    }
}

template <typename E>
E parse_enum(const std::string& key, const std::string& value, std::initializer_list<E> options) {
    for (E e : options)
        if (to_string(e) == value) return e;
    std::string allowed;
    for (E e : options) allowed += (allowed.empty() ? "" : "|") + to_string(e);
    throw ValidationError(key + ": expected one of " + allowed + ", got '" + value + "'");
}

}  // namespace

void apply_config_field(ComboConfig& c, const std::string& key, const std::string& value) {
    if (key == "beta") c.beta = parse_number(key, value);
    else if (key == "f") c.f = parse_number(key, value);
    else if (key == "rho_choice") c.rho_choice = parse_enum(key, value, {RhoChoice::ModelOccupancy, RhoChoice::DF});
    else if (key == "mu_choice") c.mu_choice = parse_enum(key, value, {MuChoice::UniformActions, MuChoice::CurrentPolicy});
    else if (key == "rollout_len") c.rollout_len = parse_int(key, value);
    else if (key == "n_rollouts") c.n_rollouts = parse_int(key, value);
    else if (key == "solve_mode") c.solve_mode = parse_enum(key, value, {SolveMode::Exact, SolveMode::Sampled});
    else if (key == "q_solver") c.q_solver = parse_enum(key, value, {QSolver::Iterative, QSolver::ClosedForm});
    else if (key == "eval_tol") c.eval_tol = parse_number(key, value);
    else if (key == "max_eval_iters") c.max_eval_iters = parse_int(key, value);
    else if (key == "improvement") c.improvement = parse_enum(key, value, {ImprovementKind::Greedy, ImprovementKind::Softmax});
    else if (key == "temperature") c.temperature = parse_number(key, value);
    else if (key == "outer_iters") c.outer_iters = parse_int(key, value);
    else if (key == "epsilon_df") c.epsilon_df = parse_number(key, value);
    else if (key == "model_smoothing") c.model_smoothing = parse_number(key, value);
    else throw ValidationError("unknown config key '" + key + "'");
}

std::string config_to_key_values(const ComboConfig& c) {
    KeyValues kv;
    kv["beta"] = format_double(c.beta);
    kv["f"] = format_double(c.f);
    kv["rho_choice"] = to_string(c.rho_choice);
    kv["mu_choice"] = to_string(c.mu_choice);
    kv["rollout_len"] = std::to_string(c.rollout_len);
    kv["n_rollouts"] = std::to_string(c.n_rollouts);
    kv["solve_mode"] = to_string(c.solve_mode);
    kv["q_solver"] = to_string(c.q_solver);
    kv["eval_tol"] = format_double(c.eval_tol);
    kv["max_eval_iters"] = std::to_string(c.max_eval_iters);
    kv["improvement"] = to_string(c.improvement);
    kv["temperature"] = format_double(c.temperature);
    kv["outer_iters"] = std::to_string(c.outer_iters);
    kv["epsilon_df"] = format_double(c.epsilon_df);
    kv["model_smoothing"] = format_double(c.model_smoothing);
    return format_key_values(kv);
}

ComboConfig config_from_key_values(const std::string& text) {
    ComboConfig c;
    for (const auto& [k, v] : parse_key_values(text)) apply_config_field(c, k, v);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Rollouts and distributions

RolloutBuffer generate_model_rollouts(const LearnedModel& model, const Dataset& dataset,
                                      const TabularPolicy& rollout_policy, int h, int n_rollouts,
                                      std::uint64_t seed, std::string policy_id) {
    if (dataset.empty()) throw ValidationError("generate_model_rollouts: empty dataset");
    if (h < 1 || n_rollouts < 1) throw ValidationError("generate_model_rollouts: h and n_rollouts must be >= 1");
    const TabularMDP& m = model.mdp;
    Rng rng(seed);
    RolloutBuffer buf;
    buf.horizon = h;
    buf.rollout_policy_id = std::move(policy_id);
    const auto total = static_cast<std::size_t>(h) * static_cast<std::size_t>(n_rollouts);
    buf.transitions.reserve(total);
    buf.steps.reserve(total);
    const int n_data = static_cast<int>(dataset.size());
    for (int i = 0; i < n_rollouts; ++i) {
        int s = dataset.transitions()[static_cast<std::size_t>(rng.uniform_int(n_data))].s;
        for (int t = 0; t < h; ++t) {
            const int a = rng.categorical(rollout_policy.row(s).transpose());
            const int s_next = rng.categorical(m.dynamics(a).row(s).transpose());
            buf.transitions.push_back(Transition{s, a, m.reward(s, a), s_next});
            buf.steps.push_back(t);
            s = s_next;
        }
    }
    return buf;
}

OccupancyMeasure rollout_distribution(const RolloutBuffer& buffer, int n_states, int n_actions, double gamma) {
    if (buffer.transitions.empty()) throw ValidationError("rollout_distribution: empty buffer");
    if (buffer.steps.size() != buffer.transitions.size())
        throw ValidationError("rollout_distribution: step indices missing");
    Matrix d = Matrix::Zero(n_states, n_actions);
    for (std::size_t i = 0; i < buffer.transitions.size(); ++i) {
        const Transition& t = buffer.transitions[i];
        d(t.s, t.a) += std::pow(gamma, buffer.steps[i]);
    }
    d /= d.sum();
    return OccupancyMeasure(std::move(d));
}

OccupancyMeasure truncated_model_occupancy(const LearnedModel& model, const TabularPolicy& policy,
                                           const Dataset& dataset, int h) {
    if (dataset.empty()) throw ValidationError("truncated_model_occupancy: empty dataset");
    Vector start(dataset.n_states());
    for (int s = 0; s < dataset.n_states(); ++s)
        start(s) = static_cast<double>(dataset.count(s)) / static_cast<double>(dataset.size());
    return truncated_occupancy(model.mdp, policy, start, h);
}

TabularPolicy rollout_policy(const ComboConfig& config, const TabularPolicy& policy) {
    if (config.mu_choice == MuChoice::UniformActions)
        return TabularPolicy::uniform(policy.n_states(), policy.n_actions());
    return policy;
}

OccupancyMeasure model_rollout_distribution(const LearnedModel& model, const TabularPolicy& policy,
                                            const ComboConfig& config) {
    return state_action_occupancy(model.mdp, rollout_policy(config, policy));
}

OccupancyMeasure df_mixture(const OccupancyMeasure& data_dist, const OccupancyMeasure& model_dist, double f) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("df_mixture: f must lie in [0, 1]");
    if (data_dist.n_states() != model_dist.n_states() || data_dist.n_actions() != model_dist.n_actions())
        throw ValidationError("df_mixture: shape mismatch");
    return OccupancyMeasure(f * data_dist.sa_dist() + (1.0 - f) * model_dist.sa_dist());
}

OccupancyMeasure rho_distribution(const LearnedModel& model, const TabularPolicy& policy,
                                  const ComboConfig& config, const OccupancyMeasure& data_dist) {
    if (config.rho_choice == RhoChoice::DF)
        return df_mixture(data_dist, model_rollout_distribution(model, policy, config), config.f);
    return state_action_occupancy(model.mdp, policy);
}

Matrix penalty_table(const OccupancyMeasure& rho, const OccupancyMeasure& data_dist, const OccupancyMeasure& df,
                     double epsilon_df) {
    if (rho.n_states() != data_dist.n_states() || rho.n_actions() != data_dist.n_actions() ||
        df.n_states() != rho.n_states() || df.n_actions() != rho.n_actions())
        throw ValidationError("penalty_table: shape mismatch");
    if (!(epsilon_df > 0.0)) throw ValidationError("penalty_table: epsilon_df must be positive");
    Matrix pen(rho.n_states(), rho.n_actions());
    for (int s = 0; s < rho.n_states(); ++s) {
        for (int a = 0; a < rho.n_actions(); ++a) {
            const double r = rho(s, a);
            const double d = data_dist(s, a);
            pen(s, a) = (r == 0.0 && d == 0.0) ? 0.0 : (r - d) / std::max(df(s, a), epsilon_df);
        }
    }
    return pen;
}

namespace {

OccupancyMeasure lemma_df(const OccupancyMeasure& rho, const OccupancyMeasure& data_dist, double f) {
    return OccupancyMeasure(f * data_dist.sa_dist() + (1.0 - f) * rho.sa_dist());
}

}  // namespace

double nu(const OccupancyMeasure& rho, const OccupancyMeasure& data_dist, double f, double epsilon_df) {
    const Matrix pen = penalty_table(rho, data_dist, lemma_df(rho, data_dist, f), epsilon_df);
    return rho.sa_dist().cwiseProduct(pen).sum();
}

double nu_tilde(const OccupancyMeasure& rho, const OccupancyMeasure& data_dist, double f, double epsilon_df) {
    const Matrix pen = penalty_table(rho, data_dist, lemma_df(rho, data_dist, f), epsilon_df);
    return data_dist.sa_dist().cwiseProduct(pen).sum();
}

// ---------------------------------------------------------------------------
// Evaluation

ComboTerms prepare_combo_terms(const EmpiricalMDP& empirical, const LearnedModel& model,
                               const TabularPolicy& policy, const OccupancyMeasure& data_dist,
                               const ComboConfig& config, const SampledDistributions* sampled) {
    config.validate();
    const TabularMDP& mm = model.mdp;
    if (empirical.mdp.n_states() != mm.n_states() || empirical.mdp.n_actions() != mm.n_actions() ||
        policy.n_states() != mm.n_states() || policy.n_actions() != mm.n_actions() ||
        data_dist.n_states() != mm.n_states() || data_dist.n_actions() != mm.n_actions())
        throw ValidationError("combo: shape mismatch between model, empirical MDP, policy and data");

    OccupancyMeasure model_dist = sampled ? sampled->model_dist : model_rollout_distribution(model, policy, config);
    OccupancyMeasure df = df_mixture(data_dist, model_dist, config.f);
    OccupancyMeasure rho = config.rho_choice == RhoChoice::DF
                               ? df
                               : (sampled ? sampled->rho : state_action_occupancy(mm, policy));
    Matrix pen = penalty_table(rho, data_dist, df, config.epsilon_df);
    return ComboTerms{std::move(rho), std::move(df), std::move(pen),
                      interpolant_mdp(empirical.mdp, mm, config.f)};
}

ComboSolveResult solve_combo_iterative(const ComboTerms& terms, const TabularPolicy& policy,
                                       const ComboConfig& config) {
    const TabularMDP& m = terms.interpolant;
    const Matrix reward = m.reward() - config.beta * terms.penalty;
    const int budget = config.eval_iteration_budget(m.gamma());
    // Stopping at (1 - gamma) * tol keeps the distance to the fixed point
    // within gamma * tol. The second term guards against iterates whose
    // magnitude puts tol below floating-point resolution.
    const double base = (1.0 - m.gamma()) * config.eval_tol;
    Matrix q = Matrix::Zero(m.n_states(), m.n_actions());
    double delta = std::numeric_limits<double>::infinity();
    int k = 0;
    bool converged = false;
    while (k < budget) {
        Matrix next = bellman_backup(m, policy, reward, q);
        delta = (next - q).cwiseAbs().maxCoeff();
        q = std::move(next);
        ++k;
        if (!std::isfinite(delta)) break;
        const double floor = 64.0 * std::numeric_limits<double>::epsilon() * q.cwiseAbs().maxCoeff();
        if (delta <= std::max(base, floor)) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw ConvergenceError("combo policy evaluation did not converge within " + std::to_string(budget) +
                                   " iterations",
                               k, delta);
    const double nu_value = terms.rho.sa_dist().cwiseProduct(terms.penalty).sum();
    return ComboSolveResult{QTable{std::move(q)}, terms.penalty, nu_value, k, true, delta, terms.rho, terms.df};
}

ComboSolveResult solve_combo_closed_form(const ComboTerms& terms, const TabularPolicy& policy,
                                         const ComboConfig& config) {
    const TabularMDP& m = terms.interpolant;
    QTable q = solve_policy_q(m, policy, m.reward() - config.beta * terms.penalty);
    const double nu_value = terms.rho.sa_dist().cwiseProduct(terms.penalty).sum();
    return ComboSolveResult{std::move(q), terms.penalty, nu_value, 0, true, 0.0, terms.rho, terms.df};
}

ComboSolveResult combo_policy_evaluation(const EmpiricalMDP& empirical, const LearnedModel& model,
                                         const TabularPolicy& policy, const OccupancyMeasure& data_dist,
                                         const ComboConfig& config, const SampledDistributions* sampled) {
    const ComboTerms terms = prepare_combo_terms(empirical, model, policy, data_dist, config, sampled);
    return config.q_solver == QSolver::ClosedForm ? solve_combo_closed_form(terms, policy, config)
                                                  : solve_combo_iterative(terms, policy, config);
}

// ---------------------------------------------------------------------------
// Improvement and the outer loop

TabularPolicy combo_policy_improvement(const ComboSolveResult& result, const ComboConfig& config,
                                       const TabularPolicy& previous) {
    const Matrix& q = result.q.values;
    if (previous.n_states() != q.rows() || previous.n_actions() != q.cols())
        throw ValidationError("combo_policy_improvement: shape mismatch");
    Matrix probs = previous.probs();
    const Vector& visit = result.rho_used.state_dist();
    for (int s = 0; s < q.rows(); ++s) {
        if (!(visit(s) > 0.0)) continue;
        if (config.improvement == ImprovementKind::Greedy) {
            probs.row(s).setZero();
            probs(s, greedy_action(q.row(s))) = 1.0;
        } else {
            const double top = q.row(s).maxCoeff();
            Eigen::RowVectorXd w = ((q.row(s).array() - top) / config.temperature).exp().matrix();
            probs.row(s) = w / w.sum();
        }
    }
    return TabularPolicy(std::move(probs));
}

double regularizer_value(const ComboSolveResult& result, const OccupancyMeasure& data_dist) {
    const Matrix& q = result.q.values;
    return result.rho_used.sa_dist().cwiseProduct(q).sum() - data_dist.sa_dist().cwiseProduct(q).sum();
}

ComboRun combo_outer_loop(const EmpiricalMDP& empirical, const LearnedModel& model,
                          const OccupancyMeasure& data_dist, const ComboConfig& config, std::uint64_t seed,
                          const ReturnProbe& probe, const Dataset* rollout_source) {
    config.validate();
    const TabularMDP& mm = model.mdp;
    if (config.solve_mode == SolveMode::Sampled && rollout_source == nullptr)
        throw ValidationError("combo_outer_loop: sampled mode needs a dataset for rollout start states");
    ComboRun run{TabularPolicy::uniform(mm.n_states(), mm.n_actions()), {}, {}, model};
    for (int i = 0; i < config.outer_iters; ++i) {
        std::optional<SampledDistributions> sampled;
        if (config.solve_mode == SolveMode::Sampled) {
            const auto tag = static_cast<std::uint64_t>(i) * 2;
            const TabularPolicy mu = rollout_policy(config, run.policy);
            const RolloutBuffer mu_buf = generate_model_rollouts(model, *rollout_source, mu, config.rollout_len,
                                                                 config.n_rollouts, mix_seed(seed, tag), "mu");
            OccupancyMeasure model_dist = rollout_distribution(mu_buf, mm.n_states(), mm.n_actions(), mm.gamma());
            OccupancyMeasure rho = model_dist;
            if (config.rho_choice == RhoChoice::ModelOccupancy && config.mu_choice != MuChoice::CurrentPolicy) {
                const RolloutBuffer pi_buf = generate_model_rollouts(
                    model, *rollout_source, run.policy, config.rollout_len, config.n_rollouts, mix_seed(seed, tag + 1), "pi");
                rho = rollout_distribution(pi_buf, mm.n_states(), mm.n_actions(), mm.gamma());
            }
            sampled = SampledDistributions{std::move(rho), std::move(model_dist)};
        }
        ComboSolveResult res = combo_policy_evaluation(empirical, model, run.policy, data_dist, config,
                                                       sampled ? &*sampled : nullptr);
        run.policy = combo_policy_improvement(res, config, run.policy);
        run.iterations.push_back(std::move(res));
        if (probe) run.true_returns.push_back(probe(run.policy));
    }
    return run;
}

ComboRun run_combo(const TabularMDP& truth_for_eval, const Dataset& dataset, const ComboConfig& config,
                   std::uint64_t seed, bool log_true_returns) {
    config.validate();
    const LearnedModel model = fit_mle_model(dataset, truth_for_eval, config.model_smoothing);
    const EmpiricalMDP empirical = build_empirical_mdp(dataset, truth_for_eval);
    ReturnProbe probe;
    if (log_true_returns)
        probe = [&truth_for_eval](const TabularPolicy& p) { return policy_return(truth_for_eval, p); };
    return combo_outer_loop(empirical, model, dataset_distribution(dataset), config, seed, probe, &dataset);
}

// ---------------------------------------------------------------------------
// Minimum conservatism

MinBetaAnalysis analyze_min_beta(const EmpiricalMDP& empirical, const LearnedModel& model, const TabularMDP& truth,
                                 const TabularPolicy& policy, const ComboConfig& config,
                                 const OccupancyMeasure& data_dist) {
    const ComboTerms terms = prepare_combo_terms(empirical, model, policy, data_dist, config);
    const TabularMDP& m = terms.interpolant;
    MinBetaAnalysis out;
    out.nu_value = terms.rho.sa_dist().cwiseProduct(terms.penalty).sum();
    if (!(out.nu_value > 0.0))
        throw UnattainableBound("min beta: expected penalty is " + format_double(out.nu_value) +
                                "; the regularizer cannot lower the expected value");

    const Vector& mu0 = m.init_dist();
    const double unpenalized = expected_initial_value(mu0, policy, solve_policy_q(m, policy, m.reward()).values);
    const double true_value = expected_initial_value(truth.init_dist(), policy, exact_policy_q(truth, policy).values);
    out.overestimation = unpenalized - true_value;
    out.slope = expected_initial_value(mu0, policy, apply_resolvent(m, policy, terms.penalty));

    const double scale = std::max(1.0, std::abs(true_value));
    if (out.overestimation <= 1e-12 * scale) {
        out.beta_star = 0.0;
        return out;
    }
    if (!(out.slope > 0.0))
        throw UnattainableBound("min beta: critic overestimates by " + format_double(out.overestimation) +
                                " but the penalty does not lower the expected value (slope " +
                                format_double(out.slope) + ")");
    out.beta_star = out.overestimation / out.slope;
    return out;
}

double compute_min_beta(const EmpiricalMDP& empirical, const LearnedModel& model, const TabularMDP& truth,
                        const TabularPolicy& policy, const ComboConfig& config, const OccupancyMeasure& data_dist) {
    return analyze_min_beta(empirical, model, truth, policy, config, data_dist).beta_star;
}

std::string solve_result_to_json(const ComboSolveResult& result) {
    Json j;
    j["q"] = matrix_to_json(result.q.values);
    j["penalty"] = matrix_to_json(result.penalty);
    j["nu"] = result.nu_value;
    j["iters_used"] = result.iters_used;
    j["converged"] = result.converged;
    j["last_delta"] = result.last_delta;
    j["rho"] = matrix_to_json(result.rho_used.sa_dist());
    j["df"] = matrix_to_json(result.df_used.sa_dist());
    return j.dump();
}

}  // namespace combo
