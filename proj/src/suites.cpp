#include "combo/suites.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "combo/baselines.hpp"
#include "combo/environment.hpp"
#include "combo/errors.hpp"
#include "combo/rng.hpp"

namespace combo {

TabularPolicy random_policy(int n_states, int n_actions, std::uint64_t seed) {
    Rng rng(seed);
    Matrix p(n_states, n_actions);
    for (int s = 0; s < n_states; ++s) p.row(s) = rng.simplex(n_actions).transpose();
    return TabularPolicy(std::move(p));
}

namespace {

// Per-stream tags so the pieces of an instance use independent seeds.
enum : std::uint64_t { kTagMdp = 1, kTagBehavior, kTagData, kTagCover, kTagPolicy, kTagBias, kTagConfig };

Dataset with_coverage(const TabularMDP& truth, const Dataset& base, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Transition> extra;
    for (int s = 0; s < truth.n_states(); ++s)
        for (int a = 0; a < truth.n_actions(); ++a)
            extra.push_back({s, a, truth.reward(s, a), rng.categorical(truth.dynamics(a).row(s).transpose())});
    return base.concatenated(Dataset(truth.n_states(), truth.n_actions(), std::move(extra)));
}

}  // namespace

Instance make_instance(std::uint64_t seed, const InstanceOptions& o) {
    if (o.min_states < 1 || o.max_states < o.min_states) throw ValidationError("instance: bad state range");
    Rng rng(seed);
    EnvSpec spec;
    spec.kind = EnvKind::RandomMDP;
    spec.n_states = o.min_states + rng.uniform_int(o.max_states - o.min_states + 1);
    spec.n_actions = o.n_actions;
    spec.branching = std::min(spec.n_states, 1 + rng.uniform_int(3));
    spec.seed = mix_seed(seed, kTagMdp);
    spec.gamma = o.gamma;
    const TabularMDP truth = make_environment(spec);
    const int ns = truth.n_states();
    const int na = truth.n_actions();

    const TabularPolicy behavior = random_policy(ns, na, mix_seed(seed, kTagBehavior));
    Dataset data = collect_dataset(truth, behavior, std::max(1, o.transitions_per_cell * ns * na), 10,
                                   mix_seed(seed, kTagData));
    if (o.full_coverage) data = with_coverage(truth, data, mix_seed(seed, kTagCover));

    EmpiricalMDP empirical = build_empirical_mdp(data, truth);
    LearnedModel model = fit_mle_model(data, truth, 0.0);
    switch (o.bias) {
        case InstanceBias::None: break;
        case InstanceBias::DynamicsNoise: model = inject_model_bias(model, o.bias_magnitude, mix_seed(seed, kTagBias)); break;
        case InstanceBias::PessimisticReward: model = shift_model_reward(model, -o.bias_magnitude); break;
        case InstanceBias::OptimisticReward: model = shift_model_reward(model, o.bias_magnitude); break;
    }

    Rng crng(mix_seed(seed, kTagConfig));
    ComboConfig config;
    config.beta = 3.0 * crng.uniform();
    config.f = crng.uniform();
    config.rho_choice = crng.uniform() < 0.5 ? RhoChoice::ModelOccupancy : RhoChoice::DF;
    config.mu_choice = crng.uniform() < 0.5 ? MuChoice::CurrentPolicy : MuChoice::UniformActions;
    config.eval_tol = 1e-10;

    OccupancyMeasure d = dataset_distribution(data);
    return Instance{truth,
                    std::move(data),
                    std::move(empirical),
                    std::move(model),
                    std::move(d),
                    random_policy(ns, na, mix_seed(seed, kTagPolicy)),
                    behavior,
                    config};
}

VerificationReport check_fixed_point_equivalence(const Instance& inst, std::uint64_t seed) {
    constexpr double tol = 1e-7;
    ComboConfig it = inst.config;
    it.q_solver = QSolver::Iterative;
    ComboConfig cf = inst.config;
    cf.q_solver = QSolver::ClosedForm;
    const ComboSolveResult a = combo_policy_evaluation(inst.empirical, inst.model, inst.policy, inst.data_dist, it);
    const ComboSolveResult b = combo_policy_evaluation(inst.empirical, inst.model, inst.policy, inst.data_dist, cf);
    const double gap = (a.q.values - b.q.values).cwiseAbs().maxCoeff();
    VerificationReport r = make_report("fixed_point_equivalence", gap <= tol, tol - gap, tol, seed);
    r.witness = {{"sup_gap", gap},
                 {"iterations", a.iters_used},
                 {"q_scale", b.q.values.cwiseAbs().maxCoeff()},
                 {"n_states", inst.truth.n_states()},
                 {"beta", inst.config.beta},
                 {"f", inst.config.f},
                 {"rho_choice", to_string(inst.config.rho_choice)},
                 {"mu_choice", to_string(inst.config.mu_choice)}};
    return r;
}

VerificationReport check_cql_pointwise_bound(const TabularMDP& truth, const TabularPolicy& policy,
                                             const TabularPolicy& behavior, double beta, std::uint64_t seed) {
    constexpr double tol = 1e-8;
    const EmpiricalMDP exact{truth, Mask::Constant(truth.n_states(), truth.n_actions(), true)};
    BaselineConfig c;
    c.beta_cql = beta;
    c.eval_tol = 1e-10;
    const Vector v_hat = state_values(policy, cql_policy_evaluation(exact, policy, behavior, c).values);
    const Vector v_true = state_values(policy, exact_policy_q(truth, policy).values);
    Eigen::Index worst = 0;
    const double excess = (v_hat - v_true).maxCoeff(&worst);
    VerificationReport r = make_report("cql_pointwise_bound", excess <= tol, tol - excess, tol, seed);
    r.witness = {{"worst_state", worst}, {"v_hat", v_hat(worst)}, {"v_true", v_true(worst)}, {"beta", beta}};
    return r;
}

VerificationReport check_pointwise_overestimation_fixture() {
    constexpr double tol = 1e-8;
    // State 0 branches to one of two absorbing states (action 0 to state 1,
    // action 1 to state 2); both actions stay put in states 1 and 2.
    std::vector<Matrix> dyn(2, Matrix::Zero(3, 3));
    dyn[0](0, 1) = 1.0;
    dyn[1](0, 2) = 1.0;
    for (int s = 1; s < 3; ++s) {
        dyn[0](s, s) = 1.0;
        dyn[1](s, s) = 1.0;
    }
    Matrix reward(3, 2);
    reward << 0.0, 0.0, 0.5, 0.2, 0.3, 1.0;
    Vector mu0 = Vector::Zero(3);
    mu0(0) = 1.0;
    const TabularMDP truth(dyn, reward, mu0, 0.9);

    // State 2 is over-represented relative to the policy's occupancy.
    std::vector<Transition> tr;
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a) {
            const int reps = s == 2 ? 40 : 5;
            const int next = s == 0 ? 1 + a : s;
            for (int k = 0; k < reps; ++k) tr.push_back({s, a, reward(s, a), next});
        }
    const Dataset data(3, 2, std::move(tr));
    const EmpiricalMDP empirical = build_empirical_mdp(data, truth);
    const LearnedModel model = fit_mle_model(data, truth, 0.0);
    const TabularPolicy policy = TabularPolicy::uniform(3, 2);
    ComboConfig config;
    config.beta = 1.0;
    config.f = 1.0;
    config.eval_tol = 1e-12;
    const OccupancyMeasure d = dataset_distribution(data);
    const ComboSolveResult res = combo_policy_evaluation(empirical, model, policy, d, config);
    const Matrix q_true = exact_policy_q(truth, policy).values;

    double best = -std::numeric_limits<double>::infinity();
    int best_s = -1;
    int best_a = -1;
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a)
            if (data.count(s, a) > 0 && res.q(s, a) - q_true(s, a) > best) {
                best = res.q(s, a) - q_true(s, a);
                best_s = s;
                best_a = a;
            }
    const double expected_gap = expected_initial_value(mu0, policy, res.q.values) -
                                expected_initial_value(mu0, policy, q_true);
    const bool passed = best > tol && expected_gap <= tol;
    VerificationReport r = make_report("pointwise_overestimation_fixture", passed, std::min(best - tol, tol - expected_gap), tol);
    r.witness = {{"cell_state", best_s},
                 {"cell_action", best_a},
                 {"pointwise_excess", best},
                 {"expected_gap", expected_gap}};
    return r;
}

// ---------------------------------------------------------------------------
// Suites

std::vector<VerificationReport> suite_interpolation_lemma(int samples, std::uint64_t seed) {
    return {check_interpolation_lemma(samples, seed)};
}

std::vector<VerificationReport> suite_fixed_point(int samples, std::uint64_t seed) {
    std::vector<VerificationReport> out;
    for (int i = 0; i < samples; ++i) {
        const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(i));
        const Instance inst = make_instance(s);
        out.push_back(check_fixed_point_equivalence(inst, s));
        ComboConfig it = inst.config;
        it.q_solver = QSolver::Iterative;
        const ComboSolveResult res = combo_policy_evaluation(inst.empirical, inst.model, inst.policy, inst.data_dist, it);
        VerificationReport r = check_pointwise_identity(res, inst.empirical, inst.model, inst.policy, it.f, it.beta);
        r.seed = s;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<VerificationReport> suite_lower_bound(int samples, int optimistic, std::uint64_t seed) {
    std::vector<VerificationReport> out;
    for (int i = 0; i < samples + optimistic; ++i) {
        const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(i));
        InstanceOptions o;
        o.max_states = 12;
        o.transitions_per_cell = 5;
        const bool fixture = i >= samples;
        if (fixture) {
            o.bias = InstanceBias::OptimisticReward;
            o.bias_magnitude = 0.5;
        } else {
            switch (i % 3) {
                case 0: break;
                case 1: o.bias = InstanceBias::DynamicsNoise; o.bias_magnitude = 0.1; break;
                default: o.bias = InstanceBias::PessimisticReward; o.bias_magnitude = 0.1; break;
            }
        }
        Instance inst = make_instance(s, o);
        inst.config.rho_choice = RhoChoice::ModelOccupancy;
        inst.config.mu_choice = MuChoice::CurrentPolicy;
        if (fixture) inst.config.f = 0.5;
        else inst.config.f = std::max(inst.config.f, 0.05);
        VerificationReport r = check_expected_lower_bound(inst.truth, inst.empirical, inst.model, inst.policy,
                                                          inst.config, inst.data_dist, fixture);
        r.seed = s;
        r.witness["optimistic_fixture"] = fixture;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<VerificationReport> suite_cql_pointwise(int samples, std::uint64_t seed) {
    std::vector<VerificationReport> out;
    for (int i = 0; i < samples; ++i) {
        const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(i));
        const Instance inst = make_instance(s, InstanceOptions{.transitions_per_cell = 0});
        out.push_back(check_cql_pointwise_bound(inst.truth, inst.policy, inst.behavior, inst.config.beta, s));
    }
    return out;
}

std::vector<VerificationReport> suite_prop2(int samples, std::uint64_t seed) {
    std::vector<VerificationReport> out;
    for (int i = 0; i < samples; ++i) {
        const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(i));
        InstanceOptions o;
        o.max_states = 10;
        o.transitions_per_cell = 5;
        o.full_coverage = (i % 2 == 0);
        const Instance inst = make_instance(s, o);
        VerificationReport r = check_prop2_ordering(inst.truth.poisoned(), inst.dataset, inst.policy, inst.config.beta);
        r.seed = s;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<VerificationReport> suite_interpolant(int samples, std::uint64_t seed, AlphaBasis basis) {
    static constexpr double kMagnitudes[] = {0.0, 0.05, 0.2};
    std::vector<VerificationReport> out;
    for (int i = 0; i < samples; ++i) {
        const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(i));
        InstanceOptions o;
        o.max_states = 12;
        o.transitions_per_cell = 3;
        o.full_coverage = false;
        o.bias = InstanceBias::DynamicsNoise;
        o.bias_magnitude = kMagnitudes[i % 3];
        const Instance inst = make_instance(s, o);
        VerificationReport r =
            check_interpolant_return_bound(inst.empirical.mdp, inst.model.mdp, inst.truth, inst.config.f, inst.policy, basis);
        r.seed = s;
        r.witness["bias_magnitude"] = o.bias_magnitude;
        out.push_back(std::move(r));
    }
    return out;
}

ComboConfig gridworld_combo_config() {
    ComboConfig c;
    c.beta = 0.5;
    c.f = 0.5;
    c.rho_choice = RhoChoice::DF;
    c.mu_choice = MuChoice::UniformActions;
    return c;
}

ExperimentConfig gridworld_experiment(int n_transitions) {
    ExperimentConfig e;
    e.env.kind = EnvKind::Gridworld;
    e.env.width = 5;
    e.env.height = 5;
    e.env.goal = {4, 4};
    e.env.slip = 0.1;
    e.env.gamma = 0.9;
    e.quality = BehaviorQuality::Medium;
    e.n_transitions = n_transitions;
    e.episode_len = 25;
    e.combo = gridworld_combo_config();
    e.record_wall_time = false;
    return e;
}

std::vector<SafeImprovementOutcome> suite_safe_improvement(int seeds, std::uint64_t seed,
                                                           const SafeImprovementSetup& setup) {
    EnvSpec spec;
    spec.kind = EnvKind::Gridworld;
    spec.width = setup.width;
    spec.height = setup.height;
    spec.goal = {setup.width - 1, setup.height - 1};
    spec.slip = setup.slip;
    spec.gamma = setup.gamma;
    const TabularMDP truth = make_environment(spec);
    const TabularPolicy behavior = make_behavior_policy(truth, BehaviorQuality::Medium, seed);
    const ConcentrationConfig conc = ConcentrationConfig::defaults(truth);
    std::vector<SafeImprovementOutcome> out;
    for (int i = 0; i < seeds; ++i) {
        const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(i));
        const Dataset data = collect_dataset(truth, behavior, setup.n_transitions, setup.episode_len, s);
        SafeImprovementOutcome o;
        o.report = check_safe_policy_improvement(truth, data, setup.config, conc, s, behavior);
        o.j_out = o.report.witness["j_out"].get<double>();
        o.j_behavior = o.report.witness["j_behavior"].get<double>();
        out.push_back(std::move(o));
    }
    return out;
}

GeneralizationCheck suite_generalization(int seeds, std::uint64_t seed, int relabel_goal, int n_transitions) {
    ExperimentConfig base = gridworld_experiment(n_transitions);
    base.data_seed = seed;
    std::vector<std::uint64_t> ids;
    for (int i = 0; i < seeds; ++i) ids.push_back(static_cast<std::uint64_t>(i));
    GeneralizationCheck out;
    out.summary = run_generalization_suite(base, relabel_goal, {Algo::COMBO, Algo::BC, Algo::CQL}, ids);
    const AlgoSummary& combo = out.summary.algos[0];
    const AlgoSummary& bc = out.summary.algos[1];
    const AlgoSummary& cql = out.summary.algos[2];
    const double slack = 0.05 * out.summary.optimal_return;
    const double margin = std::min(combo.mean - bc.mean, combo.mean - (cql.mean - slack));
    const bool failed_runs = combo.n_failed + bc.n_failed + cql.n_failed > 0;
    out.report = make_report("generalization", margin >= 0.0 && !failed_runs, margin, 0.0, seed);
    out.report.witness["relabel_goal"] = relabel_goal;
    out.report.witness["combo_mean"] = combo.mean;
    out.report.witness["bc_mean"] = bc.mean;
    out.report.witness["cql_mean"] = cql.mean;
    out.report.witness["optimal_return"] = out.summary.optimal_return;
    out.report.witness["batch_mean"] = out.summary.batch_mean;
    out.report.witness["batch_max"] = out.summary.batch_max;
    out.report.witness["failed_runs"] = combo.n_failed + bc.n_failed + cql.n_failed;
    return out;
}

std::vector<VerificationReport> suite_selection(int seeds, std::uint64_t seed, int n_transitions) {
    ExperimentConfig base = gridworld_experiment(n_transitions);
    base.data_seed = seed;
    const TabularMDP truth = evaluation_mdp(base);
    const TabularMDP blind = truth.poisoned();
    std::vector<ComboConfig> candidates;
    for (double beta : {0.5, 1.0, 5.0}) {
        ComboConfig c = base.combo;
        c.beta = beta;
        candidates.push_back(c);
    }
    std::vector<VerificationReport> out;
    for (int i = 0; i < seeds; ++i) {
        const std::uint64_t s = static_cast<std::uint64_t>(i);
        const Dataset data = make_experiment_dataset(base, s);
        const Selection sel = select_hyperparameters(candidates, data, blind, s);
        std::vector<double> returns;
        for (const CandidateScore& c : sel.table)
            returns.push_back(c.policy ? policy_return(truth, *c.policy) : -std::numeric_limits<double>::infinity());
        const double best = *std::max_element(returns.begin(), returns.end());
        const double chosen = returns[sel.index];
        const double margin = chosen - (best - 0.1 * std::abs(best));
        VerificationReport r = make_report("selection", margin >= 0.0, margin, 0.1, s);
        r.witness["selected_beta"] = sel.config.beta;
        r.witness["selected_return"] = chosen;
        r.witness["best_return"] = best;
        Json regs = Json::array();
        for (const CandidateScore& c : sel.table)
            regs.push_back(c.regularizer_value ? Json(*c.regularizer_value) : Json(nullptr));
        r.witness["regularizer_values"] = regs;
        out.push_back(std::move(r));
    }
    return out;
}

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"interpolation-lemma", "fixed-point",  "lower-bound",
                                                "cql-contrast",        "interpolant", "safe-improvement",
                                                "generalization",      "selection"};
    return names;
}

std::vector<VerificationReport> run_suite(const std::string& name, const SuiteOptions& o) {
    auto n = [&](int def) { return o.samples > 0 ? o.samples : def; };
    if (name == "interpolation-lemma") return suite_interpolation_lemma(n(1000), o.seed);
    if (name == "fixed-point") return suite_fixed_point(n(100), o.seed);
    if (name == "lower-bound") return suite_lower_bound(n(100), 40, o.seed);
    if (name == "cql-contrast") {
        std::vector<VerificationReport> out = suite_cql_pointwise(n(100), o.seed);
        out.push_back(check_pointwise_overestimation_fixture());
        const auto p2 = suite_prop2(n(500), o.seed);
        out.insert(out.end(), p2.begin(), p2.end());
        return out;
    }
    if (name == "interpolant") return suite_interpolant(n(200), o.seed);
    if (name == "safe-improvement") {
        std::vector<VerificationReport> out;
        for (auto& r : suite_safe_improvement(n(20), o.seed)) out.push_back(std::move(r.report));
        return out;
    }
    if (name == "generalization") return {suite_generalization(n(20), o.seed).report};
    if (name == "selection") return suite_selection(n(20), o.seed);
    throw ValidationError("unknown suite '" + name + "'");
}

}  // namespace combo
