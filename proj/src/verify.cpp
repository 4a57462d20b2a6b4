#include "combo/verify.hpp"

#include <cmath>
#include <limits>

#include "combo/errors.hpp"
#include "combo/rng.hpp"

namespace combo {

ConcentrationConfig ConcentrationConfig::defaults(const TabularMDP& template_mdp, double delta) {
    ConcentrationConfig c;
    c.delta = delta;
    const double log_term = std::log(2.0 / delta);
    const double r_max = template_mdp.r_max() > 0.0 ? template_mdp.r_max() : 1.0;
    const double gamma = template_mdp.gamma();
    c.c_r = r_max * std::sqrt(log_term / 2.0);
    c.c_p = std::sqrt(2.0 * template_mdp.n_states() * log_term);
    c.c_rt = ((1.0 - gamma) * c.c_r + 2.0 * gamma * c.c_p * r_max) / r_max;
    return c;
}

void ConcentrationConfig::validate() const {
    if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("concentration: delta must lie in (0, 1)");
    for (double v : {c_r, c_p, c_rt})
        if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("concentration: constants must be finite and >= 0");
}

std::string report_to_jsonl(const VerificationReport& r) {
    Json j;
    j["check_name"] = r.check_name;
    j["passed"] = r.passed;
    j["status"] = r.status;
    j["margin"] = r.margin;
    j["tolerance"] = r.tolerance;
    j["seed"] = r.seed;
    j["witness"] = r.witness;
    return j.dump() + "\n";
}

std::string reports_csv_header() { return "check_name,passed,margin,tolerance,seed\n"; }

std::string report_to_csv_row(const VerificationReport& r) {
    return r.check_name + "," + (r.passed ? "true" : "false") + "," + format_double(r.margin) + "," +
           format_double(r.tolerance) + "," + std::to_string(r.seed) + "\n";
}

VerificationReport make_report(std::string name, bool passed, double margin, double tolerance,
                               std::uint64_t seed) {
    VerificationReport r;
    r.check_name = std::move(name);
    r.passed = passed;
    r.status = passed ? "pass" : "fail";
    r.margin = margin;
    r.tolerance = tolerance;
    r.seed = seed;
    return r;
}

namespace {

Json vector_json(const Matrix& m) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data()[i]);
    return out;
}

double tv_of(const OccupancyMeasure& a, const OccupancyMeasure& b) {
    return 0.5 * (a.sa_dist() - b.sa_dist()).cwiseAbs().sum();
}

Matrix floored_distribution(Rng& rng, int n, double floor, std::vector<bool>& keep) {
    const Vector raw = rng.simplex(n);
    Matrix out(n, 1);
    for (int i = 0; i < n; ++i) out(i, 0) = (keep[static_cast<std::size_t>(i)] ? raw(i) : 0.0) + floor;
    return out / out.sum();
}

}  // namespace

// ---------------------------------------------------------------------------

VerificationReport check_interpolation_lemma(int samples, std::uint64_t seed) {
    if (samples < 1) throw ValidationError("check_interpolation_lemma: samples must be >= 1");
    constexpr double tol = 1e-12;
    Rng rng(seed);
    double min_nu = std::numeric_limits<double>::infinity();
    double max_nu_tilde = -std::numeric_limits<double>::infinity();
    Json failure;
    int checks = 0;
    auto fail = [&](const char* what, int sample, const OccupancyMeasure& rho, const OccupancyMeasure& d, double f,
                    double value) {
        if (!failure.is_null()) return;
        failure = {{"property", what}, {"sample", sample},      {"f", f}, {"value", value},
                   {"rho", vector_json(rho.sa_dist())}, {"d", vector_json(d.sa_dist())}};
    };

    for (int i = 0; i < samples; ++i) {
        const int n = 2 + rng.uniform_int(11);
        const double kind = rng.uniform();
        Matrix rho_m;
        Matrix d_m;
        if (kind < 0.1) {
            rho_m = rng.simplex(n);
            d_m = rho_m;
        } else if (kind < 0.3) {
            // Near-disjoint supports: each cell carries mass in at most one of
            // the two distributions, plus a small floor everywhere.
            std::vector<bool> in_rho(static_cast<std::size_t>(n));
            std::vector<bool> in_d(static_cast<std::size_t>(n));
            for (int c = 0; c < n; ++c) {
                in_rho[static_cast<std::size_t>(c)] = (c % 2 == 0);
                in_d[static_cast<std::size_t>(c)] = !in_rho[static_cast<std::size_t>(c)];
            }
            rho_m = floored_distribution(rng, n, 1e-6, in_rho);
            d_m = floored_distribution(rng, n, 1e-6, in_d);
        } else {
            rho_m = rng.simplex(n);
            d_m = rng.simplex(n);
        }
        const OccupancyMeasure rho(rho_m);
        const OccupancyMeasure d(d_m);
        const double tv = tv_of(rho, d);
        double prev = -std::numeric_limits<double>::infinity();
        for (int k = 0; k <= 10; ++k) {
            const double f = k / 10.0;
            const double v = nu(rho, d, f);
            const double vt = nu_tilde(rho, d, f);
            ++checks;
            min_nu = std::min(min_nu, v);
            max_nu_tilde = std::max(max_nu_tilde, vt);
            if (v < -tol) fail("nu >= 0", i, rho, d, f, v);
            if (prev > v + tol) fail("nu non-decreasing in f", i, rho, d, f, v - prev);
            const bool zero_expected = (k == 0) || tv <= tol;
            if ((v <= tol) != zero_expected) fail("nu zero iff f = 0 or rho = d", i, rho, d, f, v);
            if (vt > tol) fail("nu_tilde <= 0", i, rho, d, f, vt);
            if (tv > 1e-6 && k < 10 && !(vt < 0.0)) fail("nu_tilde < 0 off-distribution", i, rho, d, f, vt);
            prev = v;
        }
    }
    VerificationReport r = make_report("interpolation_lemma", failure.is_null(), min_nu, tol, seed);
    r.witness = {{"samples", samples}, {"evaluations", checks}, {"min_nu", min_nu}, {"max_nu_tilde", max_nu_tilde}};
    if (!failure.is_null()) r.witness["violation"] = failure;
    return r;
}

VerificationReport check_pointwise_identity(const ComboSolveResult& solve, const EmpiricalMDP& empirical,
                                            const LearnedModel& model, const TabularPolicy& policy, double f,
                                            double beta) {
    constexpr double tol = 1e-8;
    const TabularMDP mf = interpolant_mdp(empirical.mdp, model.mdp, f);
    const Matrix expected = exact_policy_q(mf, policy).values - beta * apply_resolvent(mf, policy, solve.penalty);
    const Matrix diff = (solve.q.values - expected).cwiseAbs();
    Eigen::Index rs = 0;
    Eigen::Index ca = 0;
    const double residual = diff.maxCoeff(&rs, &ca);
    VerificationReport r = make_report("pointwise_identity", solve.converged && residual <= tol, tol - residual, tol);
    r.witness = {{"residual", residual}, {"state", rs}, {"action", ca}, {"converged", solve.converged},
                 {"q_hat", solve.q.values(rs, ca)}, {"identity", expected(rs, ca)}};
    return r;
}

VerificationReport check_expected_lower_bound(const TabularMDP& truth, const EmpiricalMDP& empirical,
                                              const LearnedModel& model, const TabularPolicy& policy,
                                              const ComboConfig& config, const OccupancyMeasure& data_dist,
                                              bool expect_failure_at_zero) {
    constexpr double tol = 1e-8;
    MinBetaAnalysis analysis;
    try {
        analysis = analyze_min_beta(empirical, model, truth, policy, config, data_dist);
    } catch (const UnattainableBound& e) {
        VerificationReport r = make_report("expected_lower_bound", true, 0.0, tol);
        r.status = "inconclusive";
        r.witness = {{"reason", e.what()}};
        return r;
    }
    const Vector& mu0 = truth.init_dist();
    const double true_value = expected_initial_value(mu0, policy, exact_policy_q(truth, policy).values);
    auto critic_value = [&](double beta) {
        ComboConfig c = config;
        c.beta = beta;
        const ComboSolveResult res = combo_policy_evaluation(empirical, model, policy, data_dist, c);
        return expected_initial_value(mu0, policy, res.q.values);
    };
    const double beta_test = 1.01 * analysis.beta_star + 1.0;
    const double at_test = critic_value(beta_test);
    const double at_zero = critic_value(0.0);
    const double margin = true_value + tol - at_test;
    bool passed = margin >= 0.0;
    if (expect_failure_at_zero && !(at_zero > true_value + tol)) passed = false;
    VerificationReport r = make_report("expected_lower_bound", passed, margin, tol);
    r.witness = {{"beta_star", analysis.beta_star},
                 {"beta_test", beta_test},
                 {"overestimation", analysis.overestimation},
                 {"slope", analysis.slope},
                 {"nu", analysis.nu_value},
                 {"true_value", true_value},
                 {"critic_at_beta_test", at_test},
                 {"critic_at_zero", at_zero},
                 {"expect_failure_at_zero", expect_failure_at_zero}};
    return r;
}

VerificationReport check_dataset_overestimation(const OccupancyMeasure& rho, const OccupancyMeasure& data_dist,
                                                double f) {
    constexpr double tol = 1e-12;
    const double value = nu_tilde(rho, data_dist, f);
    const double tv = tv_of(rho, data_dist);
    VerificationReport r;
    if (tv <= 1e-9 || f >= 1.0) {
        r = make_report("dataset_overestimation", value <= tol, -value, tol);
        if (r.passed) r.status = "boundary";
    } else {
        r = make_report("dataset_overestimation", value < 0.0, -value, tol);
    }
    r.witness = {{"nu_tilde", value}, {"tv", tv}, {"f", f}};
    return r;
}

double prop2_condition(const TabularPolicy& policy, const TabularPolicy& behavior, const OccupancyMeasure& rho,
                       const OccupancyMeasure& data_state_dist, double epsilon_pb) {
    const Matrix ratio = policy.probs().cwiseQuotient(behavior.probs().cwiseMax(epsilon_pb));
    const double under_rho = rho.sa_dist().cwiseProduct(ratio).sum();
    const Vector& ds = data_state_dist.state_dist();
    double under_data = 0.0;
    for (int s = 0; s < policy.n_states(); ++s) under_data += ds(s) * policy.probs().row(s).dot(ratio.row(s));
    return under_rho - under_data;
}

Prop2Values prop2_values(const TabularMDP& template_mdp, const Dataset& dataset, const TabularPolicy& policy,
                         double beta, double epsilon_pb) {
    const EmpiricalMDP empirical = build_empirical_mdp(dataset, template_mdp);
    const LearnedModel model = fit_mle_model(dataset, template_mdp, 0.0);
    const TabularPolicy behavior = behavior_cloning(dataset);
    const OccupancyMeasure d = dataset_distribution(dataset);
    // rho(s, a) = d^pi_model(s) pi(a | s).
    const OccupancyMeasure rho = state_action_occupancy(model.mdp, policy);
    const Matrix q = exact_policy_q(empirical.mdp, policy).values;
    const Matrix& pi = policy.probs();
    const Matrix pb = behavior.probs().cwiseMax(epsilon_pb);
    const Vector& ds = d.state_dist();

    Prop2Values out;
    for (int s = 0; s < policy.n_states(); ++s) {
        if (!(ds(s) > 0.0)) continue;
        for (int a = 0; a < policy.n_actions(); ++a) {
            const double w = ds(s) * pi(s, a);
            // With f = 1, d_f = d = d(s) pi_b(a | s); the behavior factor is
            // floored exactly as in the CQL penalty.
            const double combo_pen = (rho(s, a) - d(s, a)) / (ds(s) * pb(s, a));
            const double cql_pen = (pi(s, a) - behavior(s, a)) / pb(s, a);
            out.delta_combo += w * (q(s, a) - beta * combo_pen);
            out.delta_cql += w * (q(s, a) - beta * cql_pen);
        }
    }
    out.condition = prop2_condition(policy, behavior, rho, d, epsilon_pb);
    return out;
}

VerificationReport check_prop2_ordering(const TabularMDP& truth, const Dataset& dataset, const TabularPolicy& policy,
                                        double beta, double epsilon_pb) {
    constexpr double tol = 1e-8;
    const Prop2Values v = prop2_values(truth, dataset, policy, beta, epsilon_pb);
    const double gap = v.delta_combo - v.delta_cql;
    VerificationReport r;
    if (v.condition > 0.0) {
        r = make_report("prop2_ordering", true, gap + tol, tol);
        r.status = "not-applicable";
    } else {
        r = make_report("prop2_ordering", gap >= -tol, gap + tol, tol);
    }
    r.witness = {{"delta_combo", v.delta_combo}, {"delta_cql", v.delta_cql}, {"condition", v.condition},
                 {"beta", beta}};
    return r;
}

Vector d_cql_distance(const TabularPolicy& policy, const TabularPolicy& behavior, double epsilon_pb) {
    const Matrix& pi = policy.probs();
    const Matrix ratio = pi.cwiseQuotient(behavior.probs().cwiseMax(epsilon_pb));
    return (pi.cwiseProduct(ratio.array().matrix() - Matrix::Ones(pi.rows(), pi.cols()))).rowwise().sum();
}

// ---------------------------------------------------------------------------
// Return in the interpolant MDP

InterpolantBound interpolant_return_bound(const TabularMDP& m1, const TabularMDP& m2, const TabularMDP& aux,
                                          double f, const TabularPolicy& policy, AlphaBasis basis) {
    if (m1.n_states() != aux.n_states() || m1.n_actions() != aux.n_actions() ||
        m2.n_states() != aux.n_states() || m2.n_actions() != aux.n_actions() || m1.gamma() != aux.gamma() ||
        m2.gamma() != aux.gamma())
        throw ValidationError("interpolant_return_bound: MDPs must share shape and discount");
    const TabularMDP mf = interpolant_mdp(m1, m2, f);
    const double gamma = aux.gamma();
    const int ns = aux.n_states();
    const int na = aux.n_actions();

    InterpolantBound out;
    out.j_interpolant = policy_return(mf, policy);
    out.j_aux = policy_return(aux, policy);

    double max_tv = 0.0;
    for (int a = 0; a < na; ++a)
        for (int s = 0; s < ns; ++s)
            max_tv = std::max(max_tv, tv_divergence(Vector(m2.dynamics(a).row(s).transpose()),
                                                    Vector(aux.dynamics(a).row(s).transpose())));
    out.model_term = 2.0 * gamma * (1.0 - f) / ((1.0 - gamma) * (1.0 - gamma)) * aux.r_max() * max_tv;

    const OccupancyMeasure occ =
        basis == AlphaBasis::Interpolant ? state_action_occupancy(mf, policy) : state_action_occupancy(aux, policy);
    const Vector v_aux = state_values(policy, exact_policy_q(aux, policy).values);
    double dyn = 0.0;
    for (int a = 0; a < na; ++a) {
        const Vector diff = (aux.dynamics(a) - m1.dynamics(a)) * v_aux;
        dyn += occ.sa_dist().col(a).dot(diff);
    }
    out.dynamics_term = gamma * f / (1.0 - gamma) * std::abs(dyn);
    out.reward_term = (f * occ.sa_dist().cwiseProduct((m1.reward() - aux.reward()).cwiseAbs()).sum() +
                       (1.0 - f) * occ.sa_dist().cwiseProduct((m2.reward() - aux.reward()).cwiseAbs()).sum()) /
                      (1.0 - gamma);
    out.alpha = out.model_term + out.dynamics_term + out.reward_term;
    return out;
}

VerificationReport check_interpolant_return_bound(const TabularMDP& m1, const TabularMDP& m2, const TabularMDP& aux,
                                                  double f, const TabularPolicy& policy, AlphaBasis basis) {
    constexpr double tol = 1e-10;
    const InterpolantBound b = interpolant_return_bound(m1, m2, aux, f, policy, basis);
    const double slack = b.alpha - std::abs(b.j_interpolant - b.j_aux);
    VerificationReport r = make_report("interpolant_return_bound", slack >= -tol, slack, tol);
    r.witness = {{"j_interpolant", b.j_interpolant}, {"j_aux", b.j_aux},         {"alpha", b.alpha},
                 {"model_term", b.model_term},       {"dynamics_term", b.dynamics_term},
                 {"reward_term", b.reward_term},     {"f", f},
                 {"basis", basis == AlphaBasis::Interpolant ? "interpolant" : "auxiliary"}};
    return r;
}

// ---------------------------------------------------------------------------
// Safe policy improvement

namespace {

// Exact reward offsets of the interpolant against the truth under the
// policy's own occupancy in the truth.
double reward_offset(const TabularMDP& truth, const EmpiricalMDP& empirical, const LearnedModel& model,
                     const TabularPolicy& policy, double f) {
    const OccupancyMeasure occ = state_action_occupancy(truth, policy);
    const Matrix& r = truth.reward();
    return (f * occ.sa_dist().cwiseProduct((empirical.mdp.reward() - r).cwiseAbs()).sum() +
            (1.0 - f) * occ.sa_dist().cwiseProduct((model.mdp.reward() - r).cwiseAbs()).sum()) /
           (1.0 - truth.gamma());
}

}  // namespace

ZetaBreakdown zeta_breakdown(const TabularMDP& truth, const Dataset& dataset, const LearnedModel& model,
                             const TabularPolicy& pi_out, const TabularPolicy& behavior, const ComboConfig& config,
                             const ConcentrationConfig& conc) {
    conc.validate();
    config.validate();
    const double gamma = truth.gamma();
    const double f = config.f;
    const double r_max = truth.r_max();
    const int ns = truth.n_states();
    const double n_actions = truth.n_actions();
    const double horizon2 = (1.0 - gamma) * (1.0 - gamma);

    // |D(s)| floored at 0.5 so unvisited states give a large finite weight.
    Vector inv_sqrt_count(ns);
    for (int s = 0; s < ns; ++s)
        inv_sqrt_count(s) = std::sqrt(n_actions / std::max(static_cast<double>(dataset.count(s)), 0.5));

    const Vector d_out = state_action_occupancy(truth, pi_out).state_dist();
    const Vector d_beh = state_action_occupancy(truth, behavior).state_dist();
    const Vector dcql = d_cql_distance(pi_out, behavior);

    ZetaBreakdown z;
    double e_out = 0.0;
    for (int s = 0; s < ns; ++s) e_out += d_out(s) * inv_sqrt_count(s) * std::sqrt(std::max(dcql(s), 0.0) + 1.0);
    z.sampling_term = 4.0 * f * gamma * r_max * conc.c_p / horizon2 * e_out;
    z.behavior_term = 4.0 * gamma * r_max * conc.c_p * f / horizon2 * d_beh.dot(inv_sqrt_count);

    const EmpiricalMDP empirical = build_empirical_mdp(dataset, truth);
    z.reward_term = reward_offset(truth, empirical, model, pi_out, f) + reward_offset(truth, empirical, model, behavior, f);
    z.model_term = 4.0 * (1.0 - f) * gamma * r_max / horizon2 * model_error_profile(model, truth).max_tv;

    const OccupancyMeasure d = dataset_distribution(dataset);
    z.c = nu(state_action_occupancy(model.mdp, pi_out), d, f, config.epsilon_df) -
          nu(state_action_occupancy(model.mdp, behavior), d, f, config.epsilon_df);
    z.penalty_term = config.beta * z.c / (1.0 - gamma);
    z.zeta = z.sampling_term + z.behavior_term + z.reward_term + z.model_term - z.penalty_term;
    return z;
}

double compute_zeta(const TabularMDP& truth, const Dataset& dataset, const LearnedModel& model,
                    const TabularPolicy& pi_out, const TabularPolicy& behavior, const ComboConfig& config,
                    const ConcentrationConfig& conc) {
    return zeta_breakdown(truth, dataset, model, pi_out, behavior, config, conc).zeta;
}

VerificationReport check_safe_policy_improvement(const TabularMDP& truth, const Dataset& dataset,
                                                 const ComboConfig& config, const ConcentrationConfig& conc,
                                                 std::uint64_t seed, const std::optional<TabularPolicy>& behavior) {
    constexpr double tol = 1e-10;
    const ComboRun run = run_combo(truth, dataset, config, seed, false);
    const TabularPolicy pi_b = behavior ? *behavior : behavior_cloning(dataset);
    const double j_out = policy_return(truth, run.policy);
    const double j_b = policy_return(truth, pi_b);
    const ZetaBreakdown z = zeta_breakdown(truth, dataset, run.model, run.policy, pi_b, config, conc);
    const double margin = j_out - (j_b - z.zeta);
    VerificationReport r = make_report("safe_policy_improvement", margin >= -tol, margin, tol, seed);
    if (!r.passed && !(z.c > 0.0)) {
        r.passed = true;
        r.status = "premise-unmet";
    }
    r.witness = {{"j_out", j_out},
                 {"j_behavior", j_b},
                 {"zeta", z.zeta},
                 {"sampling_term", z.sampling_term},
                 {"behavior_term", z.behavior_term},
                 {"reward_term", z.reward_term},
                 {"model_term", z.model_term},
                 {"c", z.c},
                 {"penalty_term", z.penalty_term},
                 {"premise_met", z.c > 0.0}};
    return r;
}

}  // namespace combo
