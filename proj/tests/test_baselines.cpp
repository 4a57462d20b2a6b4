#include <doctest.h>

#include <array>

#include "combo/baselines.hpp"
#include "combo/environment.hpp"
#include "combo/errors.hpp"
#include "fixtures.hpp"

using namespace combo;

namespace {

EmpiricalMDP exact_empirical(const TabularMDP& m) {
    return EmpiricalMDP{m, Mask::Constant(m.n_states(), m.n_actions(), true)};
}

/// Every (s, a) cell visited `k` times with transitions drawn from `truth`.
Dataset exhaustive(const TabularMDP& truth, int k, std::uint64_t seed) {
    std::vector<Transition> t;
    Rng rng(seed);
    for (int s = 0; s < truth.n_states(); ++s)
        for (int a = 0; a < truth.n_actions(); ++a)
            for (int i = 0; i < k; ++i)
                t.push_back({s, a, truth.reward(s, a), rng.categorical(truth.dynamics(a).row(s).transpose())});
    return Dataset(truth.n_states(), truth.n_actions(), t, seed);
}

double best_return(const TabularMDP& m) { return policy_return(m, value_iteration_oracle(m, 1e-12).first); }

}  // namespace

TEST_CASE("tabular CQL critic") {
    const TabularMDP truth = fixtures::random_mdp(5, 3, 0.9, 201);
    const EmpiricalMDP e = exact_empirical(truth);
    const TabularPolicy pi = fixtures::random_policy(5, 3, 202);
    BaselineConfig c;
    c.eval_tol = 1e-12;

    SUBCASE("matching policies leave plain evaluation") {
        CHECK(cql_penalty(pi, pi, c).cwiseAbs().maxCoeff() == 0.0);
        CHECK((cql_policy_evaluation(e, pi, pi, c).values - exact_policy_q(truth, pi).values).cwiseAbs().maxCoeff() <=
              1e-9);
    }
    SUBCASE("zero coefficient is plain evaluation") {
        c.beta_cql = 0.0;
        const TabularPolicy behavior = fixtures::random_policy(5, 3, 203);
        CHECK((cql_policy_evaluation(e, pi, behavior, c).values - exact_policy_q(truth, pi).values)
                  .cwiseAbs()
                  .maxCoeff() <= 1e-9);
    }
    SUBCASE("one-step closed form") {
        const TabularMDP m = fixtures::single_state(2, 1.0, 1e-9);
        const TabularPolicy greedy(fixtures::row({1.0, 0.0}));
        const QTable q = cql_closed_form(exact_empirical(m), greedy, TabularPolicy::uniform(1, 2), c);
        CHECK(q(0, 0) == doctest::Approx(0.0).epsilon(1e-8));
    }
    SUBCASE("iterative and closed form agree") {
        const TabularPolicy behavior = fixtures::random_policy(5, 3, 204);
        CHECK((cql_policy_evaluation(e, pi, behavior, c).values - cql_closed_form(e, pi, behavior, c).values)
                  .cwiseAbs()
                  .maxCoeff() <= 1e-8);
    }
    SUBCASE("floored behavior cells are counted") {
        Matrix first = Matrix::Zero(5, 3);
        first.col(0).setOnes();
        const TabularPolicy behavior(first);
        CHECK(count_floored_cells(TabularPolicy::uniform(5, 3), behavior, 1e-6) == 10);
    }
}

TEST_CASE("MOPO-style penalized planning") {
    const TabularMDP truth = fixtures::random_mdp(4, 3, 0.9, 211);
    const LearnedModel model{truth, 0.0, Mask::Constant(4, 3, true), 0, {}};
    BaselineConfig c;

    SUBCASE("no penalty on the truth is optimal") {
        c.lambda_mopo = 0.0;
        const TabularPolicy p = mopo_policy_optimization(model, Matrix::Ones(4, 3), c, truth.poisoned());
        CHECK(policy_return(truth, p) == doctest::Approx(best_return(truth)).epsilon(1e-10));
    }
    SUBCASE("constant uncertainty keeps the argmax") {
        c.lambda_mopo = 0.0;
        const TabularPolicy ref = mopo_policy_optimization(model, Matrix::Zero(4, 3), c, truth.poisoned());
        c.lambda_mopo = 3.0;
        CHECK(mopo_policy_optimization(model, Matrix::Constant(4, 3, 0.7), c, truth.poisoned()) == ref);
    }
    SUBCASE("a huge penalty avoids unvisited cells wherever an alternative exists") {
        Matrix u = Matrix::Zero(4, 3);
        u(0, 0) = u(0, 2) = u(1, 1) = u(2, 0) = u(2, 1) = u(3, 2) = 1.0;
        c.lambda_mopo = 1e6;
        const TabularPolicy p = mopo_policy_optimization(model, u, c, truth.poisoned());
        // Brute force: the best return among policies that stay on visited cells.
        double best = -1e300;
        for (int code = 0; code < 81; ++code) {
            std::array<int, 4> acts{};
            int rest = code;
            bool allowed = true;
            for (int s = 0; s < 4; ++s) {
                acts[static_cast<std::size_t>(s)] = rest % 3;
                rest /= 3;
                allowed = allowed && u(s, acts[static_cast<std::size_t>(s)]) == 0.0;
            }
            if (allowed) best = std::max(best, policy_return(truth, TabularPolicy::deterministic(acts, 3)));
        }
        for (int s = 0; s < 4; ++s) CHECK(u(s, greedy_action(p.row(s))) == 0.0);
        CHECK(policy_return(truth, p) == doctest::Approx(best).epsilon(1e-10));
    }
}

TEST_CASE("Dyna") {
    const TabularMDP truth = fixtures::random_mdp(5, 3, 0.9, 221);
    const Dataset data = exhaustive(truth, 6, 1);
    const EmpiricalMDP e = build_empirical_mdp(data, truth);
    const LearnedModel model = fit_mle_model(data, truth, 2.0);
    BaselineConfig c;
    c.eval_tol = 1e-12;
    c.outer_iters = 20;

    SUBCASE("f = 1 plans in the empirical MDP") {
        c.f = 1.0;
        const TabularPolicy p = dyna_policy_optimization(e, model, c, truth.poisoned());
        CHECK(policy_return(e.mdp, p) == doctest::Approx(best_return(e.mdp)).epsilon(1e-9));
    }
    SUBCASE("f = 0 plans in the learned model") {
        c.f = 0.0;
        const TabularPolicy p = dyna_policy_optimization(e, model, c, truth.poisoned());
        CHECK(policy_return(model.mdp, p) == doctest::Approx(best_return(model.mdp)).epsilon(1e-9));
    }
    SUBCASE("perfect model and exhaustive data reach the optimum") {
        const LearnedModel exact{truth, 0.0, Mask::Constant(5, 3, true), 0, {}};
        const TabularPolicy p = dyna_policy_optimization(exact_empirical(truth), exact, c, truth.poisoned());
        CHECK(policy_return(truth, p) == doctest::Approx(best_return(truth)).epsilon(1e-9));
    }
    SUBCASE("identical to the COMBO loop without penalty") {
        c.outer_iters = 10;
        const TabularPolicy dyna = dyna_policy_optimization(e, model, c, truth.poisoned());
        const ComboRun combo = combo_outer_loop(e, model, dataset_distribution(data), dyna_combo_config(c), 0);
        CHECK(dyna == combo.policy);
    }
}

TEST_CASE("behavior cloning") {
    std::vector<Transition> t;
    fixtures::repeat(t, 3, 0, 0, 0.0, 1);
    fixtures::repeat(t, 1, 0, 1, 0.0, 1);
    const TabularPolicy bc = behavior_cloning(Dataset(3, 2, t));
    CHECK(bc(0, 0) == doctest::Approx(0.75));
    CHECK(bc(0, 1) == doctest::Approx(0.25));
    CHECK(bc(1, 0) == doctest::Approx(0.5));
    CHECK(bc(2, 1) == doctest::Approx(0.5));

    const TabularMDP truth = fixtures::random_mdp(6, 3, 0.9, 231);
    const std::array<int, 6> acts{2, 0, 1, 1, 0, 2};
    const TabularPolicy det = TabularPolicy::deterministic(acts, 3);
    // Random mu0-restarts with full-support rows visit every state.
    const Dataset d = collect_dataset(truth, det, 2000, 10, 2);
    for (int s = 0; s < 6; ++s) REQUIRE(d.count(s) > 0);
    CHECK(behavior_cloning(d) == det);
}

TEST_CASE("value iteration oracle") {
    SUBCASE("single state") {
        const auto [p, q] = value_iteration_oracle(fixtures::single_state(2, 0.5, 0.8), 1e-12);
        CHECK(q(0, 0) == doctest::Approx(2.5));
        CHECK(p(0, 0) == 1.0);
    }
    SUBCASE("chain") {
        const auto [p, q] = value_iteration_oracle(fixtures::two_state_chain(0.9), 1e-12);
        CHECK(q(0, 0) == doctest::Approx(9.0));
        CHECK(q(1, 0) == doctest::Approx(10.0));
    }
    SUBCASE("optimal against every deterministic policy") {
        const TabularMDP m = fixtures::random_mdp(3, 2, 0.9, 241);
        const double best = best_return(m);
        for (int code = 0; code < 8; ++code) {
            const std::array<int, 3> acts{code & 1, (code >> 1) & 1, (code >> 2) & 1};
            CHECK(policy_return(m, TabularPolicy::deterministic(acts, 2)) <= best + 1e-10);
        }
    }
    SUBCASE("negated reward picks the minimizing actions") {
        const TabularMDP m = fixtures::random_mdp(3, 2, 0.9, 242);
        double worst = 1e300;
        std::array<int, 3> worst_acts{};
        for (int code = 0; code < 8; ++code) {
            const std::array<int, 3> acts{code & 1, (code >> 1) & 1, (code >> 2) & 1};
            const double j = policy_return(m, TabularPolicy::deterministic(acts, 2));
            if (j < worst) {
                worst = j;
                worst_acts = acts;
            }
        }
        const auto [p, q] = solve_optimal(m, -m.reward(), 1e-12);
        CHECK(p == TabularPolicy::deterministic(worst_acts, 2));
    }
}

TEST_CASE("baseline config validation") {
    BaselineConfig c;
    apply_baseline_field(c, "lambda_mopo", "2.5");
    CHECK(c.lambda_mopo == 2.5);
    CHECK_THROWS_AS(apply_baseline_field(c, "lambda", "1"), ValidationError);
    c.epsilon_pb = 0.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
}
