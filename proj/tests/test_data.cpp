#include <doctest.h>

#include <filesystem>

#include "combo/dataset.hpp"
#include "combo/errors.hpp"
#include "combo/model.hpp"
#include "fixtures.hpp"

using namespace combo;

namespace {

Dataset three_from_s0() {
    std::vector<Transition> t;
    fixtures::repeat(t, 2, 0, 0, 0.5, 1);
    fixtures::repeat(t, 1, 0, 0, 0.5, 0);
    return Dataset(2, 1, t);
}

double row_tv(const Matrix& a, const Matrix& b, int s) {
    return 0.5 * (a.row(s) - b.row(s)).cwiseAbs().sum();
}

}  // namespace

TEST_CASE("collection") {
    SUBCASE("deterministic single state") {
        const TabularMDP m = fixtures::single_state(1, 0.3, 0.9);
        const Dataset d = collect_dataset(m, TabularPolicy::uniform(1, 1), 5, 10, 1);
        CHECK(d.size() == 5);
        CHECK(d.count(0, 0) == 5);
        for (const Transition& t : d.transitions()) CHECK(t == Transition{0, 0, 0.3, 0});
    }
    SUBCASE("chain episodes restart from mu0") {
        const Dataset d = collect_dataset(fixtures::two_state_chain(0.9), TabularPolicy::uniform(2, 1), 4, 2, 7);
        REQUIRE(d.size() == 4);
        const std::vector<Transition> expected{{0, 0, 0.0, 1}, {1, 0, 1.0, 1}, {0, 0, 0.0, 1}, {1, 0, 1.0, 1}};
        CHECK(d.transitions() == expected);
    }
    SUBCASE("same seed gives an identical dataset") {
        const TabularMDP m = fixtures::random_mdp(5, 3, 0.9, 2);
        const TabularPolicy p = fixtures::random_policy(5, 3, 3);
        const Dataset a = collect_dataset(m, p, 300, 15, 99);
        const Dataset b = collect_dataset(m, p, 300, 15, 99);
        CHECK(a == b);
        CHECK(dataset_to_text(a) == dataset_to_text(b));
        CHECK_FALSE(collect_dataset(m, p, 300, 15, 100) == a);
    }
}

TEST_CASE("counts stay consistent with the transition list") {
    const TabularMDP m = fixtures::random_mdp(6, 3, 0.9, 5);
    const Dataset d = collect_dataset(m, fixtures::random_policy(6, 3, 6), 500, 20, 1);
    std::int64_t total = 0;
    for (int s = 0; s < 6; ++s) {
        std::int64_t per_state = 0;
        for (int a = 0; a < 3; ++a) {
            std::int64_t per_cell = 0;
            for (int s2 = 0; s2 < 6; ++s2) per_cell += d.count(s, a, s2);
            CHECK(per_cell == d.count(s, a));
            per_state += d.count(s, a);
        }
        CHECK(per_state == d.count(s));
        total += per_state;
    }
    CHECK(total == static_cast<std::int64_t>(d.size()));
    CHECK_THROWS_AS(Dataset(2, 1, {{0, 1, 0.0, 0}}), ValidationError);
}

TEST_CASE("empirical MDP") {
    SUBCASE("count ratios") {
        const EmpiricalMDP e = build_empirical_mdp(three_from_s0(), fixtures::two_state_chain(0.9));
        CHECK(e.mdp.transition(0, 0, 1) == doctest::Approx(2.0 / 3.0));
        CHECK(e.mdp.transition(0, 0, 0) == doctest::Approx(1.0 / 3.0));
        CHECK(e.mdp.reward(0, 0) == doctest::Approx(0.5));
        CHECK(e.visited(0, 0));
        CHECK_FALSE(e.visited(1, 0));
        CHECK(e.mdp.transition(1, 0, 1) == 1.0);
        CHECK(e.mdp.reward(1, 0) == 0.0);
    }
    SUBCASE("large samples approach the truth") {
        const TabularMDP m = fixtures::random_mdp(4, 2, 0.9, 8);
        const Dataset d = collect_dataset(m, TabularPolicy::uniform(4, 2), 100000, 50, 3);
        const EmpiricalMDP e = build_empirical_mdp(d, m);
        for (int a = 0; a < 2; ++a)
            for (int s = 0; s < 4; ++s) {
                REQUIRE(e.visited(s, a));
                CHECK(row_tv(e.mdp.dynamics(a), m.dynamics(a), s) <= 0.02);
            }
    }
    SUBCASE("only the template's shape is read") {
        const EmpiricalMDP e = build_empirical_mdp(three_from_s0(), fixtures::two_state_chain(0.9).poisoned());
        CHECK(e.mdp.transition(0, 0, 1) == doctest::Approx(2.0 / 3.0));
    }
}

TEST_CASE("dataset distribution") {
    std::vector<Transition> same;
    fixtures::repeat(same, 5, 1, 0, 0.0, 1);
    const OccupancyMeasure point = dataset_distribution(Dataset(2, 2, same));
    CHECK(point(1, 0) == 1.0);
    CHECK(point.sa_dist().sum() == 1.0);

    std::vector<Transition> t;
    fixtures::repeat(t, 3, 0, 0, 0.0, 0);
    fixtures::repeat(t, 1, 0, 1, 0.0, 0);
    const OccupancyMeasure d = dataset_distribution(Dataset(1, 2, t));
    CHECK(d(0, 0) == doctest::Approx(0.75));
    CHECK(d(0, 1) == doctest::Approx(0.25));

    const TabularMDP m = fixtures::random_mdp(3, 2, 0.9, 9);
    const Dataset a = collect_dataset(m, TabularPolicy::uniform(3, 2), 120, 10, 1);
    const Dataset b = collect_dataset(m, TabularPolicy::uniform(3, 2), 80, 10, 2);
    const Matrix mix = (120.0 * dataset_distribution(a).sa_dist() + 80.0 * dataset_distribution(b).sa_dist()) / 200.0;
    CHECK(dataset_distribution(a.concatenated(b)).sa_dist().isApprox(mix, 1e-14));
}

TEST_CASE("dataset text format round trip") {
    const TabularMDP m = fixtures::random_mdp(4, 3, 0.9, 10);
    const Dataset d = collect_dataset(m, TabularPolicy::uniform(4, 3), 200, 10, 4);
    CHECK(dataset_from_text(dataset_to_text(d), 4, 3, d.source_seed(), d.episode_len()) == d);

    const auto dir = std::filesystem::temp_directory_path() / "combo_dataset_roundtrip";
    std::filesystem::create_directories(dir);
    const std::string stem = (dir / "d").string();
    write_dataset(d, m.hash(), stem);
    const Dataset back = read_dataset(stem);
    CHECK(back == d);
    CHECK(back.counts_digest() == d.counts_digest());
    std::filesystem::remove_all(dir);

    CHECK_THROWS_AS(dataset_from_text("0\t0\t1\n", 4, 3), ValidationError);
    CHECK_THROWS_AS(dataset_from_text("0\t5\t1\t0\n", 4, 3), ValidationError);
}

TEST_CASE("smoothed maximum-likelihood model") {
    const TabularMDP tmpl = fixtures::two_state_chain(0.9);
    SUBCASE("no smoothing matches the empirical MDP when every cell is visited") {
        const TabularMDP m = fixtures::random_mdp(3, 2, 0.9, 12);
        const Dataset d = collect_dataset(m, TabularPolicy::uniform(3, 2), 400, 20, 2);
        const LearnedModel model = fit_mle_model(d, m, 0.0);
        const EmpiricalMDP e = build_empirical_mdp(d, m);
        for (int a = 0; a < 2; ++a) CHECK(model.mdp.dynamics(a).isApprox(e.mdp.dynamics(a)));
        CHECK(model.mdp.reward().isApprox(e.mdp.reward()));
    }
    SUBCASE("pseudo-counts") {
        const LearnedModel model = fit_mle_model(three_from_s0(), tmpl, 1.0);
        CHECK(model.mdp.transition(0, 0, 1) == doctest::Approx(0.6));
        CHECK(model.mdp.transition(0, 0, 0) == doctest::Approx(0.4));
    }
    SUBCASE("heavy smoothing gives uniform rows") {
        const LearnedModel model = fit_mle_model(three_from_s0(), tmpl, 1e6);
        CHECK(model.mdp.transition(0, 0, 1) == doctest::Approx(0.5).epsilon(1e-4));
        CHECK(model.mdp.transition(1, 0, 0) == doctest::Approx(0.5).epsilon(1e-4));
    }
    SUBCASE("negative smoothing is rejected") {
        CHECK_THROWS_AS(fit_mle_model(three_from_s0(), tmpl, -1.0), ValidationError);
    }
}

TEST_CASE("model corruption and error profile") {
    const TabularMDP truth = fixtures::random_mdp(5, 2, 0.9, 13);
    std::vector<Transition> t;
    for (int s = 0; s < 5; ++s)
        for (int a = 0; a < 2; ++a) fixtures::repeat(t, 1, s, a, 0.0, s);
    const LearnedModel base{truth, 0.0, Mask::Constant(5, 2, true), 0, {}};

    CHECK(model_error_profile(base, truth).max_tv == 0.0);
    CHECK(model_error_profile(base, truth).max_reward_error == 0.0);

    const LearnedModel same = inject_model_bias(base, 0.0, 3);
    for (int a = 0; a < 2; ++a) CHECK(same.mdp.dynamics(a) == truth.dynamics(a));

    for (double mag : {0.05, 0.3, 1.0}) {
        const LearnedModel biased = inject_model_bias(base, mag, 3);
        const ModelErrorProfile prof = model_error_profile(biased, truth);
        CHECK(prof.max_tv <= mag + 1e-12);
        CHECK(biased.bias.size() == 1);
    }
    const LearnedModel full_a = inject_model_bias(base, 1.0, 3);
    const LearnedModel full_b = inject_model_bias(base, 1.0, 3);
    CHECK(full_a.mdp.hash() == full_b.mdp.hash());

    // Point mass against a uniform row over two states.
    Matrix p(2, 2);
    p << 1, 0, 0, 1;
    const TabularMDP point({p}, Matrix::Zero(2, 1), Vector::Constant(2, 0.5), 0.9);
    const TabularMDP spread({Matrix::Constant(2, 2, 0.5)}, Matrix::Zero(2, 1), Vector::Constant(2, 0.5), 0.9);
    const LearnedModel pm{point, 0.0, Mask::Constant(2, 1, true), 0, {}};
    CHECK(model_error_profile(pm, spread).tv(0, 0) == doctest::Approx(0.5));

    const LearnedModel shifted = shift_model_reward(base, 0.25);
    CHECK(model_error_profile(shifted, truth).max_reward_error == doctest::Approx(0.25));
}

TEST_CASE("count uncertainty") {
    std::vector<Transition> t;
    fixtures::repeat(t, 4, 0, 0, 0.0, 0);
    fixtures::repeat(t, 100, 0, 2, 0.0, 0);
    const Matrix u = count_uncertainty(Dataset(1, 3, t));
    CHECK(u(0, 0) == doctest::Approx(0.5));
    CHECK(u(0, 1) == doctest::Approx(1.0));
    CHECK(u(0, 2) == doctest::Approx(0.1));
}

TEST_CASE("learned model JSON keeps provenance") {
    const TabularMDP m = fixtures::random_mdp(3, 2, 0.9, 14);
    const Dataset d = collect_dataset(m, TabularPolicy::uniform(3, 2), 50, 10, 1);
    const LearnedModel model = inject_model_bias(fit_mle_model(d, m, 0.5), 0.1, 8);
    const LearnedModel back = learned_model_from_json(learned_model_to_json(model));
    CHECK(back.mdp.hash() == model.mdp.hash());
    CHECK(back.dataset_hash == d.hash());
    CHECK(back.smoothing == 0.5);
    REQUIRE(back.bias.size() == 1);
    CHECK(back.bias[0].magnitude == 0.1);
}
