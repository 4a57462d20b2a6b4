#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "combo/baselines.hpp"
#include "combo/environment.hpp"
#include "combo/errors.hpp"
#include "combo/experiment.hpp"
#include "combo/suites.hpp"
#include "fixtures.hpp"

using namespace combo;

namespace {

ExperimentConfig small_grid() {
    ExperimentConfig e;
    e.env.width = 3;
    e.env.height = 3;
    e.env.goal = {2, 2};
    e.n_transitions = 300;
    e.episode_len = 15;
    e.combo.outer_iters = 4;
    e.baseline.outer_iters = 4;
    e.eval_seeds = {0, 1, 2};
    e.record_wall_time = false;
    return e;
}

const std::vector<Algo> kAllAlgos{Algo::COMBO, Algo::CQL, Algo::MOPO, Algo::Dyna, Algo::BC};

}  // namespace

TEST_CASE("generated environments") {
    SUBCASE("two-state chain") {
        EnvSpec spec;
        spec.kind = EnvKind::Chain;
        spec.length = 2;
        const TabularMDP m = make_environment(spec);
        const auto [p, q] = value_iteration_oracle(m, 1e-12);
        CHECK(q(0, 0) == doctest::Approx(9.0));
        CHECK(q(1, 0) == doctest::Approx(10.0));
        CHECK(p(0, 0) == 1.0);
    }
    SUBCASE("deterministic 3x3 gridworld") {
        EnvSpec spec;
        spec.width = 3;
        spec.height = 3;
        spec.goal = {2, 2};
        spec.slip = 0.0;
        const TabularMDP m = make_environment(spec);
        // Four moves to the goal, then reward 1 per step forever.
        const double expected = std::pow(0.9, 4) / (1.0 - 0.9);
        CHECK(policy_return(m, value_iteration_oracle(m, 1e-12).first) == doctest::Approx(expected).epsilon(1e-10));
    }
    SUBCASE("slip splits across the perpendicular moves") {
        EnvSpec spec;
        spec.width = 3;
        spec.height = 3;
        spec.goal = {2, 2};
        spec.slip = 0.1;
        const TabularMDP m = make_environment(spec);
        const int center = cell_index(spec, {1, 1});
        CHECK(m.transition(center, 0, cell_index(spec, {1, 0})) == doctest::Approx(0.9));
        CHECK(m.transition(center, 0, cell_index(spec, {0, 1})) == doctest::Approx(0.05));
        CHECK(m.transition(center, 0, cell_index(spec, {2, 1})) == doctest::Approx(0.05));
        CHECK(m.transition(0, 0, 0) == doctest::Approx(0.95));
        const int goal = cell_index(spec, {2, 2});
        CHECK(m.transition(goal, 3, goal) == 1.0);
        CHECK(m.reward(goal, 1) == 1.0);
    }
    SUBCASE("hazards pay -1") {
        EnvSpec spec;
        spec.hazards = {{1, 1}};
        CHECK(make_environment(spec).reward(cell_index(spec, {1, 1}), 2) == -1.0);
    }
    SUBCASE("same spec, same MDP") {
        EnvSpec spec;
        spec.kind = EnvKind::RandomMDP;
        spec.seed = 17;
        CHECK(make_environment(spec).hash() == make_environment(spec).hash());
        EnvSpec other = spec;
        other.seed = 18;
        CHECK(make_environment(spec).hash() != make_environment(other).hash());
    }
    SUBCASE("relabel moves the reward only") {
        EnvSpec spec;
        spec.relabel_goal = 20;
        const TabularMDP relabeled = make_environment(spec);
        spec.relabel_goal.reset();
        const TabularMDP base = make_environment(spec);
        for (int a = 0; a < 4; ++a) CHECK(relabeled.dynamics(a) == base.dynamics(a));
        CHECK(relabeled.reward().sum() == 4.0);
        CHECK(relabeled.reward(20, 0) == 1.0);
    }
    SUBCASE("validation and JSON") {
        EnvSpec bad;
        bad.goal = {5, 0};
        CHECK_THROWS_AS(make_environment(bad), ValidationError);
        EnvSpec spec;
        spec.hazards = {{1, 2}, {3, 3}};
        spec.relabel_goal = 7;
        CHECK(env_spec_from_json(env_spec_to_json(spec)) == spec);
    }
}

TEST_CASE("behavior policies") {
    EnvSpec spec;
    spec.width = 4;
    spec.height = 4;
    spec.goal = {3, 3};
    const TabularMDP m = make_environment(spec);
    CHECK(make_behavior_policy(m, BehaviorQuality::Random, 0) == TabularPolicy::uniform(16, 4));
    CHECK(epsilon_greedy_oracle(m, 0.0) == value_iteration_oracle(m, 1e-10).first);
    const double expert = policy_return(m, make_behavior_policy(m, BehaviorQuality::Expert, 0));
    const double medium = policy_return(m, make_behavior_policy(m, BehaviorQuality::Medium, 0));
    const double random = policy_return(m, make_behavior_policy(m, BehaviorQuality::Random, 0));
    CHECK(expert >= medium);
    CHECK(medium >= random);
    const double mixed = policy_return(m, make_behavior_policy(m, BehaviorQuality::MediumExpert, 0));
    CHECK(mixed <= expert + 1e-12);
    CHECK(mixed >= medium - 1e-12);
}

TEST_CASE("behavior cloning of a deterministic expert") {
    ExperimentConfig e = small_grid();
    e.env.width = 4;
    e.env.height = 4;
    e.env.goal = {3, 3};
    const TabularMDP truth = evaluation_mdp(e);
    const TabularPolicy expert = epsilon_greedy_oracle(truth, 0.0);
    const Dataset data = collect_dataset(truth, expert, 5000, 20, 3);
    const double j_expert = policy_return(truth, expert);
    CHECK(policy_return(truth, behavior_cloning(data)) >= 0.95 * j_expert);
}

TEST_CASE("single runs") {
    ExperimentConfig e = small_grid();
    const TabularMDP truth = evaluation_mdp(e);
    SUBCASE("zero outer iterations give the uniform return") {
        e.combo.outer_iters = 0;
        const ResultRecord r = run_single(e, truth, 0);
        REQUIRE(r.ok());
        CHECK(r.true_return == doctest::Approx(policy_return(truth, TabularPolicy::uniform(9, 4))).epsilon(1e-12));
    }
    SUBCASE("every algorithm runs against a poisoned truth") {
        for (Algo a : kAllAlgos) {
            e.algo = a;
            const ResultRecord r = run_single(e, truth, 1);
            CAPTURE(to_string(a));
            CHECK(r.error == "");
            CHECK(std::isfinite(r.true_return));
        }
    }
    SUBCASE("COMBO records carry per-iteration diagnostics") {
        const ResultRecord r = run_single(e, truth, 0);
        CHECK(r.n_iterations == 4);
        CHECK(r.iterations.size() == 4);
        CHECK(r.regularizer_value.has_value());
        CHECK(r.true_return == r.iterations.back().true_return);
    }
    SUBCASE("failures land in the error field") {
        e.combo.max_eval_iters = 1;
        const ResultRecord r = run_single(e, truth, 0);
        CHECK_FALSE(r.ok());
        CHECK(std::isnan(r.true_return));
    }
}

TEST_CASE("algorithm entry points never read the truth") {
    const ExperimentConfig e = small_grid();
    const TabularMDP blind = evaluation_mdp(e).poisoned();
    const Dataset data = make_experiment_dataset(e, 0);
    CHECK_NOTHROW(run_combo_offline(data, blind, e.combo, 0));
    CHECK_NOTHROW(run_combo(blind, data, e.combo, 0, false));
    const EmpiricalMDP emp = build_empirical_mdp(data, blind);
    const LearnedModel model = fit_mle_model(data, blind, 0.0);
    CHECK_NOTHROW(cql_policy_optimization(emp, behavior_cloning(data), e.baseline));
    CHECK_NOTHROW(mopo_policy_optimization(model, count_uncertainty(data), e.baseline, blind));
    CHECK_NOTHROW(dyna_policy_optimization(emp, model, e.baseline, blind));
    std::vector<ComboConfig> cands(3, e.combo);
    cands[1].beta = 0.5;
    cands[2].beta = 5.0;
    CHECK_NOTHROW(select_hyperparameters(cands, data, blind));
    // The probe is the only reader, and only when asked for.
    CHECK_THROWS_AS(run_combo(blind, data, e.combo, 0, true), TruthAccessError);
}

TEST_CASE("determinism") {
    ExperimentConfig e = small_grid();
    const auto dir = std::filesystem::temp_directory_path() / "combo_determinism";
    std::filesystem::create_directories(dir);
    for (Algo a : kAllAlgos) {
        e.algo = a;
        e.output_path = (dir / "a").string();
        const auto first = run_experiment(e);
        const std::string csv_a = read_file(e.output_path + ".csv");
        const std::string jsonl_a = read_file(e.output_path + ".jsonl");
        e.output_path = (dir / "b").string();
        const auto second = run_experiment(e);
        CHECK(csv_a == read_file(e.output_path + ".csv"));
        CHECK(jsonl_a == read_file(e.output_path + ".jsonl"));
        CHECK(records_to_csv(first) == records_to_csv(second));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("records") {
    ExperimentConfig e = small_grid();
    const auto recs = run_experiment(e);
    const std::string csv = records_to_csv(recs);
    CHECK(csv.rfind(records_csv_header(), 0) == 0);
    const auto back = records_from_csv(csv);
    REQUIRE(back.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(back[i].config_hash == recs[i].config_hash);
        CHECK(back[i].seed == recs[i].seed);
        CHECK(back[i].true_return == recs[i].true_return);
        CHECK(back[i].regularizer_value == recs[i].regularizer_value);
    }
    const Json j = Json::parse(record_to_jsonl(recs[0]));
    CHECK(j["iterations"].size() == 4);

    ResultRecord bad = recs[0];
    bad.error = "budget, \"exhausted\"";
    bad.true_return = std::nan("");
    const auto parsed = records_from_csv(records_to_csv({bad}));
    CHECK(parsed[0].error == bad.error);
    CHECK(std::isnan(parsed[0].true_return));
}

TEST_CASE("experiment config") {
    ExperimentConfig e = small_grid();
    e.env.hazards = {{1, 0}};
    e.env.relabel_goal = 6;
    e.algo = Algo::MOPO;
    e.combo.beta = 3.0;
    e.baseline.lambda_mopo = 0.2;
    const ExperimentConfig back = experiment_config_from_key_values(experiment_config_to_key_values(e));
    CHECK(back.hash() == e.hash());
    CHECK(back.env == e.env);
    CHECK(back.eval_seeds == e.eval_seeds);

    ExperimentConfig seeds = e;
    seeds.eval_seeds = {9};
    seeds.output_path = "elsewhere";
    CHECK(seeds.hash() == e.hash());
    seeds.combo.beta = 3.5;
    CHECK(seeds.hash() != e.hash());

    ExperimentConfig shared;
    apply_experiment_field(shared, "f", "0.25");
    CHECK(shared.combo.f == 0.25);
    CHECK(shared.baseline.f == 0.25);
    CHECK_THROWS_AS(apply_experiment_field(shared, "no_such_key", "1"), ValidationError);
    CHECK_THROWS_AS(apply_experiment_field(shared, "goal", "1"), ValidationError);
}

TEST_CASE("hyperparameter selection") {
    const ExperimentConfig e = small_grid();
    const TabularMDP blind = evaluation_mdp(e).poisoned();
    const Dataset data = make_experiment_dataset(e, 0);
    SUBCASE("single candidate") {
        const Selection s = select_hyperparameters({e.combo}, data, blind);
        CHECK(s.index == 0);
        CHECK(s.config == e.combo);
    }
    SUBCASE("argmin of the regularizer, lowest index on ties") {
        std::vector<ComboConfig> cands(4, e.combo);
        cands[1].beta = 0.5;
        cands[2].beta = 5.0;
        const Selection s = select_hyperparameters(cands, data, blind);
        double best = 1e300;
        std::size_t arg = 0;
        for (std::size_t i = 0; i < s.table.size(); ++i) {
            REQUIRE(s.table[i].regularizer_value.has_value());
            if (*s.table[i].regularizer_value < best) {
                best = *s.table[i].regularizer_value;
                arg = i;
            }
        }
        CHECK(s.index == arg);
        CHECK(*s.table[0].regularizer_value == *s.table[3].regularizer_value);
        const Selection tie = select_hyperparameters({e.combo, e.combo}, data, blind);
        CHECK(tie.index == 0);
    }
    SUBCASE("failed candidates are skipped, all failing is an error") {
        ComboConfig broken = e.combo;
        broken.max_eval_iters = 1;
        const Selection s = select_hyperparameters({broken, e.combo}, data, blind);
        CHECK(s.index == 1);
        CHECK_FALSE(s.table[0].error.empty());
        CHECK_THROWS_AS(select_hyperparameters({broken}, data, blind), ConvergenceError);
    }
    SUBCASE("averaging over the last iterations") {
        const ComboRun run = run_combo_offline(data, blind, e.combo, 0);
        const OccupancyMeasure d = dataset_distribution(data);
        double avg = 0.0;
        for (std::size_t i = run.iterations.size() - 3; i < run.iterations.size(); ++i)
            avg += regularizer_value(run.iterations[i], d) / 3.0;
        CHECK(run_regularizer(run, data, blind, e.combo, 3) == doctest::Approx(avg).epsilon(1e-12));
        CHECK(run_regularizer(run, data, blind, e.combo, 1) == regularizer_value(run.iterations.back(), d));
    }
}

TEST_CASE("generalization suite") {
    ExperimentConfig e = small_grid();
    const std::vector<std::uint64_t> seeds{0, 1};
    SUBCASE("without a relabel it is run_experiment per algorithm") {
        const GeneralizationSummary s = run_generalization_suite(e, std::nullopt, {Algo::COMBO, Algo::BC}, seeds);
        for (std::size_t k = 0; k < 2; ++k) {
            e.algo = k == 0 ? Algo::COMBO : Algo::BC;
            e.eval_seeds = seeds;
            CHECK(records_to_csv(s.records[k]) == records_to_csv(run_experiment(e)));
        }
    }
    SUBCASE("batch statistics match a scan of the relabeled episodes") {
        const GeneralizationSummary s = run_generalization_suite(e, 2, {Algo::BC}, seeds);
        ExperimentConfig r = e;
        r.env.relabel_goal = 2;
        const double gamma = evaluation_mdp(r).gamma();
        double best = -1e300, sum = 0.0;
        int n = 0;
        for (std::uint64_t seed : seeds) {
            const Dataset d = make_experiment_dataset(r, seed);
            for (std::size_t start = 0; start < d.size(); start += static_cast<std::size_t>(r.episode_len)) {
                double ret = 0.0, disc = 1.0;
                for (std::size_t i = start; i < std::min(d.size(), start + static_cast<std::size_t>(r.episode_len)); ++i) {
                    ret += disc * d.transitions()[i].r;
                    disc *= gamma;
                }
                best = std::max(best, ret);
                sum += ret;
                ++n;
            }
        }
        CHECK(s.batch_max == doctest::Approx(best).epsilon(1e-12));
        CHECK(s.batch_mean == doctest::Approx(sum / n).epsilon(1e-12));
        CHECK(s.optimal_return >= s.batch_max - 1e-12);
    }
}

TEST_CASE("summaries and sweeps") {
    std::vector<ResultRecord> recs(3);
    recs[0].true_return = 1.0;
    recs[1].true_return = 3.0;
    recs[2].error = "boom";
    const AlgoSummary s = summarize(Algo::COMBO, recs);
    CHECK(s.mean == 2.0);
    CHECK(s.n_ok == 2);
    CHECK(s.n_failed == 1);
    CHECK(s.ci_half_width == doctest::Approx(1.96 * std::sqrt(2.0) / std::sqrt(2.0)));

    const auto grid = sweep_configs(small_grid(), {0.5, 1.0}, {0.2, 0.8}, {MuChoice::UniformActions},
                                    {RhoChoice::DF, RhoChoice::ModelOccupancy});
    CHECK(grid.size() == 8);
    CHECK(grid.front().combo.beta == 0.5);
    CHECK(sweep_configs(small_grid(), {}, {}, {}, {}).size() == 1);
}

TEST_CASE("gridworld suite settings") {
    const ExperimentConfig e = gridworld_experiment(1000);
    CHECK(e.combo == gridworld_combo_config());
    CHECK(e.env.width == 5);
    CHECK_FALSE(e.record_wall_time);
}
