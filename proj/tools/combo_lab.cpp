// combo_lab: command-line front end for environment and dataset generation,
// training runs, theory checks, sweeps, offline hyperparameter selection
// and result aggregation.
//
// Every subcommand accepts --config FILE with "key = value" lines using the
// flag names without dashes; flags given on the command line win.

#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "combo/errors.hpp"
#include "combo/experiment.hpp"
#include "combo/serialize.hpp"
#include "combo/suites.hpp"

using namespace combo;

namespace {

const std::vector<std::string> kEnvKeys{"env_kind", "width",    "height",    "goal",     "hazards",
                                        "slip",     "n_states", "n_actions", "branching", "env_seed",
                                        "length",   "gamma",    "relabel_goal"};
const std::vector<std::string> kDataKeys{"quality", "n_transitions", "episode_len", "data_seed"};

/// String-valued flags bound to experiment config keys.
class KeyFlags {
public:
    void bind(CLI::App* app, const std::vector<std::string>& keys) {
        const KeyValues defaults = experiment_config_to_key_values(ExperimentConfig{});
        for (const std::string& k : keys) {
            CLI::Option* opt = app->add_option("--" + k, values_[k], "config field " + k);
            if (auto it = defaults.find(k); it != defaults.end() && !it->second.empty()) opt->default_str(it->second);
            options_[k] = opt;
        }
    }

    /// Defaults, then every flag that was given (from the command line or
    /// the config file).
    ExperimentConfig build() const {
        ExperimentConfig c;
        for (const auto& [k, opt] : options_)
            if (opt->count() > 0) apply_experiment_field(c, k, values_.at(k));
        c.validate();
        return c;
    }

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, CLI::Option*> options_;
};

/// Fills options that were not given on the command line from the file.
void apply_config_file(CLI::App* app, const std::string& path) {
    for (const auto& [k, v] : parse_key_values(read_file(path))) {
        CLI::Option* opt = k == "config" ? nullptr : app->get_option_no_throw("--" + k);
        if (opt == nullptr) throw ValidationError(path + ": unknown key '" + k + "' for " + app->get_name());
        if (opt->count() == 0) {
            opt->add_result(v);
            opt->run_callback();
        }
    }
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    for (const std::string& x : split_list(s)) out.push_back(parse_double(x));
    return out;
}

std::vector<MuChoice> parse_mus(const std::string& s) {
    std::vector<MuChoice> out;
    for (const std::string& x : split_list(s)) {
        ComboConfig c;
        apply_config_field(c, "mu_choice", x);
        out.push_back(c.mu_choice);
    }
    return out;
}

std::vector<RhoChoice> parse_rhos(const std::string& s) {
    std::vector<RhoChoice> out;
    for (const std::string& x : split_list(s)) {
        ComboConfig c;
        apply_config_field(c, "rho_choice", x);
        out.push_back(c.rho_choice);
    }
    return out;
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") std::cout << text;
    else write_file(path, text);
}

bool any_error(const std::vector<ResultRecord>& recs) {
    for (const ResultRecord& r : recs)
        if (!r.ok()) {
            std::cerr << "run error (" << to_string(r.algo) << ", seed " << r.seed << "): " << r.error << "\n";
            return true;
        }
    return false;
}

struct SweepFlags {
    std::string betas;
    std::string fs;
    std::string mus;
    std::string rhos;

    void bind(CLI::App* app) {
        app->add_option("--betas", betas, "comma-separated beta values");
        app->add_option("--fs", fs, "comma-separated f values");
        app->add_option("--mus", mus, "comma-separated mu choices (uniform|current-policy)");
        app->add_option("--rhos", rhos, "comma-separated rho choices (model-occupancy|df)");
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conservative offline model-based RL on tabular MDPs"};
    app.require_subcommand(1);

    std::map<std::string, std::string> config_paths;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_paths[sub->get_name()], "key = value file supplying any flag");
    };

    // gen-env
    auto* gen_env = app.add_subcommand("gen-env", "write a generated MDP as JSON");
    KeyFlags env_flags;
    env_flags.bind(gen_env, kEnvKeys);
    std::string env_out = "-";
    gen_env->add_option("--out", env_out, "output path ('-' for stdout)");
    add_config(gen_env);

    // gen-data
    auto* gen_data = app.add_subcommand("gen-data", "collect an offline dataset");
    KeyFlags data_flags;
    {
        std::vector<std::string> keys = kEnvKeys;
        keys.insert(keys.end(), kDataKeys.begin(), kDataKeys.end());
        data_flags.bind(gen_data, keys);
    }
    std::uint64_t data_eval_seed = 0;
    std::string data_out;
    gen_data->add_option("--seed", data_eval_seed, "evaluation seed mixed into data_seed");
    gen_data->add_option("--out", data_out, "output stem (<stem>.tsv and <stem>.json)")->required();
    add_config(gen_data);

    // train
    auto* train = app.add_subcommand("train", "run one algorithm over the evaluation seeds");
    KeyFlags train_flags;
    train_flags.bind(train, experiment_config_keys());
    add_config(train);

    // verify
    auto* verify = app.add_subcommand("verify", "run theory checks");
    std::string suite = "all";
    int samples = 0;
    std::uint64_t verify_seed = 0;
    std::string verify_out;
    verify->add_option("--suite", suite, "all or one of the suite names");
    verify->add_option("--samples", samples, "instances per suite (0 = suite default)");
    verify->add_option("--seed", verify_seed, "base seed");
    verify->add_option("--output_path", verify_out, "stem for <stem>.csv and <stem>.jsonl");
    add_config(verify);

    // sweep
    auto* sweep = app.add_subcommand("sweep", "run a grid of COMBO settings");
    KeyFlags sweep_flags;
    sweep_flags.bind(sweep, experiment_config_keys());
    SweepFlags sweep_grid;
    sweep_grid.bind(sweep);
    add_config(sweep);

    // select-hparams
    auto* select = app.add_subcommand("select-hparams", "pick COMBO settings by the offline regularizer");
    KeyFlags select_flags;
    select_flags.bind(select, experiment_config_keys());
    SweepFlags select_grid;
    select_grid.betas = "0.5,1,5";
    select_grid.bind(select);
    int average_last = 1;
    std::uint64_t select_seed = 0;
    std::string select_dataset;
    select->add_option("--average_last", average_last, "average the regularizer over the last k evaluations");
    select->add_option("--seed", select_seed, "evaluation seed of the generated dataset");
    select->add_option("--dataset", select_dataset, "read this dataset stem instead of generating one");
    add_config(select);

    // report
    auto* report = app.add_subcommand("report", "aggregate result CSVs");
    std::string report_inputs;
    std::string report_out;
    report->add_option("--inputs", report_inputs, "comma-separated result CSV files")->required();
    report->add_option("--output_path", report_out, "summary CSV path ('-' for stdout)");
    add_config(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        for (CLI::App* sub : app.get_subcommands()) {
            const std::string& path = config_paths[sub->get_name()];
            if (!path.empty()) apply_config_file(sub, path);
        }

        if (gen_env->parsed()) {
            const ExperimentConfig c = env_flags.build();
            emit(env_out, mdp_to_json(make_environment(c.env)) + "\n");
            return 0;
        }

        if (gen_data->parsed()) {
            const ExperimentConfig c = data_flags.build();
            const Dataset d = make_experiment_dataset(c, data_eval_seed);
            write_dataset(d, evaluation_mdp(c).hash(), data_out);
            std::cerr << "wrote " << d.size() << " transitions to " << data_out << ".tsv\n";
            return 0;
        }

        if (train->parsed()) {
            const ExperimentConfig c = train_flags.build();
            const auto recs = run_experiment(c);
            if (c.output_path.empty()) std::cout << records_to_csv(recs);
            return any_error(recs) ? 1 : 0;
        }

        if (verify->parsed()) {
            std::vector<std::string> names;
            if (suite == "all") names = suite_names();
            else names.push_back(suite);
            std::string csv = reports_csv_header();
            std::string jsonl;
            bool failed = false;
            for (const std::string& n : names) {
                for (const VerificationReport& r : run_suite(n, SuiteOptions{samples, verify_seed})) {
                    csv += report_to_csv_row(r);
                    jsonl += report_to_jsonl(r);
                    if (!r.passed) {
                        failed = true;
                        std::cerr << "FAILED " << r.check_name << " seed " << r.seed << ": " << r.witness.dump() << "\n";
                    }
                }
            }
            if (verify_out.empty()) {
                std::cout << csv;
            } else {
                write_file(verify_out + ".csv", csv);
                write_file(verify_out + ".jsonl", jsonl);
            }
            return failed ? 1 : 0;
        }

        if (sweep->parsed()) {
            const ExperimentConfig base = sweep_flags.build();
            ExperimentConfig quiet = base;
            quiet.output_path.clear();
            std::vector<ResultRecord> all;
            for (const ExperimentConfig& c : sweep_configs(quiet, parse_doubles(sweep_grid.betas), parse_doubles(sweep_grid.fs),
                                                           parse_mus(sweep_grid.mus), parse_rhos(sweep_grid.rhos))) {
                const auto recs = run_experiment(c);
                all.insert(all.end(), recs.begin(), recs.end());
            }
            if (base.output_path.empty()) {
                std::cout << records_to_csv(all);
            } else {
                write_file(base.output_path + ".csv", records_to_csv(all));
                write_file(base.output_path + ".jsonl", records_to_jsonl(all));
            }
            return any_error(all) ? 1 : 0;
        }

        if (select->parsed()) {
            const ExperimentConfig base = select_flags.build();
            const TabularMDP blind = evaluation_mdp(base).poisoned();
            const Dataset data = select_dataset.empty() ? make_experiment_dataset(base, select_seed)
                                                        : read_dataset(select_dataset);
            std::vector<ComboConfig> candidates;
            for (const ExperimentConfig& c : sweep_configs(base, parse_doubles(select_grid.betas), parse_doubles(select_grid.fs),
                                                           parse_mus(select_grid.mus), parse_rhos(select_grid.rhos)))
                candidates.push_back(c.combo);
            const Selection sel = select_hyperparameters(candidates, data, blind, select_seed, average_last);
            std::string csv = "index,beta,f,mu_choice,rho_choice,regularizer_value,error,selected\n";
            for (std::size_t i = 0; i < candidates.size(); ++i) {
                const ComboConfig& c = candidates[i];
                const CandidateScore& s = sel.table[i];
                csv += std::to_string(i) + "," + format_double(c.beta) + "," + format_double(c.f) + "," +
                       to_string(c.mu_choice) + "," + to_string(c.rho_choice) + "," +
                       (s.regularizer_value ? format_double(*s.regularizer_value) : "") + "," +
                       (s.error.empty() ? "" : "\"" + s.error + "\"") + "," + (i == sel.index ? "true" : "false") + "\n";
            }
            if (base.output_path.empty()) std::cout << csv;
            else write_file(base.output_path + ".csv", csv);
            return 0;
        }

        if (report->parsed()) {
            std::vector<ResultRecord> all;
            for (const std::string& path : split_list(report_inputs)) {
                const auto recs = records_from_csv(read_file(path));
                all.insert(all.end(), recs.begin(), recs.end());
            }
            std::map<std::pair<std::uint64_t, std::string>, std::vector<ResultRecord>> groups;
            for (const ResultRecord& r : all) groups[{r.config_hash, to_string(r.algo)}].push_back(r);
            std::string csv = "config_hash,algo,n_ok,n_failed,mean_return,ci_half_width,mean_behavior_return\n";
            for (const auto& [key, recs] : groups) {
                const AlgoSummary s = summarize(recs.front().algo, recs);
                double beh = 0.0;
                for (const ResultRecord& r : recs) beh += r.behavior_return;
                char hash[17];
                std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(key.first));
                csv += std::string(hash) + "," + key.second + "," + std::to_string(s.n_ok) + "," +
                       std::to_string(s.n_failed) + "," + (s.n_ok > 0 ? format_double(s.mean) : "") + "," +
                       format_double(s.ci_half_width) + "," + format_double(beh / static_cast<double>(recs.size())) + "\n";
            }
            emit(report_out, csv);
            return any_error(all) ? 1 : 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
