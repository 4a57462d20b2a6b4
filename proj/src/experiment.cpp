#include "combo/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "combo/errors.hpp"
#include "combo/hash.hpp"
#include "combo/model.hpp"
#include "combo/rng.hpp"

namespace combo {

namespace {

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
    if (value.empty() || res.ec != std::errc() || res.ptr != value.data() + value.size())
        throw ValidationError(key + ": expected a non-negative integer, got '" + value + "'");
    return v;
}

int parse_int_field(const std::string& key, const std::string& value) {
    int v = 0;
    const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
    if (value.empty() || res.ec != std::errc() || res.ptr != value.data() + value.size())
        throw ValidationError(key + ": expected an integer, got '" + value + "'");
    return v;
}

double parse_number_field(const std::string& key, const std::string& value) {
    try {
        return parse_double(value);
    } catch (const ValidationError&) {
        throw ValidationError(key + ": expected a number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ValidationError(key + ": expected true|false, got '" + value + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

Cell parse_cell(const std::string& key, const std::string& value) {
    const auto parts = split(value, ',');
    if (parts.size() != 2) throw ValidationError(key + ": expected 'x,y', got '" + value + "'");
    return {parse_int_field(key, parts[0]), parse_int_field(key, parts[1])};
}

std::string cell_text(Cell c) { return std::to_string(c.first) + "," + std::to_string(c.second); }

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v, 16);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ValidationError("config_hash: expected hex digits, got '" + s + "'");
    return v;
}

const std::vector<std::string> kComboKeys{"beta",           "f",           "rho_choice",   "mu_choice",
                                          "rollout_len",    "n_rollouts",  "solve_mode",   "q_solver",
                                          "eval_tol",       "max_eval_iters", "improvement", "temperature",
                                          "outer_iters",    "epsilon_df",  "model_smoothing"};
const std::vector<std::string> kSharedKeys{"f", "improvement", "temperature", "eval_tol", "max_eval_iters",
                                           "outer_iters"};
const std::vector<std::string> kBaselineKeys{"beta_cql", "lambda_mopo", "epsilon_pb", "cql_mu", "vi_tol"};

bool contains(const std::vector<std::string>& v, const std::string& k) {
    return std::find(v.begin(), v.end(), k) != v.end();
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + "\"";
}

std::vector<std::string> parse_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string number_or_empty(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }

double empty_or_number(const std::string& s) {
    return s.empty() ? std::numeric_limits<double>::quiet_NaN() : parse_double(s);
}

}  // namespace

std::string to_string(Algo algo) {
    switch (algo) {
        case Algo::COMBO: return "combo";
        case Algo::CQL: return "cql";
        case Algo::MOPO: return "mopo";
        case Algo::Dyna: return "dyna";
        case Algo::BC: return "bc";
    }
    return "?";
}

Algo algo_from_string(const std::string& s) {
    for (Algo a : {Algo::COMBO, Algo::CQL, Algo::MOPO, Algo::Dyna, Algo::BC})
        if (to_string(a) == s) return a;
    throw ValidationError("unknown algorithm '" + s + "' (combo|cql|mopo|dyna|bc)");
}

void ExperimentConfig::validate() const {
    env.validate();
    if (n_transitions < 1) throw ValidationError("n_transitions must be >= 1");
    if (episode_len < 1) throw ValidationError("episode_len must be >= 1");
    if (eval_seeds.empty()) throw ValidationError("eval_seeds must not be empty");
    combo.validate();
    baseline.validate();
}

std::uint64_t ExperimentConfig::hash() const {
    KeyValues kv = experiment_config_to_key_values(*this);
    kv.erase("eval_seeds");
    kv.erase("output_path");
    kv.erase("record_wall_time");
    Fnv1a h;
    h.add(format_key_values(kv));
    return h.digest();
}

const std::vector<std::string>& experiment_config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k{"env_kind", "width",      "height",      "goal",   "hazards",
                                   "slip",     "n_states",   "n_actions",   "branching", "env_seed",
                                   "length",   "gamma",      "relabel_goal", "quality", "n_transitions",
                                   "episode_len", "data_seed", "algo"};
        k.insert(k.end(), kComboKeys.begin(), kComboKeys.end());
        k.insert(k.end(), kBaselineKeys.begin(), kBaselineKeys.end());
        for (const char* s : {"eval_seeds", "output_path", "record_wall_time"}) k.emplace_back(s);
        return k;
    }();
    return keys;
}

void apply_experiment_field(ExperimentConfig& c, const std::string& key, const std::string& value) {
    EnvSpec& e = c.env;
    if (key == "env_kind") e.kind = env_kind_from_string(value);
    else if (key == "width") e.width = parse_int_field(key, value);
    else if (key == "height") e.height = parse_int_field(key, value);
    else if (key == "goal") e.goal = parse_cell(key, value);
    else if (key == "hazards") {
        e.hazards.clear();
        if (!value.empty() && value != "none")
            for (const std::string& h : split(value, ';')) e.hazards.push_back(parse_cell(key, h));
    } else if (key == "slip") e.slip = parse_number_field(key, value);
    else if (key == "n_states") e.n_states = parse_int_field(key, value);
    else if (key == "n_actions") e.n_actions = parse_int_field(key, value);
    else if (key == "branching") e.branching = parse_int_field(key, value);
    else if (key == "env_seed") e.seed = parse_u64(key, value);
    else if (key == "length") e.length = parse_int_field(key, value);
    else if (key == "gamma") e.gamma = parse_number_field(key, value);
    else if (key == "relabel_goal") {
        if (value.empty() || value == "none") e.relabel_goal.reset();
        else e.relabel_goal = parse_int_field(key, value);
    } else if (key == "quality") c.quality = behavior_quality_from_string(value);
    else if (key == "n_transitions") c.n_transitions = parse_int_field(key, value);
    else if (key == "episode_len") c.episode_len = parse_int_field(key, value);
    else if (key == "data_seed") c.data_seed = parse_u64(key, value);
    else if (key == "algo") c.algo = algo_from_string(value);
    else if (key == "eval_seeds") {
        c.eval_seeds.clear();
        for (const std::string& s : split(value, ',')) c.eval_seeds.push_back(parse_u64(key, s));
    } else if (key == "output_path") c.output_path = value;
    else if (key == "record_wall_time") c.record_wall_time = parse_bool(key, value);
    else if (contains(kComboKeys, key)) {
        apply_config_field(c.combo, key, value);
        if (contains(kSharedKeys, key)) apply_baseline_field(c.baseline, key, value);
    } else if (contains(kBaselineKeys, key)) apply_baseline_field(c.baseline, key, value);
    else throw ValidationError("unknown experiment key '" + key + "'");
}

KeyValues experiment_config_to_key_values(const ExperimentConfig& c) {
    KeyValues kv = parse_key_values(config_to_key_values(c.combo));
    for (const auto& [k, v] : parse_key_values(baseline_config_to_key_values(c.baseline)))
        if (contains(kBaselineKeys, k)) kv[k] = v;
    const EnvSpec& e = c.env;
    kv["env_kind"] = to_string(e.kind);
    kv["width"] = std::to_string(e.width);
    kv["height"] = std::to_string(e.height);
    kv["goal"] = cell_text(e.goal);
    std::string hz;
    for (const Cell& h : e.hazards) hz += (hz.empty() ? "" : ";") + cell_text(h);
    kv["hazards"] = hz.empty() ? "none" : hz;
    kv["slip"] = format_double(e.slip);
    kv["n_states"] = std::to_string(e.n_states);
    kv["n_actions"] = std::to_string(e.n_actions);
    kv["branching"] = std::to_string(e.branching);
    kv["env_seed"] = std::to_string(e.seed);
    kv["length"] = std::to_string(e.length);
    kv["gamma"] = format_double(e.gamma);
    kv["relabel_goal"] = e.relabel_goal ? std::to_string(*e.relabel_goal) : "none";
    kv["quality"] = to_string(c.quality);
    kv["n_transitions"] = std::to_string(c.n_transitions);
    kv["episode_len"] = std::to_string(c.episode_len);
    kv["data_seed"] = std::to_string(c.data_seed);
    kv["algo"] = to_string(c.algo);
    std::string seeds;
    for (std::uint64_t s : c.eval_seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
    kv["eval_seeds"] = seeds;
    kv["output_path"] = c.output_path;
    kv["record_wall_time"] = c.record_wall_time ? "true" : "false";
    return kv;
}

ExperimentConfig experiment_config_from_key_values(const KeyValues& values) {
    ExperimentConfig c;
    for (const auto& [k, v] : values) apply_experiment_field(c, k, v);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Records

std::string records_csv_header() {
    return "config_hash,algo,seed,true_return,behavior_return,regularizer_value,n_iterations,wall_time,error";
}

std::string record_to_csv_row(const ResultRecord& r) {
    std::string row = hex64(r.config_hash) + "," + to_string(r.algo) + "," + std::to_string(r.seed) + ",";
    row += number_or_empty(r.true_return) + "," + number_or_empty(r.behavior_return) + ",";
    row += (r.regularizer_value ? number_or_empty(*r.regularizer_value) : std::string()) + ",";
    row += std::to_string(r.n_iterations) + "," + format_double(r.wall_time) + "," + csv_field(r.error);
    return row;
}

std::string record_to_jsonl(const ResultRecord& r) {
    auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
    Json j;
    j["config_hash"] = hex64(r.config_hash);
    j["algo"] = to_string(r.algo);
    j["seed"] = r.seed;
    j["true_return"] = num(r.true_return);
    j["behavior_return"] = num(r.behavior_return);
    j["regularizer_value"] = r.regularizer_value ? num(*r.regularizer_value) : Json(nullptr);
    j["n_iterations"] = r.n_iterations;
    Json its = Json::array();
    for (const IterationDiagnostics& d : r.iterations)
        its.push_back({{"true_return", num(d.true_return)},
                       {"regularizer_value", num(d.regularizer_value)},
                       {"nu", num(d.nu_value)},
                       {"eval_iters", d.eval_iters}});
    j["iterations"] = its;
    j["wall_time"] = r.wall_time;
    j["error"] = r.error;
    return j.dump();
}

std::string records_to_csv(const std::vector<ResultRecord>& records) {
    std::string out = records_csv_header() + "\n";
    for (const ResultRecord& r : records) out += record_to_csv_row(r) + "\n";
    return out;
}

std::string records_to_jsonl(const std::vector<ResultRecord>& records) {
    std::string out;
    for (const ResultRecord& r : records) out += record_to_jsonl(r) + "\n";
    return out;
}

std::vector<ResultRecord> records_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != records_csv_header())
        throw ValidationError("results csv: missing or unexpected header");
    std::vector<ResultRecord> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = parse_csv_line(line);
        if (f.size() != 9) throw ValidationError("results csv line " + std::to_string(lineno) + ": expected 9 fields");
        ResultRecord r;
        r.config_hash = parse_hex64(f[0]);
        r.algo = algo_from_string(f[1]);
        r.seed = parse_u64("seed", f[2]);
        r.true_return = empty_or_number(f[3]);
        r.behavior_return = empty_or_number(f[4]);
        if (!f[5].empty()) r.regularizer_value = parse_double(f[5]);
        r.n_iterations = parse_int_field("n_iterations", f[6]);
        r.wall_time = parse_double(f[7]);
        r.error = f[8];
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Runs

namespace {

EnvSpec without_relabel(const EnvSpec& spec) {
    EnvSpec s = spec;
    s.relabel_goal.reset();
    return s;
}

}  // namespace

TabularMDP evaluation_mdp(const ExperimentConfig& config) { return make_environment(config.env); }

TabularPolicy experiment_behavior(const ExperimentConfig& config) {
    return make_behavior_policy(make_environment(without_relabel(config.env)), config.quality, config.data_seed);
}

Dataset make_experiment_dataset(const ExperimentConfig& config, std::uint64_t seed) {
    const TabularMDP base = make_environment(without_relabel(config.env));
    const TabularPolicy behavior = make_behavior_policy(base, config.quality, config.data_seed);
    Dataset data = collect_dataset(base, behavior, config.n_transitions, config.episode_len,
                                   mix_seed(config.data_seed, seed));
    if (config.env.relabel_goal) return data.relabeled(relabel_reward(base, *config.env.relabel_goal));
    return data;
}

ComboRun run_combo_offline(const Dataset& dataset, const TabularMDP& template_mdp, const ComboConfig& config,
                           std::uint64_t seed, const ReturnProbe& probe) {
    config.validate();
    const LearnedModel model = fit_mle_model(dataset, template_mdp, config.model_smoothing);
    const EmpiricalMDP empirical = build_empirical_mdp(dataset, template_mdp);
    return combo_outer_loop(empirical, model, dataset_distribution(dataset), config, seed, probe, &dataset);
}

double run_regularizer(const ComboRun& run, const Dataset& dataset, const TabularMDP& template_mdp,
                       const ComboConfig& config, int average_last) {
    if (average_last < 1) throw ValidationError("average_last must be >= 1");
    const OccupancyMeasure d = dataset_distribution(dataset);
    if (run.iterations.empty()) {
        const EmpiricalMDP empirical = build_empirical_mdp(dataset, template_mdp);
        ComboConfig exact = config;
        exact.solve_mode = SolveMode::Exact;
        return regularizer_value(combo_policy_evaluation(empirical, run.model, run.policy, d, exact), d);
    }
    const std::size_t n = run.iterations.size();
    const std::size_t k = std::min<std::size_t>(n, static_cast<std::size_t>(average_last));
    double sum = 0.0;
    for (std::size_t i = n - k; i < n; ++i) sum += regularizer_value(run.iterations[i], d);
    return sum / static_cast<double>(k);
}

ResultRecord run_single(const ExperimentConfig& config, const TabularMDP& truth, std::uint64_t seed) {
    ResultRecord rec;
    rec.config_hash = config.hash();
    rec.algo = config.algo;
    rec.seed = seed;
    rec.true_return = std::numeric_limits<double>::quiet_NaN();
    const auto start = std::chrono::steady_clock::now();
    try {
        rec.behavior_return = policy_return(truth, experiment_behavior(config));
        const Dataset data = make_experiment_dataset(config, seed);
        const TabularMDP blind = truth.poisoned();
        auto probe = [&truth](const TabularPolicy& p) { return policy_return(truth, p); };

        std::optional<TabularPolicy> policy;
        switch (config.algo) {
            case Algo::COMBO: {
                const ComboRun run = run_combo_offline(data, blind, config.combo, seed, probe);
                const OccupancyMeasure d = dataset_distribution(data);
                for (std::size_t i = 0; i < run.iterations.size(); ++i) {
                    const ComboSolveResult& it = run.iterations[i];
                    rec.iterations.push_back(
                        {run.true_returns[i], regularizer_value(it, d), it.nu_value, it.iters_used});
                }
                rec.regularizer_value = run_regularizer(run, data, blind, config.combo);
                rec.n_iterations = static_cast<int>(run.iterations.size());
                policy = run.policy;
                break;
            }
            case Algo::CQL:
                policy = cql_policy_optimization(build_empirical_mdp(data, blind), behavior_cloning(data),
                                                 config.baseline);
                rec.n_iterations = config.baseline.outer_iters;
                break;
            case Algo::MOPO:
                policy = mopo_policy_optimization(fit_mle_model(data, blind, config.combo.model_smoothing),
                                                  count_uncertainty(data), config.baseline, blind);
                break;
            case Algo::Dyna:
                policy = dyna_policy_optimization(build_empirical_mdp(data, blind),
                                                  fit_mle_model(data, blind, config.combo.model_smoothing),
                                                  config.baseline, blind);
                rec.n_iterations = config.baseline.outer_iters;
                break;
            case Algo::BC: policy = behavior_cloning(data); break;
        }
        rec.true_return = policy_return(truth, *policy);
    } catch (const std::exception& e) {
        rec.error = e.what();
        rec.true_return = std::numeric_limits<double>::quiet_NaN();
    }
    if (config.record_wall_time)
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

std::vector<ResultRecord> run_experiment(const ExperimentConfig& config) {
    config.validate();
    const TabularMDP truth = evaluation_mdp(config);
    std::vector<ResultRecord> out;
    out.reserve(config.eval_seeds.size());
    for (std::uint64_t seed : config.eval_seeds) out.push_back(run_single(config, truth, seed));
    if (!config.output_path.empty()) {
        write_file(config.output_path + ".csv", records_to_csv(out));
        write_file(config.output_path + ".jsonl", records_to_jsonl(out));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Offline selection

Selection select_hyperparameters(const std::vector<ComboConfig>& candidates, const Dataset& dataset,
                                 const TabularMDP& template_mdp, std::uint64_t seed, int average_last) {
    if (candidates.empty()) throw ValidationError("select_hyperparameters: no candidates");
    Selection sel;
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        CandidateScore score;
        try {
            const ComboRun run = run_combo_offline(dataset, template_mdp, candidates[i], seed);
            score.regularizer_value = run_regularizer(run, dataset, template_mdp, candidates[i], average_last);
            score.policy = run.policy;
            if (!best || *score.regularizer_value < *sel.table[*best].regularizer_value) best = i;
        } catch (const ConvergenceError& e) {
            score.error = e.what();
        } catch (const NumericalError& e) {
            score.error = e.what();
        }
        sel.table.push_back(std::move(score));
    }
    if (!best)
        throw ConvergenceError("select_hyperparameters: every candidate failed", 0,
                               std::numeric_limits<double>::infinity());
    sel.index = *best;
    sel.config = candidates[*best];
    return sel;
}

// ---------------------------------------------------------------------------
// Summaries

AlgoSummary summarize(Algo algo, const std::vector<ResultRecord>& records) {
    AlgoSummary s;
    s.algo = algo;
    std::vector<double> xs;
    for (const ResultRecord& r : records) {
        if (r.algo != algo) continue;
        if (r.ok()) xs.push_back(r.true_return);
        else ++s.n_failed;
    }
    s.n_ok = static_cast<int>(xs.size());
    if (xs.empty()) {
        s.mean = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
        s.ci_half_width = 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
    }
    return s;
}

GeneralizationSummary run_generalization_suite(const ExperimentConfig& base, std::optional<int> relabel_goal,
                                               const std::vector<Algo>& algos,
                                               const std::vector<std::uint64_t>& seeds) {
    ExperimentConfig cfg = base;
    cfg.env.relabel_goal = relabel_goal;
    cfg.eval_seeds = seeds;
    cfg.output_path.clear();
    cfg.validate();

    GeneralizationSummary out;
    const TabularMDP truth = evaluation_mdp(cfg);
    out.optimal_return = policy_return(truth, value_iteration_oracle(truth, 1e-10).first);

    std::vector<double> episodes;
    for (std::uint64_t seed : seeds) {
        const auto rets = episode_returns(make_experiment_dataset(cfg, seed), truth.gamma());
        episodes.insert(episodes.end(), rets.begin(), rets.end());
    }
    if (!episodes.empty()) {
        double sum = 0.0;
        for (double r : episodes) sum += r;
        out.batch_mean = sum / static_cast<double>(episodes.size());
        out.batch_max = *std::max_element(episodes.begin(), episodes.end());
    }

    for (Algo a : algos) {
        cfg.algo = a;
        std::vector<ResultRecord> recs;
        for (std::uint64_t seed : seeds) recs.push_back(run_single(cfg, truth, seed));
        out.algos.push_back(summarize(a, recs));
        out.records.push_back(std::move(recs));
    }
    return out;
}

std::string generalization_summary_csv(const GeneralizationSummary& s) {
    std::string out = "row,mean,ci_half_width,n_ok,n_failed\n";
    for (const AlgoSummary& a : s.algos)
        out += to_string(a.algo) + "," + number_or_empty(a.mean) + "," + format_double(a.ci_half_width) + "," +
               std::to_string(a.n_ok) + "," + std::to_string(a.n_failed) + "\n";
    out += "batch-mean," + format_double(s.batch_mean) + ",0,,\n";
    out += "batch-max," + format_double(s.batch_max) + ",0,,\n";
    out += "optimal," + format_double(s.optimal_return) + ",0,,\n";
    return out;
}

std::vector<ExperimentConfig> sweep_configs(const ExperimentConfig& base, const std::vector<double>& betas,
                                            const std::vector<double>& fs, const std::vector<MuChoice>& mus,
                                            const std::vector<RhoChoice>& rhos) {
    const std::vector<double> bs = betas.empty() ? std::vector<double>{base.combo.beta} : betas;
    const std::vector<double> ff = fs.empty() ? std::vector<double>{base.combo.f} : fs;
    const std::vector<MuChoice> ms = mus.empty() ? std::vector<MuChoice>{base.combo.mu_choice} : mus;
    const std::vector<RhoChoice> rs = rhos.empty() ? std::vector<RhoChoice>{base.combo.rho_choice} : rhos;
    std::vector<ExperimentConfig> out;
    for (double b : bs)
        for (double f : ff)
            for (MuChoice m : ms)
                for (RhoChoice r : rs) {
                    ExperimentConfig c = base;
                    c.combo.beta = b;
                    c.combo.f = f;
                    c.combo.mu_choice = m;
                    c.combo.rho_choice = r;
                    c.validate();
                    out.push_back(std::move(c));
                }
    return out;
}

}  // namespace combo
