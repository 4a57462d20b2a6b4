#include "combo/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "combo/errors.hpp"
#include "combo/hash.hpp"
#include "combo/rng.hpp"
#include "combo/serialize.hpp"

namespace combo {

Dataset::Dataset(int n_states, int n_actions, std::vector<Transition> transitions,
                 std::uint64_t source_seed, int episode_len)
    : n_states_(n_states),
      n_actions_(n_actions),
      transitions_(std::move(transitions)),
      source_seed_(source_seed),
      episode_len_(episode_len) {
    if (n_states_ <= 0 || n_actions_ <= 0) throw ValidationError("Dataset: empty state or action set");
    if (episode_len_ < 0) throw ValidationError("Dataset: negative episode length");
    const auto ns = static_cast<std::size_t>(n_states_);
    counts_s_.assign(ns, 0);
    counts_sa_.assign(ns * static_cast<std::size_t>(n_actions_), 0);
    counts_sas_.assign(ns * static_cast<std::size_t>(n_actions_) * ns, 0);
    for (const Transition& t : transitions_) {
        if (t.s < 0 || t.s >= n_states_ || t.s_next < 0 || t.s_next >= n_states_ || t.a < 0 ||
            t.a >= n_actions_)
            throw ValidationError("Dataset: transition index out of range");
        if (!std::isfinite(t.r)) throw ValidationError("Dataset: non-finite reward");
        ++counts_s_[static_cast<std::size_t>(t.s)];
        ++counts_sa_[index(t.s, t.a)];
        ++counts_sas_[index(t.s, t.a) * ns + static_cast<std::size_t>(t.s_next)];
    }
}

Mask Dataset::visited() const {
    Mask mask(n_states_, n_actions_);
    for (int s = 0; s < n_states_; ++s)
        for (int a = 0; a < n_actions_; ++a) mask(s, a) = count(s, a) > 0;
    return mask;
}

Dataset Dataset::concatenated(const Dataset& other) const {
    if (other.n_states_ != n_states_ || other.n_actions_ != n_actions_)
        throw ValidationError("Dataset::concatenated: shape mismatch");
    std::vector<Transition> all = transitions_;
    all.insert(all.end(), other.transitions_.begin(), other.transitions_.end());
    return Dataset(n_states_, n_actions_, std::move(all), source_seed_,
                   episode_len_ == other.episode_len_ ? episode_len_ : 0);
}

Dataset Dataset::relabeled(const Matrix& reward) const {
    if (reward.rows() != n_states_ || reward.cols() != n_actions_)
        throw ValidationError("Dataset::relabeled: reward shape mismatch");
    std::vector<Transition> out = transitions_;
    for (Transition& t : out) t.r = reward(t.s, t.a);
    return Dataset(n_states_, n_actions_, std::move(out), source_seed_, episode_len_);
}

std::uint64_t Dataset::hash() const {
    Fnv1a h;
    h.add(n_states_);
    h.add(n_actions_);
    h.add(static_cast<std::uint64_t>(transitions_.size()));
    for (const Transition& t : transitions_) {
        h.add(t.s);
        h.add(t.a);
        h.add(t.r);
        h.add(t.s_next);
    }
    return h.digest();
}

std::uint64_t Dataset::counts_digest() const {
    Fnv1a h;
    h.add(n_states_);
    h.add(n_actions_);
    for (std::int64_t c : counts_sas_) h.add(c);
    return h.digest();
}

bool Dataset::operator==(const Dataset& other) const {
    return n_states_ == other.n_states_ && n_actions_ == other.n_actions_ &&
           source_seed_ == other.source_seed_ && episode_len_ == other.episode_len_ &&
           transitions_ == other.transitions_;
}

// ---------------------------------------------------------------------------

Dataset collect_dataset(const TabularMDP& mdp, const TabularPolicy& behavior, int n_transitions,
                        int episode_len, std::uint64_t seed) {
    if (n_transitions < 1) throw ValidationError("collect_dataset: n_transitions must be >= 1");
    if (episode_len < 1) throw ValidationError("collect_dataset: episode_len must be >= 1");
    if (behavior.n_states() != mdp.n_states() || behavior.n_actions() != mdp.n_actions())
        throw ValidationError("collect_dataset: policy shape mismatch");
    Rng rng(seed);
    std::vector<Transition> out;
    out.reserve(static_cast<std::size_t>(n_transitions));
    int s = 0;
    for (int i = 0; i < n_transitions; ++i) {
        if (i % episode_len == 0) s = rng.categorical(mdp.init_dist());
        const int a = rng.categorical(behavior.row(s).transpose());
        const int s_next = rng.categorical(mdp.dynamics(a).row(s).transpose());
        out.push_back(Transition{s, a, mdp.reward(s, a), s_next});
        s = s_next;
    }
    return Dataset(mdp.n_states(), mdp.n_actions(), std::move(out), seed, episode_len);
}

EmpiricalMDP build_empirical_mdp(const Dataset& dataset, const TabularMDP& template_mdp) {
    if (dataset.empty()) throw ValidationError("build_empirical_mdp: empty dataset");
    const int ns = template_mdp.n_states();
    const int na = template_mdp.n_actions();
    if (dataset.n_states() != ns || dataset.n_actions() != na)
        throw ValidationError("build_empirical_mdp: dataset shape does not match template");

    Matrix reward_sum = Matrix::Zero(ns, na);
    for (const Transition& t : dataset.transitions()) reward_sum(t.s, t.a) += t.r;

    std::vector<Matrix> dynamics(static_cast<std::size_t>(na), Matrix::Zero(ns, ns));
    Matrix reward = Matrix::Zero(ns, na);
    Mask visited = dataset.visited();
    for (int s = 0; s < ns; ++s) {
        for (int a = 0; a < na; ++a) {
            const std::int64_t n = dataset.count(s, a);
            if (n == 0) {
                dynamics[static_cast<std::size_t>(a)](s, s) = 1.0;
                continue;
            }
            for (int s2 = 0; s2 < ns; ++s2)
                dynamics[static_cast<std::size_t>(a)](s, s2) =
                    static_cast<double>(dataset.count(s, a, s2)) / static_cast<double>(n);
            reward(s, a) = reward_sum(s, a) / static_cast<double>(n);
        }
    }
    const double r_max = std::max(template_mdp.r_max(), reward.cwiseAbs().maxCoeff());
    return EmpiricalMDP{TabularMDP(std::move(dynamics), std::move(reward), template_mdp.init_dist(),
                                   template_mdp.gamma(), r_max),
                        std::move(visited)};
}

OccupancyMeasure dataset_distribution(const Dataset& dataset) {
    if (dataset.empty()) throw ValidationError("dataset_distribution: empty dataset");
    Matrix d(dataset.n_states(), dataset.n_actions());
    const double total = static_cast<double>(dataset.size());
    for (int s = 0; s < dataset.n_states(); ++s)
        for (int a = 0; a < dataset.n_actions(); ++a) d(s, a) = static_cast<double>(dataset.count(s, a)) / total;
    return OccupancyMeasure(std::move(d));
}

std::vector<double> episode_returns(const Dataset& dataset, double gamma) {
    const std::size_t chunk = dataset.episode_len() > 0 ? static_cast<std::size_t>(dataset.episode_len())
                                                        : dataset.size();
    std::vector<double> returns;
    double ret = 0.0;
    double discount = 1.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (i > 0 && i % chunk == 0) {
            returns.push_back(ret);
            ret = 0.0;
            discount = 1.0;
        }
        ret += discount * dataset.transitions()[i].r;
        discount *= gamma;
    }
    if (!dataset.empty()) returns.push_back(ret);
    return returns;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

template <typename T>
T parse_field(std::string_view field, std::size_t line_no) {
    T value{};
    const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size())
        throw ValidationError("dataset text: bad field on line " + std::to_string(line_no));
    return value;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

std::string dataset_to_text(const Dataset& dataset) {
    std::string out = "# s\ta\tr\ts_next\n";
    for (const Transition& t : dataset.transitions()) {
        out += std::to_string(t.s);
        out += '\t';
        out += std::to_string(t.a);
        out += '\t';
        out += format_double(t.r);
        out += '\t';
        out += std::to_string(t.s_next);
        out += '\n';
    }
    return out;
}

Dataset dataset_from_text(const std::string& text, int n_states, int n_actions, std::uint64_t source_seed,
                          int episode_len) {
    std::vector<Transition> transitions;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        std::string_view rest(line);
        std::string_view fields[4];
        for (int i = 0; i < 4; ++i) {
            const auto tab = rest.find('\t');
            if ((tab == std::string_view::npos) != (i == 3))
                throw ValidationError("dataset text: expected 4 tab-separated fields on line " +
                                      std::to_string(line_no));
            fields[i] = rest.substr(0, tab);
            if (tab != std::string_view::npos) rest.remove_prefix(tab + 1);
        }
        transitions.push_back(Transition{parse_field<int>(fields[0], line_no), parse_field<int>(fields[1], line_no),
                                         parse_field<double>(fields[2], line_no),
                                         parse_field<int>(fields[3], line_no)});
    }
    return Dataset(n_states, n_actions, std::move(transitions), source_seed, episode_len);
}

std::string dataset_sidecar_json(const Dataset& dataset, std::uint64_t mdp_hash) {
    nlohmann::ordered_json j;
    j["format"] = "combo-dataset-v1";
    j["n_states"] = dataset.n_states();
    j["n_actions"] = dataset.n_actions();
    j["n_transitions"] = dataset.size();
    j["episode_len"] = dataset.episode_len();
    j["seed"] = dataset.source_seed();
    j["mdp_hash"] = hex64(mdp_hash);
    j["dataset_hash"] = hex64(dataset.hash());
    j["counts_digest"] = hex64(dataset.counts_digest());
    return j.dump(2) + "\n";
}

void write_dataset(const Dataset& dataset, std::uint64_t mdp_hash, const std::string& stem) {
    std::ofstream tsv(stem + ".tsv", std::ios::binary);
    std::ofstream json(stem + ".json", std::ios::binary);
    if (!tsv || !json) throw std::runtime_error("write_dataset: cannot open output for " + stem);
    tsv << dataset_to_text(dataset);
    json << dataset_sidecar_json(dataset, mdp_hash);
}

Dataset read_dataset(const std::string& stem) {
    std::ifstream json_in(stem + ".json", std::ios::binary);
    std::ifstream tsv_in(stem + ".tsv", std::ios::binary);
    if (!json_in || !tsv_in) throw std::runtime_error("read_dataset: cannot open " + stem);
    const auto meta = nlohmann::json::parse(json_in);
    std::stringstream body;
    body << tsv_in.rdbuf();
    Dataset dataset = dataset_from_text(body.str(), meta.at("n_states").get<int>(), meta.at("n_actions").get<int>(),
                                        meta.at("seed").get<std::uint64_t>(), meta.at("episode_len").get<int>());
    if (hex64(dataset.counts_digest()) != meta.at("counts_digest").get<std::string>())
        throw ValidationError("read_dataset: counts digest mismatch for " + stem);
    return dataset;
}

}  // namespace combo
