#include "combo/environment.hpp"

#include <algorithm>
#include <array>

#include "combo/baselines.hpp"
#include "combo/errors.hpp"
#include "combo/rng.hpp"

namespace combo {

namespace {

bool inside(const EnvSpec& spec, Cell c) {
    return c.first >= 0 && c.first < spec.width && c.second >= 0 && c.second < spec.height;
}

std::string cell_text(Cell c) { return "(" + std::to_string(c.first) + ", " + std::to_string(c.second) + ")"; }

int state_count(const EnvSpec& spec) {
    switch (spec.kind) {
        case EnvKind::Gridworld: return spec.width * spec.height;
        case EnvKind::RandomMDP: return spec.n_states;
        case EnvKind::Chain: return spec.length;
    }
    return 0;
}

TabularMDP make_gridworld(const EnvSpec& spec) {
    const int n = spec.width * spec.height;
    constexpr std::array<int, 4> dx{0, 1, 0, -1};
    constexpr std::array<int, 4> dy{-1, 0, 1, 0};
    const int goal = cell_index(spec, spec.goal);

    auto move = [&](int s, int dir) {
        const int x = s % spec.width + dx[static_cast<std::size_t>(dir)];
        const int y = s / spec.width + dy[static_cast<std::size_t>(dir)];
        if (!inside(spec, {x, y})) return s;
        return y * spec.width + x;
    };

    std::vector<Matrix> dyn(4, Matrix::Zero(n, n));
    Matrix reward = Matrix::Zero(n, 4);
    for (int s = 0; s < n; ++s) {
        for (int a = 0; a < 4; ++a) {
            Matrix& p = dyn[static_cast<std::size_t>(a)];
            if (s == goal) {
                p(s, s) = 1.0;
                continue;
            }
            p(s, move(s, a)) += 1.0 - spec.slip;
            p(s, move(s, (a + 1) % 4)) += spec.slip / 2.0;
            p(s, move(s, (a + 3) % 4)) += spec.slip / 2.0;
        }
    }
    reward.row(goal).setOnes();
    for (const Cell& h : spec.hazards) reward.row(cell_index(spec, h)).setConstant(-1.0);

    Vector mu0 = Vector::Zero(n);
    mu0(0) = 1.0;
    return TabularMDP(std::move(dyn), std::move(reward), std::move(mu0), spec.gamma, 1.0);
}

TabularMDP make_random_mdp(const EnvSpec& spec) {
    const int n = spec.n_states;
    const int m = spec.n_actions;
    Rng rng(spec.seed);
    std::vector<Matrix> dyn(static_cast<std::size_t>(m), Matrix::Zero(n, n));
    Matrix reward(n, m);
    std::vector<int> states(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        for (int a = 0; a < m; ++a) {
            for (int i = 0; i < n; ++i) states[static_cast<std::size_t>(i)] = i;
            // Partial Fisher-Yates: the first `branching` entries are the successors.
            for (int i = 0; i < spec.branching; ++i) {
                const int j = i + rng.uniform_int(n - i);
                std::swap(states[static_cast<std::size_t>(i)], states[static_cast<std::size_t>(j)]);
            }
            const Vector w = rng.simplex(spec.branching);
            for (int i = 0; i < spec.branching; ++i)
                dyn[static_cast<std::size_t>(a)](s, states[static_cast<std::size_t>(i)]) = w(i);
            reward(s, a) = rng.uniform();
        }
    }
    return TabularMDP(std::move(dyn), std::move(reward), Vector::Constant(n, 1.0 / n), spec.gamma, 1.0);
}

TabularMDP make_chain(const EnvSpec& spec) {
    const int n = spec.length;
    std::vector<Matrix> dyn(2, Matrix::Zero(n, n));
    for (int s = 0; s < n; ++s) {
        dyn[0](s, std::min(s + 1, n - 1)) = 1.0;
        dyn[1](s, s) = 1.0;
    }
    Matrix reward = Matrix::Zero(n, 2);
    reward.row(n - 1).setOnes();
    Vector mu0 = Vector::Zero(n);
    mu0(0) = 1.0;
    return TabularMDP(std::move(dyn), std::move(reward), std::move(mu0), spec.gamma, 1.0);
}

Json cell_json(Cell c) { return Json::array({c.first, c.second}); }

Cell cell_from_json(const Json& j) {
    if (!j.is_array() || j.size() != 2) throw ValidationError("env spec: a cell is a two-element array [x, y]");
    return {j.at(0).get<int>(), j.at(1).get<int>()};
}

}  // namespace

std::string to_string(EnvKind kind) {
    switch (kind) {
        case EnvKind::Gridworld: return "gridworld";
        case EnvKind::RandomMDP: return "random-mdp";
        case EnvKind::Chain: return "chain";
    }
    return "?";
}

EnvKind env_kind_from_string(const std::string& s) {
    if (s == "gridworld") return EnvKind::Gridworld;
    if (s == "random-mdp") return EnvKind::RandomMDP;
    if (s == "chain") return EnvKind::Chain;
    throw ValidationError("unknown environment kind '" + s + "'");
}

int cell_index(const EnvSpec& spec, Cell cell) {
    if (!inside(spec, cell)) throw ValidationError("cell " + cell_text(cell) + " is outside the grid");
    return cell.second * spec.width + cell.first;
}

void EnvSpec::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("env spec: gamma must lie in (0, 1)");
    switch (kind) {
        case EnvKind::Gridworld:
            if (width < 1 || height < 1) throw ValidationError("gridworld: width and height must be >= 1");
            if (!inside(*this, goal)) throw ValidationError("gridworld: goal " + cell_text(goal) + " is outside the grid");
            for (const Cell& h : hazards) {
                if (!inside(*this, h)) throw ValidationError("gridworld: hazard " + cell_text(h) + " is outside the grid");
                if (h == goal) throw ValidationError("gridworld: hazard on the goal cell");
            }
            if (!(slip >= 0.0 && slip <= 1.0)) throw ValidationError("gridworld: slip must lie in [0, 1]");
            break;
        case EnvKind::RandomMDP:
            if (n_states < 1 || n_actions < 1) throw ValidationError("random mdp: n_states and n_actions must be >= 1");
            if (branching < 1 || branching > n_states)
                throw ValidationError("random mdp: branching must lie in [1, n_states]");
            break;
        case EnvKind::Chain:
            if (length < 1) throw ValidationError("chain: length must be >= 1");
            break;
    }
    if (relabel_goal && (*relabel_goal < 0 || *relabel_goal >= state_count(*this)))
        throw ValidationError("env spec: relabel goal " + std::to_string(*relabel_goal) + " is not a state");
}

TabularMDP make_environment(const EnvSpec& spec) {
    spec.validate();
    TabularMDP mdp = [&] {
        switch (spec.kind) {
            case EnvKind::Gridworld: return make_gridworld(spec);
            case EnvKind::RandomMDP: return make_random_mdp(spec);
            case EnvKind::Chain: return make_chain(spec);
        }
        throw ValidationError("env spec: bad kind");
    }();
    if (spec.relabel_goal) return mdp.with_reward(relabel_reward(mdp, *spec.relabel_goal), 1.0);
    return mdp;
}

Matrix relabel_reward(const TabularMDP& mdp, int goal_state) {
    if (goal_state < 0 || goal_state >= mdp.n_states())
        throw ValidationError("relabel: goal " + std::to_string(goal_state) + " is not a state");
    Matrix r = Matrix::Zero(mdp.n_states(), mdp.n_actions());
    r.row(goal_state).setOnes();
    return r;
}

Json env_spec_to_json(const EnvSpec& spec) {
    Json j;
    j["kind"] = to_string(spec.kind);
    j["gamma"] = spec.gamma;
    switch (spec.kind) {
        case EnvKind::Gridworld: {
            j["width"] = spec.width;
            j["height"] = spec.height;
            j["goal"] = cell_json(spec.goal);
            Json hz = Json::array();
            for (const Cell& h : spec.hazards) hz.push_back(cell_json(h));
            j["hazards"] = hz;
            j["slip"] = spec.slip;
            break;
        }
        case EnvKind::RandomMDP:
            j["n_states"] = spec.n_states;
            j["n_actions"] = spec.n_actions;
            j["branching"] = spec.branching;
            j["seed"] = spec.seed;
            break;
        case EnvKind::Chain: j["length"] = spec.length; break;
    }
    if (spec.relabel_goal) j["relabel_goal"] = *spec.relabel_goal;
    return j;
}

EnvSpec env_spec_from_json(const Json& j) {
    try {
        EnvSpec s;
        s.kind = env_kind_from_string(j.at("kind").get<std::string>());
        s.gamma = j.value("gamma", s.gamma);
        s.width = j.value("width", s.width);
        s.height = j.value("height", s.height);
        if (j.contains("goal")) s.goal = cell_from_json(j["goal"]);
        if (j.contains("hazards"))
            for (const Json& h : j["hazards"]) s.hazards.push_back(cell_from_json(h));
        s.slip = j.value("slip", s.slip);
        s.n_states = j.value("n_states", s.n_states);
        s.n_actions = j.value("n_actions", s.n_actions);
        s.branching = j.value("branching", s.branching);
        s.seed = j.value("seed", s.seed);
        s.length = j.value("length", s.length);
        if (j.contains("relabel_goal") && !j["relabel_goal"].is_null()) s.relabel_goal = j["relabel_goal"].get<int>();
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("env spec: ") + e.what());
    }
}

std::string to_string(BehaviorQuality q) {
    switch (q) {
        case BehaviorQuality::Random: return "random";
        case BehaviorQuality::Medium: return "medium";
        case BehaviorQuality::Expert: return "expert";
        case BehaviorQuality::MediumExpert: return "medium-expert";
        case BehaviorQuality::MediumReplay: return "medium-replay";
    }
    return "?";
}

BehaviorQuality behavior_quality_from_string(const std::string& s) {
    if (s == "random") return BehaviorQuality::Random;
    if (s == "medium") return BehaviorQuality::Medium;
    if (s == "expert") return BehaviorQuality::Expert;
    if (s == "medium-expert") return BehaviorQuality::MediumExpert;
    if (s == "medium-replay") return BehaviorQuality::MediumReplay;
    throw ValidationError("unknown behavior quality '" + s + "'");
}

TabularPolicy epsilon_greedy_oracle(const TabularMDP& mdp, double epsilon) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in [0, 1]");
    const TabularPolicy greedy = value_iteration_oracle(mdp, 1e-10).first;
    const Matrix uniform = Matrix::Constant(mdp.n_states(), mdp.n_actions(), 1.0 / mdp.n_actions());
    return TabularPolicy((1.0 - epsilon) * greedy.probs() + epsilon * uniform);
}

TabularPolicy make_behavior_policy(const TabularMDP& mdp, BehaviorQuality quality, std::uint64_t /*seed*/) {
    const int n = mdp.n_states();
    const int m = mdp.n_actions();
    switch (quality) {
        case BehaviorQuality::Random: return TabularPolicy::uniform(n, m);
        case BehaviorQuality::Expert: return epsilon_greedy_oracle(mdp, kExpertEpsilon);
        case BehaviorQuality::Medium: return epsilon_greedy_oracle(mdp, kMediumEpsilon);
        case BehaviorQuality::MediumExpert:
            return TabularPolicy(0.5 * (epsilon_greedy_oracle(mdp, kMediumEpsilon).probs() +
                                        epsilon_greedy_oracle(mdp, kExpertEpsilon).probs()));
        case BehaviorQuality::MediumReplay:
            return TabularPolicy(0.5 * (TabularPolicy::uniform(n, m).probs() +
                                        epsilon_greedy_oracle(mdp, kMediumEpsilon).probs()));
    }
    throw ValidationError("bad behavior quality");
}

}  // namespace combo
