#include "combo/model.hpp"

#include <cmath>

#include <json.hpp>

#include "combo/errors.hpp"
#include "combo/rng.hpp"
#include "combo/serialize.hpp"

namespace combo {

LearnedModel fit_mle_model(const Dataset& dataset, const TabularMDP& template_mdp, double smoothing) {
    if (dataset.empty()) throw ValidationError("fit_mle_model: empty dataset");
    if (!(smoothing >= 0.0) || !std::isfinite(smoothing))
        throw ValidationError("fit_mle_model: smoothing must be a finite non-negative number");
    const int ns = template_mdp.n_states();
    const int na = template_mdp.n_actions();
    if (dataset.n_states() != ns || dataset.n_actions() != na)
        throw ValidationError("fit_mle_model: dataset shape does not match template");

    Matrix reward_sum = Matrix::Zero(ns, na);
    for (const Transition& t : dataset.transitions()) reward_sum(t.s, t.a) += t.r;

    std::vector<Matrix> dynamics(static_cast<std::size_t>(na), Matrix::Zero(ns, ns));
    Matrix reward = Matrix::Zero(ns, na);
    for (int s = 0; s < ns; ++s) {
        for (int a = 0; a < na; ++a) {
            Matrix& p = dynamics[static_cast<std::size_t>(a)];
            const auto n = static_cast<double>(dataset.count(s, a));
            if (n > 0.0) reward(s, a) = reward_sum(s, a) / n;
            if (n == 0.0 && smoothing == 0.0) {
                p(s, s) = 1.0;
                continue;
            }
            const double denom = n + smoothing * ns;
            for (int s2 = 0; s2 < ns; ++s2)
                p(s, s2) = (static_cast<double>(dataset.count(s, a, s2)) + smoothing) / denom;
        }
    }
    const double r_max = std::max(template_mdp.r_max(), reward.cwiseAbs().maxCoeff());
    return LearnedModel{TabularMDP(std::move(dynamics), std::move(reward), template_mdp.init_dist(),
                                   template_mdp.gamma(), r_max),
                        smoothing, dataset.visited(), dataset.hash(), {}};
}

LearnedModel inject_model_bias(const LearnedModel& model, double magnitude, std::uint64_t seed) {
    if (!(magnitude >= 0.0 && magnitude <= 1.0))
        throw ValidationError("inject_model_bias: magnitude must lie in [0, 1]");
    const TabularMDP& m = model.mdp;
    Rng rng(seed);
    std::vector<Matrix> dynamics = m.dynamics();
    for (int a = 0; a < m.n_actions(); ++a) {
        for (int s = 0; s < m.n_states(); ++s) {
            // Draw noise even when magnitude is 0 so the stream layout is
            // independent of the magnitude.
            const Vector noise = rng.simplex(m.n_states());
            if (magnitude == 0.0) continue;
            Matrix& p = dynamics[static_cast<std::size_t>(a)];
            if (magnitude == 1.0) {
                p.row(s) = noise.transpose();
            } else {
                p.row(s) = (1.0 - magnitude) * p.row(s) + magnitude * noise.transpose();
            }
            p.row(s) /= p.row(s).sum();
        }
    }
    LearnedModel out = model;
    out.mdp = TabularMDP(std::move(dynamics), m.reward(), m.init_dist(), m.gamma(), m.r_max());
    out.bias.push_back(BiasSpec{"dynamics-noise", magnitude, seed});
    return out;
}

LearnedModel shift_model_reward(const LearnedModel& model, double delta) {
    Matrix reward = model.mdp.reward().array() + delta;
    const double r_max = std::max(model.mdp.r_max(), reward.cwiseAbs().maxCoeff());
    LearnedModel out = model;
    out.mdp = model.mdp.with_reward(std::move(reward), r_max);
    out.bias.push_back(BiasSpec{"reward-shift", delta, 0});
    return out;
}

ModelErrorProfile model_error_profile(const LearnedModel& model, const TabularMDP& truth) {
    const TabularMDP& m = model.mdp;
    if (m.n_states() != truth.n_states() || m.n_actions() != truth.n_actions())
        throw ValidationError("model_error_profile: shape mismatch");
    ModelErrorProfile out;
    out.tv.resize(m.n_states(), m.n_actions());
    for (int a = 0; a < m.n_actions(); ++a) {
        for (int s = 0; s < m.n_states(); ++s) {
            const Vector p = m.dynamics(a).row(s).transpose();
            const Vector q = truth.dynamics(a).row(s).transpose();
            out.tv(s, a) = tv_divergence(p, q);
        }
    }
    out.reward_error = (m.reward() - truth.reward()).cwiseAbs();
    out.max_tv = out.tv.maxCoeff();
    out.max_reward_error = out.reward_error.maxCoeff();
    return out;
}

Matrix count_uncertainty(const Dataset& dataset) {
    Matrix u(dataset.n_states(), dataset.n_actions());
    for (int s = 0; s < dataset.n_states(); ++s)
        for (int a = 0; a < dataset.n_actions(); ++a)
            u(s, a) = 1.0 / std::sqrt(static_cast<double>(std::max<std::int64_t>(dataset.count(s, a), 1)));
    return u;
}

std::string learned_model_to_json(const LearnedModel& model) {
    nlohmann::ordered_json j = mdp_to_json_value(model.mdp);
    nlohmann::ordered_json prov;
    prov["dataset_hash"] = model.dataset_hash;
    prov["smoothing"] = model.smoothing;
    nlohmann::ordered_json visited = nlohmann::ordered_json::array();
    for (int s = 0; s < model.mdp.n_states(); ++s) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (int a = 0; a < model.mdp.n_actions(); ++a) row.push_back(static_cast<bool>(model.visited(s, a)));
        visited.push_back(std::move(row));
    }
    prov["visited"] = std::move(visited);
    nlohmann::ordered_json bias = nlohmann::ordered_json::array();
    for (const BiasSpec& b : model.bias)
        bias.push_back({{"kind", b.kind}, {"magnitude", b.magnitude}, {"seed", b.seed}});
    prov["bias_spec"] = std::move(bias);
    j["provenance"] = std::move(prov);
    return j.dump(2) + "\n";
}

LearnedModel learned_model_from_json(const std::string& text) {
    const auto j = nlohmann::ordered_json::parse(text);
    TabularMDP mdp = mdp_from_json_value(j);
    const auto& prov = j.at("provenance");
    Mask visited(mdp.n_states(), mdp.n_actions());
    for (int s = 0; s < mdp.n_states(); ++s)
        for (int a = 0; a < mdp.n_actions(); ++a)
            visited(s, a) = prov.at("visited").at(static_cast<std::size_t>(s)).at(static_cast<std::size_t>(a)).get<bool>();
    std::vector<BiasSpec> bias;
    for (const auto& b : prov.at("bias_spec"))
        bias.push_back(BiasSpec{b.at("kind").get<std::string>(), b.at("magnitude").get<double>(),
                                b.at("seed").get<std::uint64_t>()});
    return LearnedModel{std::move(mdp), prov.at("smoothing").get<double>(), std::move(visited),
                        prov.at("dataset_hash").get<std::uint64_t>(), std::move(bias)};
}

}  // namespace combo
