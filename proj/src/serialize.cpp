#include "combo/serialize.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "combo/errors.hpp"

namespace combo {

Json matrix_to_json(const Matrix& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const Json& j) {
    if (!j.is_array() || j.empty()) throw ValidationError("matrix_from_json: expected a non-empty array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j.front().size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Json& row = j.at(static_cast<std::size_t>(i));
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw ValidationError("matrix_from_json: ragged rows");
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

Json mdp_to_json_value(const TabularMDP& mdp) {
    Json j;
    j["n_states"] = mdp.n_states();
    j["n_actions"] = mdp.n_actions();
    j["gamma"] = mdp.gamma();
    j["r_max"] = mdp.r_max();
    Json init = Json::array();
    for (int s = 0; s < mdp.n_states(); ++s) init.push_back(mdp.init_dist()(s));
    j["init_dist"] = std::move(init);
    j["reward"] = matrix_to_json(mdp.reward());
    Json dyn = Json::array();
    for (int s = 0; s < mdp.n_states(); ++s) {
        Json per_action = Json::array();
        for (int a = 0; a < mdp.n_actions(); ++a) {
            Json row = Json::array();
            for (int s2 = 0; s2 < mdp.n_states(); ++s2) row.push_back(mdp.dynamics(a)(s, s2));
            per_action.push_back(std::move(row));
        }
        dyn.push_back(std::move(per_action));
    }
    j["dynamics"] = std::move(dyn);
    return j;
}

TabularMDP mdp_from_json_value(const Json& j) {
    const int ns = j.at("n_states").get<int>();
    const int na = j.at("n_actions").get<int>();
    if (ns <= 0 || na <= 0) throw ValidationError("mdp_from_json: empty state or action set");
    Vector init(ns);
    const Json& init_j = j.at("init_dist");
    if (static_cast<int>(init_j.size()) != ns) throw ValidationError("mdp_from_json: init_dist length");
    for (int s = 0; s < ns; ++s) init(s) = init_j.at(static_cast<std::size_t>(s)).get<double>();
    Matrix reward = matrix_from_json(j.at("reward"));
    if (reward.rows() != ns || reward.cols() != na) throw ValidationError("mdp_from_json: reward shape");
    const Json& dyn = j.at("dynamics");
    if (static_cast<int>(dyn.size()) != ns) throw ValidationError("mdp_from_json: dynamics shape");
    std::vector<Matrix> dynamics(static_cast<std::size_t>(na), Matrix::Zero(ns, ns));
    for (int s = 0; s < ns; ++s) {
        const Json& per_action = dyn.at(static_cast<std::size_t>(s));
        if (static_cast<int>(per_action.size()) != na) throw ValidationError("mdp_from_json: dynamics shape");
        for (int a = 0; a < na; ++a) {
            const Json& row = per_action.at(static_cast<std::size_t>(a));
            if (static_cast<int>(row.size()) != ns) throw ValidationError("mdp_from_json: dynamics shape");
            for (int s2 = 0; s2 < ns; ++s2)
                dynamics[static_cast<std::size_t>(a)](s, s2) = row.at(static_cast<std::size_t>(s2)).get<double>();
        }
    }
    std::optional<double> r_max;
    if (j.contains("r_max")) r_max = j.at("r_max").get<double>();
    return TabularMDP(std::move(dynamics), std::move(reward), std::move(init), j.at("gamma").get<double>(), r_max);
}

std::string mdp_to_json(const TabularMDP& mdp) { return mdp_to_json_value(mdp).dump(2) + "\n"; }

TabularMDP mdp_from_json(const std::string& text) {
    try {
        return mdp_from_json_value(Json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("mdp_from_json: ") + e.what());
    }
}

Json policy_to_json(const TabularPolicy& policy) {
    Json j;
    j["n_states"] = policy.n_states();
    j["n_actions"] = policy.n_actions();
    j["probs"] = matrix_to_json(policy.probs());
    return j;
}

TabularPolicy policy_from_json(const Json& j) { return TabularPolicy(matrix_from_json(j.at("probs"))); }

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
    KeyValues out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto comment = line.find_first_of("#;");
        std::string body = trim(std::string_view(line).substr(0, comment));
        if (body.empty()) continue;
        if (body.front() == '[' && body.back() == ']') continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(std::string_view(body).substr(0, eq));
        std::string value = trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) throw ValidationError("config line " + std::to_string(line_no) + ": empty key");
        out[std::move(key)] = std::move(value);
    }
    return out;
}

std::string format_key_values(const KeyValues& values) {
    std::string out;
    for (const auto& [k, v] : values) out += k + " = " + v + "\n";
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << contents;
    if (!out) throw std::runtime_error("write failed for " + path);
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) throw ValidationError("not a number: '" + s + "'");
    return v;
}

}  // namespace combo
