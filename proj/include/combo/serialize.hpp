#pragma once

// JSON and flat key-value persistence helpers shared by the modules.

#include <map>
#include <string>

#include <json.hpp>

#include "combo/mdp.hpp"

namespace combo {

using Json = nlohmann::ordered_json;

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);

/// {"n_states", "n_actions", "gamma", "r_max", "init_dist", "reward"[s][a],
///  "dynamics"[s][a][s']}
Json mdp_to_json_value(const TabularMDP& mdp);
TabularMDP mdp_from_json_value(const Json& j);
std::string mdp_to_json(const TabularMDP& mdp);
TabularMDP mdp_from_json(const std::string& text);

Json policy_to_json(const TabularPolicy& policy);
TabularPolicy policy_from_json(const Json& j);

/// Flat "key = value" text. '#' and ';' start comments, blank lines are
/// skipped, and a leading [section] header is ignored.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& values);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

/// Shortest round-trip decimal form.
std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace combo
