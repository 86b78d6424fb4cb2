#include "batchrl/env_spec.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "batchrl/errors.hpp"

namespace batchrl {

namespace {

using Json = nlohmann::ordered_json;

template <typename T>
T field(const Json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("env spec: missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("env spec: bad field '") + key + "': " + e.what());
  }
}

template <typename T>
T field_or(const Json& j, const char* key, T fallback) {
  return j.contains(key) ? field<T>(j, key) : fallback;
}

TabularMDP parse_tabular(const Json& j, const std::string& name) {
  const auto states = field<std::size_t>(j, "states");
  const auto actions = field<std::size_t>(j, "actions");
  const auto rewards = field<std::vector<std::vector<double>>>(j, "rewards");
  const auto kernel = field<std::vector<std::vector<std::vector<double>>>>(j, "kernel");
  if (rewards.size() != states || kernel.size() != states) {
    throw FormatError("env spec: rewards/kernel must have one row per state");
  }
  std::vector<double> flat_rewards, flat_kernel;
  for (std::size_t s = 0; s < states; ++s) {
    if (rewards[s].size() != actions || kernel[s].size() != actions) {
      throw FormatError("env spec: state " + std::to_string(s) + " needs one entry per action");
    }
    flat_rewards.insert(flat_rewards.end(), rewards[s].begin(), rewards[s].end());
    for (const auto& row : kernel[s]) {
      if (row.size() != states) {
        throw FormatError("env spec: kernel rows must have one entry per state");
      }
      flat_kernel.insert(flat_kernel.end(), row.begin(), row.end());
    }
  }
  return TabularMDP(name, states, actions, std::move(flat_kernel), std::move(flat_rewards),
                    field_or<std::vector<std::size_t>>(j, "terminals", {}),
                    field<double>(j, "gamma"), field_or<std::size_t>(j, "start", 0),
                    field_or<std::size_t>(j, "max_episode_steps", 100));
}

DialogConfig parse_dialog(const Json& j) {
  DialogConfig config = DialogConfig::defaults();
  config.vocabulary = field_or(j, "vocabulary", config.vocabulary);
  config.max_turns = field_or(j, "max_turns", config.max_turns);
  config.max_utterance_tokens = field_or(j, "max_utterance_tokens", config.max_utterance_tokens);
  config.window = field_or(j, "window", config.window);
  config.openings = field_or(j, "openings", config.openings);
  config.validate();
  return config;
}

}  // namespace

EnvSpec parse_env_spec(std::string_view json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("env spec: ") + e.what());
  }
  const auto kind = field<std::string>(j, "kind");
  const auto name = field_or<std::string>(j, "name", kind);
  if (kind == "tabular") return EnvSpec{name, parse_tabular(j, name)};
  if (kind == "dialog") return EnvSpec{name, parse_dialog(j)};
  throw FormatError("env spec: unknown kind '" + kind + "'");
}

EnvSpec load_env_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open env spec " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_env_spec(text.str());
}

std::string env_spec_to_json(const EnvSpec& spec) {
  Json j;
  if (const auto* mdp = spec.tabular()) {
    const std::size_t S = mdp->state_count(), A = mdp->action_count();
    j["kind"] = "tabular";
    j["name"] = spec.name;
    j["states"] = S;
    j["actions"] = A;
    j["gamma"] = mdp->gamma();
    j["start"] = mdp->start_state();
    j["max_episode_steps"] = mdp->max_episode_steps();
    j["terminals"] = mdp->terminals();
    Json rewards = Json::array(), kernel = Json::array();
    for (std::size_t s = 0; s < S; ++s) {
      Json r = Json::array(), k = Json::array();
      for (std::size_t a = 0; a < A; ++a) {
        r.push_back(mdp->reward(s, a));
        Json row = Json::array();
        for (std::size_t n = 0; n < S; ++n) row.push_back(mdp->probability(s, a, n));
        k.push_back(std::move(row));
      }
      rewards.push_back(std::move(r));
      kernel.push_back(std::move(k));
    }
    j["rewards"] = std::move(rewards);
    j["kernel"] = std::move(kernel);
  } else {
    const auto& d = *spec.dialog();
    j["kind"] = "dialog";
    j["name"] = spec.name;
    j["vocabulary"] = d.vocabulary;
    j["max_turns"] = d.max_turns;
    j["max_utterance_tokens"] = d.max_utterance_tokens;
    j["window"] = d.window;
    j["openings"] = d.openings;
  }
  std::string out = "{\n";
  bool first = true;
  for (const auto& [key, value] : j.items()) {
    if (!first) out += ",\n";
    first = false;
    out += "  " + Json(key).dump() + ": ";
    if ((key == "kernel" || key == "rewards" || key == "vocabulary" || key == "openings") &&
        !value.empty()) {
      out += "[\n";
      for (std::size_t i = 0; i < value.size(); ++i) {
        out += "    " + value[i].dump() + (i + 1 < value.size() ? ",\n" : "\n");
      }
      out += "  ]";
    } else {
      out += value.dump();
    }
  }
  return out + "\n}\n";
}

std::unique_ptr<Environment> make_environment(const EnvSpec& spec) {
  if (const auto* mdp = spec.tabular()) return std::make_unique<TabularEnvironment>(*mdp);
  return std::make_unique<DialogEnvironment>(*spec.dialog());
}

}  // namespace batchrl
