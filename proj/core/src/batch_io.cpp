#include "batchrl/batch_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "batchrl/errors.hpp"

namespace batchrl {

using Json = nlohmann::ordered_json;

namespace {

constexpr int kBatchFormatVersion = 1;

template <typename T>
T required(const Json& record, const char* key) {
  auto it = record.find(key);
  if (it == record.end()) throw FormatError(std::string("batch record missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("batch record field '") + key + "': " + e.what());
  }
}

std::vector<double> optional_features(const Json& record, const char* key) {
  auto it = record.find(key);
  if (it == record.end() || it->is_null()) return {};
  return it->get<std::vector<double>>();
}

}  // namespace

std::string transition_to_line(const Transition& t) {
  Json record;
  record["state_id"] = t.state.id;
  if (!t.state.features.empty()) record["state_features"] = t.state.features;
  record["action"] = t.action;
  Json rewards = Json::object();
  for (const auto& [name, value] : t.rewards) rewards[name] = value;
  record["rewards"] = std::move(rewards);
  record["next_state_id"] = t.next_state.id;
  if (!t.next_state.features.empty()) record["next_state_features"] = t.next_state.features;
  record["terminal"] = t.terminal;
  record["behavior_model"] = t.behavior_model;
  if (!t.context.empty()) {
    Json context = Json::object();
    for (const auto& [key, value] : t.context) context[key] = value;
    record["context"] = std::move(context);
  }
  return record.dump();
}

Transition transition_from_line(std::string_view line) {
  Json record;
  try {
    record = Json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("batch line is not valid JSON: ") + e.what());
  }
  if (!record.is_object()) throw FormatError("batch line is not an object");
  Transition t;
  t.state.id = required<std::int64_t>(record, "state_id");
  t.state.features = optional_features(record, "state_features");
  t.action = required<std::size_t>(record, "action");
  const auto rewards = required<Json>(record, "rewards");
  for (const auto& [name, value] : rewards.items()) {
    t.rewards[name] = value.get<double>();
  }
  t.next_state.id = required<std::int64_t>(record, "next_state_id");
  t.next_state.features = optional_features(record, "next_state_features");
  t.terminal = required<bool>(record, "terminal");
  if (auto it = record.find("behavior_model"); it != record.end() && !it->is_null()) {
    t.behavior_model = it->get<std::string>();
  }
  if (auto it = record.find("context"); it != record.end()) {
    for (const auto& [key, value] : it->items()) t.context[key] = value.get<std::string>();
  }
  return t;
}

void write_batch(std::ostream& out, const Batch& batch) {
  Json header;
  header["format"] = "batchrl-batch";
  header["version"] = kBatchFormatVersion;
  header["action_count"] = batch.action_count();
  Json metadata = Json::object();
  for (const auto& [model, fraction] : batch.metadata()) metadata[model] = fraction;
  header["metadata"] = std::move(metadata);
  out << header.dump() << '\n';
  for (const auto& t : batch.transitions()) out << transition_to_line(t) << '\n';
}

Batch read_batch(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("batch file is empty");
  Json header;
  try {
    header = Json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("batch header is not valid JSON: ") + e.what());
  }
  if (header.value("format", "") != "batchrl-batch") throw FormatError("not a batchrl batch file");
  if (header.value("version", 0) != kBatchFormatVersion) {
    throw FormatError("unsupported batch format version");
  }
  const auto action_count = required<std::size_t>(header, "action_count");
  std::map<std::string, double> metadata;
  const auto fractions = required<Json>(header, "metadata");
  for (const auto& [model, fraction] : fractions.items()) {
    metadata[model] = fraction.get<double>();
  }
  std::vector<Transition> transitions;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    transitions.push_back(transition_from_line(line));
  }
  return Batch(std::move(transitions), action_count, std::move(metadata));
}

void save_batch(const std::filesystem::path& path, const Batch& batch) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot open batch file for writing: " + path.string());
  write_batch(out, batch);
}

Batch load_batch(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open batch file: " + path.string());
  return read_batch(in);
}

}  // namespace batchrl
