#pragma once

// Loader for the three-turn golden transcript fixture.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "batchrl/rewards.hpp"

namespace batchrl::testing {

struct GoldenTurn {
  rewards::TurnContext turn;
  RewardMap expected;
  double total = 0.0;
};

struct GoldenTranscript {
  double length_discount = 0.5;
  std::vector<GoldenTurn> turns;
};

inline GoldenTranscript load_golden_transcript(const std::filesystem::path& path) {
  std::ifstream in(path);
  const auto j = nlohmann::json::parse(in);
  GoldenTranscript golden;
  golden.length_discount = j.at("length_discount").get<double>();
  const auto& turns = j.at("turns");
  std::vector<rewards::Tokens> history{rewards::tokenize(j.at("opening").get<std::string>())};
  for (const auto& t : turns) history.push_back(rewards::tokenize(t.at("reply").get<std::string>()));
  for (std::size_t n = 0; n < turns.size(); ++n) {
    GoldenTurn g;
    g.turn.agent = rewards::tokenize(turns[n].at("agent").get<std::string>());
    g.turn.user_input = history[n];
    g.turn.user_response = history[n + 1];
    g.turn.utterance_index = n + 1;
    g.turn.conversation_length = turns.size();
    g.turn.final_turn = n + 1 == turns.size();
    g.turn.user_history = history;
    for (const auto& [name, value] : turns[n].at("expected").items()) {
      g.expected[name] = value.get<double>();
    }
    g.total = turns[n].at("total").get<double>();
    golden.turns.push_back(std::move(g));
  }
  return golden;
}

}  // namespace batchrl::testing
