#include "batchrl/rewards.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "batchrl/errors.hpp"

namespace batchrl::rewards {

namespace {

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool is_split_punctuation(char c) {
  return c == '?' || c == '!' || c == '.' || c == ',' || c == ';' || c == ':';
}

std::size_t count_non_overlapping(std::string_view haystack, std::string_view needle) {
  std::size_t count = 0;
  std::size_t pos = haystack.find(needle);
  while (pos != std::string_view::npos) {
    ++count;
    pos = haystack.find(needle, pos + needle.size());
  }
  return count;
}

bool is_laugh_token(std::string_view token) {
  // "ha", "haha", "hahah", ...
  if (token.size() < 2) return false;
  for (std::size_t i = 0; i < token.size(); ++i) {
    if (token[i] != (i % 2 == 0 ? 'h' : 'a')) return false;
  }
  return true;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

std::size_t count_present(const std::string& text, const std::vector<std::string>& phrases) {
  std::size_t present = 0;
  for (const auto& phrase : phrases) {
    if (text.find(lower(phrase)) != std::string::npos) ++present;
  }
  return present;
}

std::size_t parse_count(const ContextMap& context, const std::string& key) {
  auto it = context.find(key);
  if (it == context.end()) throw UsageError("dialog context missing '" + key + "'");
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw UsageError("dialog context field '" + key + "' is not a count");
  }
}

const std::string& context_field(const ContextMap& context, const std::string& key) {
  auto it = context.find(key);
  if (it == context.end()) throw UsageError("dialog context missing '" + key + "'");
  return it->second;
}

constexpr std::string_view kHistorySeparator = " | ";

}  // namespace

const std::vector<std::string>& dialog_channels() {
  static const std::vector<std::string> channels{
      std::string(kQuestion),  std::string(kSemanticCoherence),  std::string(kLaughter),
      std::string(kSentimentTransition), std::string(kSentiment), std::string(kWordsElicited),
      std::string(kConversationLength)};
  return channels;
}

Tokens tokenize(std::string_view text) {
  Tokens tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(lower(current));
    current.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_split_punctuation(c)) {
      flush();
      tokens.emplace_back(1, c);
    } else {
      current.push_back(c);
    }
  }
  flush();
  return tokens;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

bool is_punctuation(std::string_view token) {
  return !token.empty() && std::all_of(token.begin(), token.end(), [](unsigned char c) {
    return std::ispunct(c) != 0;
  });
}

RewardSpec RewardSpec::dialog_default() {
  RewardSpec spec;
  spec.weights = {
      {std::string(kQuestion), 0.15682657},
      {std::string(kSemanticCoherence), 0.13837638},
      {std::string(kLaughter), 0.15313653},
      {std::string(kSentimentTransition), 0.14206642},
      {std::string(kSentiment), 0.14206642},
      {std::string(kWordsElicited), 0.14760148},
      {std::string(kConversationLength), 0.1199262},
  };
  return spec;
}

RewardSpec RewardSpec::single(std::string channel, double weight) {
  RewardSpec spec;
  spec.weights[std::move(channel)] = weight;
  return spec;
}

std::vector<std::string> RewardSpec::channels() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : weights) names.push_back(name);
  return names;
}

double total_reward(const RewardMap& values, const RewardSpec& spec) {
  std::vector<std::string> missing;
  double total = 0.0;
  for (const auto& [name, weight] : spec.weights) {
    auto it = values.find(name);
    if (it == values.end()) {
      missing.push_back(name);
      continue;
    }
    total += weight * it->second;
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw UsageError("total_reward: missing channels: " + names);
  }
  return total;
}

double question_reward(std::span<const std::string> agent_tokens) {
  static const std::set<std::string> question_words{"how", "what", "where", "why", "when", "who"};
  bool has_word = false;
  bool has_mark = false;
  for (const auto& token : agent_tokens) {
    const std::string t = lower(token);
    if (question_words.contains(t)) has_word = true;
    if (t == "?") has_mark = true;
  }
  return (has_word ? 0.5 : 0.0) + (has_mark ? 0.5 : 0.0);
}

std::size_t laughter_reward(std::string_view user_response, bool word_boundary) {
  const std::string text = lower(user_response);
  if (!word_boundary) return count_non_overlapping(text, "ha");
  std::size_t count = 0;
  for (const auto& token : tokenize(text)) {
    if (is_laugh_token(token)) count += token.size() / 2;
  }
  return count;
}

double conversation_length_reward(std::size_t total_utterances, std::size_t utterance_index,
                                  double gamma) {
  if (utterance_index < 1 || utterance_index > total_utterances) {
    throw UsageError("conversation_length_reward: need 1 <= n <= N");
  }
  const auto exponent = static_cast<double>(total_utterances - utterance_index);
  return std::pow(gamma, exponent) * static_cast<double>(total_utterances);
}

double words_elicited_reward(std::span<const std::string> user_tokens) {
  return static_cast<double>(std::count_if(user_tokens.begin(), user_tokens.end(),
                                           [](const std::string& t) { return !is_punctuation(t); }));
}

LexiconSentimentScorer::LexiconSentimentScorer(std::map<std::string, double> weights)
    : weights_(std::move(weights)) {
  for (const auto& [token, weight] : weights_) {
    if (!(weight >= -1.0 && weight <= 1.0)) {
      throw UsageError("sentiment lexicon weight for '" + token + "' outside [-1, 1]");
    }
  }
}

LexiconSentimentScorer LexiconSentimentScorer::defaults() {
  return LexiconSentimentScorer({
      {"awesome", 0.7}, {"fun", 0.5},      {"glad", 0.5},   {"good", 0.4},     {"great", 0.6},
      {"haha", 0.4},    {"happy", 0.6},    {"love", 0.7},   {"nice", 0.5},     {"thanks", 0.3},
      {"annoying", -0.6}, {"awful", -0.8}, {"bad", -0.6},   {"boring", -0.5},  {"hate", -0.8},
      {"sad", -0.6},    {"terrible", -0.8}, {"ugh", -0.5},
  });
}

LexiconSentimentScorer LexiconSentimentScorer::load(const std::filesystem::path& path) {
  std::map<std::string, double> weights;
  for (const auto& line : read_lines(path)) {
    std::istringstream fields(line);
    std::string token;
    double weight = 0.0;
    if (!(fields >> token >> weight)) throw FormatError("bad lexicon line: '" + line + "'");
    weights[lower(token)] = weight;
  }
  return LexiconSentimentScorer(std::move(weights));
}

double LexiconSentimentScorer::score(std::span<const std::string> tokens) const {
  double sum = 0.0;
  for (const auto& token : tokens) {
    auto it = weights_.find(lower(token));
    if (it != weights_.end()) sum += it->second;
  }
  return std::clamp(sum, -1.0, 1.0);
}

double sentiment_reward(std::span<const std::string> user_response, const SentimentScorer& scorer) {
  return scorer.score(user_response);
}

double sentiment_transition_reward(std::span<const Tokens> user_utterances,
                                   const SentimentScorer& scorer) {
  if (user_utterances.empty()) return 0.0;
  std::size_t peak_positive = 0;
  std::size_t peak_negative = 0;
  double best = 0.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < user_utterances.size(); ++i) {
    const double s = scorer.score(user_utterances[i]);
    if (i == 0 || s > best) {
      best = s;
      peak_positive = i;
    }
    if (i == 0 || s < worst) {
      worst = s;
      peak_negative = i;
    }
  }
  return peak_positive > peak_negative ? 1.0 : 0.0;
}

BagOfWordsEmbedder::BagOfWordsEmbedder(std::vector<std::string> vocabulary) {
  for (auto& word : vocabulary) {
    const std::string key = lower(word);
    if (!index_.contains(key)) index_.emplace(key, index_.size());
  }
}

std::vector<double> BagOfWordsEmbedder::embed(std::span<const std::string> tokens) const {
  std::vector<double> counts(index_.size(), 0.0);
  for (const auto& token : tokens) {
    auto it = index_.find(lower(token));
    if (it != index_.end()) counts[it->second] += 1.0;
  }
  return counts;
}

double semantic_similarity_reward(std::span<const std::string> user_input,
                                  std::span<const std::string> agent_response,
                                  const SentenceEmbedder& embedder) {
  const auto u = embedder.embed(user_input);
  const auto v = embedder.embed(agent_response);
  if (u.size() != v.size()) throw UsageError("semantic_similarity: embedding widths differ");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  const double cosine = std::clamp(dot / std::sqrt(nu * nv), -1.0, 1.0);
  return (cosine + 1.0) / 2.0;
}

const PhraseLists& PhraseLists::defaults() {
  static const PhraseLists lists{
      {"if I may", "may I", "please", "thanks", "no worries", "if you don't mind",
       "have a great day", "I'm sorry"},
      {"you're right", "you are right", "you're not alone", "you are not alone", "congrats",
       "that's a good idea", "that is a good idea", "you'll be fine", "you will be fine",
       "you'll be okay", "you will be okay", "it will get better", "sorry you're going through",
       "sorry you are going through", "if it makes you feel better",
       "if it makes you feel any better", "keep your head up", "keep it up",
       "I'm in a similar situation", "I am in a similar situation", "you'll get it",
       "you will get it", "happy for you", "I'm in the same boat", "I am in the same boat",
       "if you feel like you need to vent"},
      {"nice to hear", "happy", "excited", "really nice", "glad", "the best", "great",
       "good time", "looking forward", "beautiful"},
  };
  return lists;
}

PhraseLists PhraseLists::load(const std::filesystem::path& directory) {
  return PhraseLists{read_lines(directory / "polite.txt"), read_lines(directory / "supportive.txt"),
                     read_lines(directory / "cheerful.txt")};
}

PhraseMetrics posthoc_metrics(std::string_view utterance, const PhraseLists& phrases) {
  const std::string text = lower(utterance);
  return {count_present(text, phrases.polite), count_present(text, phrases.supportive),
          count_present(text, phrases.cheerful)};
}

RewardMap score_turn(const TurnContext& turn, const RewardScorers& scorers,
                     std::span<const std::string> channels, const RewardSpec& spec) {
  RewardMap values;
  for (const auto& channel : channels) {
    double value = 0.0;
    if (channel == kQuestion) {
      value = question_reward(turn.agent);
    } else if (channel == kSemanticCoherence) {
      if (!scorers.embedder) throw UsageError("score_turn: no sentence embedder configured");
      value = semantic_similarity_reward(turn.user_input, turn.agent, *scorers.embedder);
    } else if (channel == kLaughter) {
      value = static_cast<double>(
          laughter_reward(join_tokens(turn.user_response), spec.laughter_word_boundary));
    } else if (channel == kSentimentTransition) {
      if (!scorers.sentiment) throw UsageError("score_turn: no sentiment scorer configured");
      value = turn.final_turn ? sentiment_transition_reward(turn.user_history, *scorers.sentiment)
                              : 0.0;
    } else if (channel == kSentiment) {
      if (!scorers.sentiment) throw UsageError("score_turn: no sentiment scorer configured");
      value = sentiment_reward(turn.user_response, *scorers.sentiment);
    } else if (channel == kWordsElicited) {
      value = words_elicited_reward(turn.user_response);
    } else if (channel == kConversationLength) {
      value = conversation_length_reward(turn.conversation_length, turn.utterance_index,
                                         spec.length_discount);
    } else {
      throw UsageError("score_turn: unknown dialog channel '" + channel + "'");
    }
    values[channel] = value;
  }
  return values;
}

ContextMap encode_turn_context(const TurnContext& turn) {
  std::string history;
  for (std::size_t i = 0; i < turn.user_history.size(); ++i) {
    if (i > 0) history += kHistorySeparator;
    history += join_tokens(turn.user_history[i]);
  }
  return {
      {"utterance_final", "1"},
      {"agent", join_tokens(turn.agent)},
      {"user_input", join_tokens(turn.user_input)},
      {"user_response", join_tokens(turn.user_response)},
      {"utterance_index", std::to_string(turn.utterance_index)},
      {"conversation_length", std::to_string(turn.conversation_length)},
      {"final_turn", turn.final_turn ? "1" : "0"},
      {"user_history", history},
  };
}

ContextMap non_final_token_context() { return {{"utterance_final", "0"}}; }

std::optional<TurnContext> decode_turn_context(const ContextMap& context) {
  const std::string& marker = context_field(context, "utterance_final");
  if (marker == "0") return std::nullopt;
  if (marker != "1") throw UsageError("dialog context: bad utterance_final marker");
  TurnContext turn;
  turn.agent = tokenize(context_field(context, "agent"));
  turn.user_input = tokenize(context_field(context, "user_input"));
  turn.user_response = tokenize(context_field(context, "user_response"));
  turn.utterance_index = parse_count(context, "utterance_index");
  turn.conversation_length = parse_count(context, "conversation_length");
  turn.final_turn = context_field(context, "final_turn") == "1";
  const std::string& history = context_field(context, "user_history");
  std::size_t start = 0;
  while (start <= history.size()) {
    const std::size_t end = history.find(kHistorySeparator, start);
    const std::string piece =
        history.substr(start, end == std::string::npos ? std::string::npos : end - start);
    turn.user_history.push_back(tokenize(piece));
    if (end == std::string::npos) break;
    start = end + kHistorySeparator.size();
  }
  return turn;
}

Batch relabel_batch(const Batch& batch, const RewardSpec& spec, const RewardScorers& scorers) {
  const std::vector<std::string> channels = spec.channels();
  if (channels.empty()) throw UsageError("relabel_batch: reward spec has no channels");
  std::vector<Transition> relabeled;
  relabeled.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& original = batch.transitions()[i];
    if (!original.context.contains("utterance_final")) {
      std::string names;
      for (const auto& c : channels) names += (names.empty() ? "" : ", ") + c;
      throw UsageError("relabel_batch: transition " + std::to_string(i) +
                       " carries no dialog context; cannot recompute channels: " + names);
    }
    Transition t = original;
    t.rewards.clear();
    const auto turn = decode_turn_context(original.context);
    if (turn) {
      t.rewards = score_turn(*turn, scorers, channels, spec);
    } else {
      for (const auto& c : channels) t.rewards[c] = 0.0;
    }
    relabeled.push_back(std::move(t));
  }
  return Batch(std::move(relabeled), batch.action_count(), batch.metadata());
}

}  // namespace batchrl::rewards
