#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "batchrl/types.hpp"

namespace batchrl::rewards {

// Channel names used by the dialog environment.
inline constexpr std::string_view kQuestion = "question";
inline constexpr std::string_view kSemanticCoherence = "semantic_coherence";
inline constexpr std::string_view kLaughter = "laughter";
inline constexpr std::string_view kSentimentTransition = "sentiment_transition";
inline constexpr std::string_view kSentiment = "sentiment";
inline constexpr std::string_view kWordsElicited = "words_elicited";
inline constexpr std::string_view kConversationLength = "conversation_length";

// The seven dialog channels, in mixture order.
const std::vector<std::string>& dialog_channels();

using Tokens = std::vector<std::string>;

// Lower-cases, splits on whitespace, and splits '?', '!', '.', ',', ';', ':'
// into tokens of their own.
Tokens tokenize(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);
// True for tokens made only of punctuation characters.
bool is_punctuation(std::string_view token);

// Named channel weights plus the knobs some channels need.
struct RewardSpec {
  std::map<std::string, double> weights;
  // Discount in the conversation-length channel gamma^(N-n) * N.
  double length_discount = 0.5;
  // Count "ha" only inside tokens made of repeated "ha" instead of anywhere.
  bool laughter_word_boundary = false;

  // The mixture coefficients used for the dialog experiments (sum to 1).
  static RewardSpec dialog_default();
  static RewardSpec single(std::string channel, double weight = 1.0);

  std::vector<std::string> channels() const;
};

// Weighted sum over the spec's channels. Throws UsageError naming any
// channel the spec weights but `values` lacks.
double total_reward(const RewardMap& values, const RewardSpec& spec);

// 0.5 for a question word (how/what/where/why/when/who), +0.5 for a '?'.
double question_reward(std::span<const std::string> agent_tokens);

// Non-overlapping, case-insensitive occurrences of the literal "ha".
std::size_t laughter_reward(std::string_view user_response, bool word_boundary = false);

// gamma^(N-n) * N for 1 <= n <= N; n == N yields N.
double conversation_length_reward(std::size_t total_utterances, std::size_t utterance_index,
                                  double gamma);

// Number of non-punctuation tokens.
double words_elicited_reward(std::span<const std::string> user_tokens);

class SentimentScorer {
 public:
  virtual ~SentimentScorer() = default;
  virtual double score(std::span<const std::string> tokens) const = 0;
};

// Signed token lexicon; the utterance score is the clamped sum in [-1, 1].
class LexiconSentimentScorer final : public SentimentScorer {
 public:
  explicit LexiconSentimentScorer(std::map<std::string, double> weights);
  static LexiconSentimentScorer defaults();
  // "token weight" per line; '#' starts a comment.
  static LexiconSentimentScorer load(const std::filesystem::path& path);

  double score(std::span<const std::string> tokens) const override;
  const std::map<std::string, double>& weights() const { return weights_; }

 private:
  std::map<std::string, double> weights_;
};

double sentiment_reward(std::span<const std::string> user_response, const SentimentScorer& scorer);

// 1 when the most positive utterance comes strictly after the most negative
// one (first occurrence wins ties), else 0.
double sentiment_transition_reward(std::span<const Tokens> user_utterances,
                                   const SentimentScorer& scorer);

class SentenceEmbedder {
 public:
  virtual ~SentenceEmbedder() = default;
  virtual std::vector<double> embed(std::span<const std::string> tokens) const = 0;
};

// Count vector over a fixed vocabulary; out-of-vocabulary tokens are ignored.
class BagOfWordsEmbedder final : public SentenceEmbedder {
 public:
  explicit BagOfWordsEmbedder(std::vector<std::string> vocabulary);
  std::vector<double> embed(std::span<const std::string> tokens) const override;

 private:
  std::map<std::string, std::size_t> index_;
};

// (cos + 1) / 2 between the two embeddings; 0 when either embedding is all zero.
double semantic_similarity_reward(std::span<const std::string> user_input,
                                  std::span<const std::string> agent_response,
                                  const SentenceEmbedder& embedder);

struct PhraseLists {
  std::vector<std::string> polite;
  std::vector<std::string> supportive;
  std::vector<std::string> cheerful;

  static const PhraseLists& defaults();
  // Reads polite.txt, supportive.txt and cheerful.txt (one phrase per line).
  static PhraseLists load(const std::filesystem::path& directory);
};

struct PhraseMetrics {
  std::size_t polite = 0;
  std::size_t supportive = 0;
  std::size_t cheerful = 0;

  friend bool operator==(const PhraseMetrics&, const PhraseMetrics&) = default;
};

// Number of phrases from each list present (case-insensitive substring) in the utterance.
PhraseMetrics posthoc_metrics(std::string_view utterance,
                              const PhraseLists& phrases = PhraseLists::defaults());

// Everything needed to score one agent utterance after the fact.
struct TurnContext {
  Tokens agent;
  Tokens user_input;     // the user utterance the agent answered
  Tokens user_response;  // the user's reply to the agent
  std::size_t utterance_index = 1;       // n, 1-based agent utterance index
  std::size_t conversation_length = 1;   // N, agent utterances in the conversation
  bool final_turn = false;
  std::vector<Tokens> user_history;      // all user utterances, for sentiment_transition
};

struct RewardScorers {
  std::shared_ptr<const SentimentScorer> sentiment;
  std::shared_ptr<const SentenceEmbedder> embedder;
};

// All channel values for one agent utterance. Only channels in `channels` are computed.
RewardMap score_turn(const TurnContext& turn, const RewardScorers& scorers,
                     std::span<const std::string> channels, const RewardSpec& spec);

// Transition context encoding. Non-final tokens carry {"utterance_final": "0"}.
ContextMap encode_turn_context(const TurnContext& turn);
ContextMap non_final_token_context();
// nullopt for a non-final token; throws UsageError when the context is absent or incomplete.
std::optional<TurnContext> decode_turn_context(const ContextMap& context);

// Recomputes every channel the spec weights from each transition's stored
// dialog context. Non-final tokens get zero for every channel. Throws
// UsageError (listing the channels) if any transition lacks dialog context.
Batch relabel_batch(const Batch& batch, const RewardSpec& spec, const RewardScorers& scorers);

}  // namespace batchrl::rewards
