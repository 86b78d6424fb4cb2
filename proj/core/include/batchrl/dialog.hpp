#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "batchrl/environment.hpp"
#include "batchrl/rewards.hpp"

namespace batchrl {

inline constexpr std::string_view kEndOfUtterance = "<eou>";

struct DialogConfig {
  // vocabulary[0] must be the end-of-utterance token.
  std::vector<std::string> vocabulary;
  std::size_t max_turns = 3;
  std::size_t max_utterance_tokens = 30;
  // Completed utterances kept in the state; older ones are discarded.
  std::size_t window = 5;
  std::vector<std::string> openings;

  static DialogConfig defaults();
  void validate() const;
};

enum class Speaker { user, agent };

struct Utterance {
  Speaker speaker = Speaker::user;
  rewards::Tokens tokens;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

// Everything said so far (within the window) plus the agent's partial utterance.
struct DialogEnvState {
  std::deque<Utterance> history;
  rewards::Tokens current;
  std::size_t turn = 0;  // completed agent utterances
  std::uint64_t user_seed = 0;
  bool finished = false;

  friend bool operator==(const DialogEnvState&, const DialogEnvState&) = default;
};

struct UserReply {
  rewards::Tokens tokens;
  bool ends_conversation = false;

  friend bool operator==(const UserReply&, const UserReply&) = default;
};

// Rule-based stand-in for a human interlocutor. The reply is a pure function
// of (state, agent utterance, state.user_seed):
//   repetitive or empty utterance -> negative reply, user leaves
//   cheerful words                -> laughing, positive reply
//   a question                    -> long reply
//   anything else                 -> short neutral reply
class ScriptedUser {
 public:
  enum class ReplyKind { negative, cheerful, engaged, neutral };

  static ReplyKind classify(std::span<const std::string> agent_utterance);
  UserReply respond(const DialogEnvState& state, std::span<const std::string> agent_utterance) const;
};

struct DialogStep {
  DialogEnvState next;
  bool turn_done = false;
  bool episode_done = false;
  // Filled in when turn_done is set.
  rewards::Tokens agent_utterance;
  rewards::Tokens user_input;
  std::optional<UserReply> reply;
};

// The pure dialog model: vocabulary, transition rule and observation encoding.
class DialogEnv {
 public:
  explicit DialogEnv(DialogConfig config);

  const DialogConfig& config() const { return config_; }
  std::size_t action_count() const { return config_.vocabulary.size(); }
  ActionIndex token_index(std::string_view token) const;
  const std::string& token(ActionIndex action) const;

  DialogEnvState initial_state(std::uint64_t user_seed) const;

  // Appends the token. The turn ends on the end-of-utterance token or at the
  // length cap; the scripted user's reply is then appended to the history.
  DialogStep step(const DialogEnvState& state, ActionIndex token) const;

  // s_{t+1} = [s_{t-1}, agent utterance, user reply], windowed.
  DialogEnvState append_exchange(const DialogEnvState& state, rewards::Tokens agent,
                                 rewards::Tokens user) const;

  // Stable id (hash of the text and turn) plus features:
  // [current bag | last token one-hot | last user utterance bag | position | turn one-hot].
  State observe(const DialogEnvState& state) const;
  std::size_t feature_width() const;

  const ScriptedUser& user() const { return user_; }

 private:
  DialogConfig config_;
  std::map<std::string, ActionIndex, std::less<>> index_;
  ScriptedUser user_;
};

// Environment adapter with the seven dialog reward channels. Utterance-level
// rewards land on the final token of each agent utterance; other tokens get
// zeros. Channels that need the whole conversation are filled in by
// finish_episode().
class DialogEnvironment final : public Environment {
 public:
  explicit DialogEnvironment(DialogConfig config,
                             rewards::RewardSpec spec = rewards::RewardSpec::dialog_default());

  std::unique_ptr<Environment> clone() const override;
  std::size_t action_count() const override { return env_->action_count(); }
  std::vector<std::string> reward_channels() const override;
  State reset(Rng& rng) override;
  StepOutcome step(ActionIndex action, Rng& rng) override;
  void finish_episode(std::vector<Transition>& episode) const override;

  const DialogEnv& model() const { return *env_; }
  const DialogEnvState& current() const { return state_; }
  const rewards::RewardScorers& scorers() const { return scorers_; }

 private:
  std::shared_ptr<const DialogEnv> env_;
  rewards::RewardSpec spec_;
  rewards::RewardScorers scorers_;
  DialogEnvState state_;
  std::vector<rewards::Tokens> user_history_;
};

// Template-driven demonstrator used to produce the data a prior is fit on.
// Each agent turn follows one template (picked from the episode's user seed
// and the turn index); each token is replaced by a random word with
// probability `noise`.
class ReferenceSpeaker {
 public:
  explicit ReferenceSpeaker(const DialogEnv& env, double noise = 0.05);

  ActionIndex act(const DialogEnvState& state, Rng& rng) const;

  static const std::vector<std::pair<std::string, double>>& templates();

 private:
  const DialogEnv* env_;
  double noise_;
  std::vector<std::vector<ActionIndex>> encoded_;
  std::vector<double> weights_;
};

std::vector<Trajectory> collect_dialog_demonstrations(const DialogEnvironment& env,
                                                      std::size_t episodes, std::uint64_t seed,
                                                      double noise = 0.05);

}  // namespace batchrl
