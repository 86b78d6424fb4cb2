#include "batchrl/dialog.hpp"

#include <algorithm>
#include <set>
#include <utility>

#include "batchrl/errors.hpp"

namespace batchrl {

namespace {

using rewards::Tokens;

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv(std::uint64_t& h, std::string_view bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
}

Tokens words(std::string_view text) { return rewards::tokenize(text); }

const std::vector<std::string>& reply_bank(ScriptedUser::ReplyKind kind) {
  static const std::vector<std::string> negative = {"ugh that is bad . bye",
                                                    "this is awful , bye"};
  static const std::vector<std::string> cheerful = {"haha that is great !",
                                                    "ha thanks , i am happy",
                                                    "haha you are nice"};
  static const std::vector<std::string> engaged = {
      "well i am fine , i had a long day at work and now i am tired",
      "it is a long story but i will tell you all about my day"};
  static const std::vector<std::string> neutral = {"ok .", "i see", "sure"};
  switch (kind) {
    case ScriptedUser::ReplyKind::negative: return negative;
    case ScriptedUser::ReplyKind::cheerful: return cheerful;
    case ScriptedUser::ReplyKind::engaged: return engaged;
    case ScriptedUser::ReplyKind::neutral: return neutral;
  }
  return neutral;
}

const Tokens* last_user_utterance(const DialogEnvState& state) {
  for (auto it = state.history.rbegin(); it != state.history.rend(); ++it) {
    if (it->speaker == Speaker::user) return &it->tokens;
  }
  return nullptr;
}

}  // namespace

DialogConfig DialogConfig::defaults() {
  DialogConfig config;
  config.vocabulary = {std::string(kEndOfUtterance),
                       "how", "what", "why", "where", "when", "who", "?",
                       "are", "you", "is", "that", "it", "great", "!",
                       "i", "am", "glad", "nice", "thanks", ",", "have", "a", "day",
                       "happy", "good", "ok", "tell", "me", "more", ".", "see", "fine",
                       "ha", "bad", "sad", "awful"};
  config.openings = {"hi there", "hello , how is it going ?", "hey"};
  return config;
}

void DialogConfig::validate() const {
  if (vocabulary.empty() || vocabulary.front() != kEndOfUtterance) {
    throw UsageError("DialogConfig: vocabulary must start with " + std::string(kEndOfUtterance));
  }
  std::set<std::string> seen;
  for (const auto& token : vocabulary) {
    if (token.empty()) throw UsageError("DialogConfig: empty vocabulary token");
    if (!seen.insert(token).second) throw UsageError("DialogConfig: duplicate token '" + token + "'");
  }
  if (max_turns == 0) throw UsageError("DialogConfig: max_turns must be >= 1");
  if (max_utterance_tokens == 0) throw UsageError("DialogConfig: max_utterance_tokens must be >= 1");
  if (window < 2) throw UsageError("DialogConfig: window must be >= 2");
  if (openings.empty()) throw UsageError("DialogConfig: no opening utterances");
}

ScriptedUser::ReplyKind ScriptedUser::classify(std::span<const std::string> agent_utterance) {
  if (agent_utterance.empty()) return ReplyKind::negative;
  std::map<std::string_view, int> counts;
  for (const auto& token : agent_utterance) {
    if (++counts[token] >= 3) return ReplyKind::negative;
  }
  static const std::set<std::string_view> cheerful = {"great", "glad", "nice",
                                                      "thanks", "happy", "good"};
  for (const auto& token : agent_utterance) {
    if (cheerful.contains(token)) return ReplyKind::cheerful;
  }
  if (rewards::question_reward(agent_utterance) > 0.0) return ReplyKind::engaged;
  return ReplyKind::neutral;
}

UserReply ScriptedUser::respond(const DialogEnvState& state,
                                std::span<const std::string> agent_utterance) const {
  const ReplyKind kind = classify(agent_utterance);
  const auto& bank = reply_bank(kind);
  std::uint64_t h = kFnvOffset;
  for (const auto& token : agent_utterance) {
    fnv(h, token);
    fnv(h, " ");
  }
  const std::uint64_t pick = mix_seed(state.user_seed ^ h, state.turn);
  UserReply reply;
  reply.tokens = words(bank[pick % bank.size()]);
  reply.ends_conversation = kind == ReplyKind::negative;
  return reply;
}

DialogEnv::DialogEnv(DialogConfig config) : config_(std::move(config)) {
  config_.validate();
  for (std::size_t i = 0; i < config_.vocabulary.size(); ++i) index_[config_.vocabulary[i]] = i;
}

ActionIndex DialogEnv::token_index(std::string_view token) const {
  const auto it = index_.find(token);
  if (it == index_.end()) throw UsageError("dialog: token '" + std::string(token) + "' not in vocabulary");
  return it->second;
}

const std::string& DialogEnv::token(ActionIndex action) const {
  if (action >= config_.vocabulary.size()) {
    throw UsageError("dialog: action " + std::to_string(action) + " out of range");
  }
  return config_.vocabulary[action];
}

DialogEnvState DialogEnv::initial_state(std::uint64_t user_seed) const {
  DialogEnvState state;
  state.user_seed = user_seed;
  const auto& opening = config_.openings[mix_seed(user_seed, 0) % config_.openings.size()];
  state.history.push_back({Speaker::user, words(opening)});
  return state;
}

DialogEnvState DialogEnv::append_exchange(const DialogEnvState& state, Tokens agent,
                                          Tokens user) const {
  DialogEnvState next = state;
  next.current.clear();
  next.history.push_back({Speaker::agent, std::move(agent)});
  next.history.push_back({Speaker::user, std::move(user)});
  while (next.history.size() > config_.window) next.history.pop_front();
  return next;
}

DialogStep DialogEnv::step(const DialogEnvState& state, ActionIndex action) const {
  if (state.finished) throw UsageError("dialog: step after the conversation ended");
  const std::string& word = token(action);
  DialogStep out;
  out.next = state;
  if (action != 0) out.next.current.push_back(word);
  out.turn_done = action == 0 || out.next.current.size() >= config_.max_utterance_tokens;
  if (!out.turn_done) return out;

  out.agent_utterance = out.next.current;
  if (const Tokens* input = last_user_utterance(state)) out.user_input = *input;
  out.reply = user_.respond(state, out.agent_utterance);
  out.next = append_exchange(out.next, out.agent_utterance, out.reply->tokens);
  out.next.turn = state.turn + 1;
  out.episode_done = out.reply->ends_conversation || out.next.turn >= config_.max_turns;
  out.next.finished = out.episode_done;
  return out;
}

std::size_t DialogEnv::feature_width() const {
  return 3 * action_count() + 1 + config_.max_turns;
}

State DialogEnv::observe(const DialogEnvState& state) const {
  const std::size_t v = action_count();
  std::vector<double> features(feature_width(), 0.0);
  auto bag = [&](const Tokens& tokens, std::size_t offset) {
    for (const auto& t : tokens) {
      if (const auto it = index_.find(t); it != index_.end()) features[offset + it->second] += 1.0;
    }
  };
  bag(state.current, 0);
  if (!state.current.empty()) features[v + token_index(state.current.back())] = 1.0;
  if (const Tokens* user = last_user_utterance(state)) bag(*user, 2 * v);
  features[3 * v] = static_cast<double>(state.current.size()) /
                    static_cast<double>(config_.max_utterance_tokens);
  features[3 * v + 1 + std::min(state.turn, config_.max_turns - 1)] = 1.0;

  std::uint64_t h = kFnvOffset;
  for (const auto& u : state.history) {
    fnv(h, u.speaker == Speaker::user ? "U" : "A");
    for (const auto& t : u.tokens) {
      fnv(h, t);
      fnv(h, " ");
    }
    fnv(h, "\x1f");
  }
  fnv(h, "|");
  for (const auto& t : state.current) {
    fnv(h, t);
    fnv(h, " ");
  }
  fnv(h, "#" + std::to_string(state.turn));
  return State{static_cast<std::int64_t>(h & 0x7fffffffffffffffULL), std::move(features)};
}

DialogEnvironment::DialogEnvironment(DialogConfig config, rewards::RewardSpec spec)
    : env_(std::make_shared<const DialogEnv>(std::move(config))), spec_(std::move(spec)) {
  scorers_.sentiment = std::make_shared<const rewards::LexiconSentimentScorer>(
      rewards::LexiconSentimentScorer::defaults());
  scorers_.embedder =
      std::make_shared<const rewards::BagOfWordsEmbedder>(env_->config().vocabulary);
  state_ = env_->initial_state(0);
}

std::unique_ptr<Environment> DialogEnvironment::clone() const {
  return std::make_unique<DialogEnvironment>(*this);
}

std::vector<std::string> DialogEnvironment::reward_channels() const {
  return rewards::dialog_channels();
}

State DialogEnvironment::reset(Rng& rng) {
  state_ = env_->initial_state(rng());
  user_history_ = {state_.history.back().tokens};
  return env_->observe(state_);
}

StepOutcome DialogEnvironment::step(ActionIndex action, Rng& /*rng*/) {
  DialogStep result = env_->step(state_, action);
  StepOutcome outcome;
  if (!result.turn_done) {
    for (const auto& ch : rewards::dialog_channels()) outcome.rewards[ch] = 0.0;
    outcome.context = rewards::non_final_token_context();
  } else {
    user_history_.push_back(result.reply->tokens);
    rewards::TurnContext turn;
    turn.agent = result.agent_utterance;
    turn.user_input = result.user_input;
    turn.user_response = result.reply->tokens;
    turn.utterance_index = result.next.turn;
    turn.conversation_length = result.next.turn;
    turn.final_turn = result.episode_done;
    turn.user_history = user_history_;
    outcome.rewards = rewards::score_turn(turn, scorers_, rewards::dialog_channels(), spec_);
    outcome.context = rewards::encode_turn_context(turn);
  }
  outcome.terminal = result.episode_done;
  outcome.done = result.episode_done;
  state_ = std::move(result.next);
  outcome.next_state = env_->observe(state_);
  return outcome;
}

void DialogEnvironment::finish_episode(std::vector<Transition>& episode) const {
  std::vector<std::pair<Transition*, rewards::TurnContext>> turns;
  for (auto& t : episode) {
    if (auto turn = rewards::decode_turn_context(t.context)) turns.emplace_back(&t, std::move(*turn));
  }
  if (turns.empty()) return;
  const std::size_t total = turns.size();
  const auto history = turns.back().second.user_history;
  for (std::size_t i = 0; i < total; ++i) {
    auto& [transition, turn] = turns[i];
    turn.conversation_length = total;
    turn.final_turn = i + 1 == total;
    turn.user_history = history;
    transition->rewards = rewards::score_turn(turn, scorers_, rewards::dialog_channels(), spec_);
    transition->context = rewards::encode_turn_context(turn);
  }
}

const std::vector<std::pair<std::string, double>>& ReferenceSpeaker::templates() {
  static const std::vector<std::pair<std::string, double>> table = {
      {"how are you ?", 0.05},        {"what is that ?", 0.05},
      {"why is that ?", 0.05},        {"who are you ?", 0.05},
      {"where is it ?", 0.05},        {"when is it ?", 0.05},
      {"that is great !", 0.05},      {"i am glad", 0.05},
      {"you are nice", 0.05},         {"thanks , have a great day", 0.05},
      {"i am happy", 0.05},           {"good day !", 0.05},
      {"ok", 0.08},                   {"tell me more .", 0.08},
      {"i see", 0.08},                {"it is fine", 0.08},
      {"i have a day", 0.08},
  };
  return table;
}

ReferenceSpeaker::ReferenceSpeaker(const DialogEnv& env, double noise) : env_(&env), noise_(noise) {
  if (!(noise >= 0.0 && noise < 1.0)) throw UsageError("ReferenceSpeaker: noise must be in [0, 1)");
  if (env.action_count() < 2) throw UsageError("ReferenceSpeaker: vocabulary too small");
  for (const auto& [text, weight] : templates()) {
    std::vector<ActionIndex> encoded;
    for (const auto& token : words(text)) encoded.push_back(env.token_index(token));
    encoded_.push_back(std::move(encoded));
    weights_.push_back(weight);
  }
}

ActionIndex ReferenceSpeaker::act(const DialogEnvState& state, Rng& rng) const {
  Rng pick(mix_seed(state.user_seed, 1000 + state.turn));
  const auto& chosen = encoded_[sample_categorical(weights_, pick)];
  const std::size_t position = state.current.size();
  const ActionIndex intended = position < chosen.size() ? chosen[position] : 0;
  if (uniform01(rng) < noise_) return 1 + uniform_index(rng, env_->action_count() - 1);
  return intended;
}

std::vector<Trajectory> collect_dialog_demonstrations(const DialogEnvironment& env,
                                                      std::size_t episodes, std::uint64_t seed,
                                                      double noise) {
  if (episodes == 0) throw UsageError("collect_dialog_demonstrations: zero episodes");
  const ReferenceSpeaker speaker(env.model(), noise);
  std::vector<std::vector<Transition>> rollouts;
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng(mix_seed(seed, e));
    DialogEnvironment instance = env;
    const PolicyFn policy = [&](const State&, Rng& r) { return speaker.act(instance.current(), r); };
    rollouts.push_back(rollout_episode(instance, policy, rng, "reference"));
  }
  return to_trajectories(rollouts);
}

}  // namespace batchrl
