#include <gtest/gtest.h>

#include <optional>
#include <string>
#include <vector>

#include "batchrl/algos.hpp"
#include "batchrl/dialog.hpp"
#include "batchrl/distribution.hpp"
#include "batchrl/errors.hpp"
#include "batchrl/network.hpp"

namespace batchrl {
namespace {

using rewards::Tokens;

DialogConfig tiny_config(std::size_t max_turns = 3) {
  DialogConfig config;
  config.vocabulary = {"<eou>", "i", "?"};
  config.openings = {"hi"};
  config.max_turns = max_turns;
  return config;
}

class UniformPrior final : public PolicyPrior {
 public:
  explicit UniformPrior(std::size_t actions) : actions_(actions) {}
  std::size_t action_count() const override { return actions_; }
  ActionDistribution evaluate(const State&) const override {
    return ActionDistribution::uniform(actions_);
  }

 private:
  std::size_t actions_;
};

QFunction dialog_q(const DialogEnv& env, std::uint64_t seed) {
  const std::vector<std::size_t> widths{env.feature_width(), 6, env.action_count()};
  return QFunction(FeedforwardQ::uniform_init(mlp_shapes(widths, Activation::tanh), 0.0, seed));
}

double max_value(const QFunction& q, const State& s) {
  const auto v = q.values(s);
  return v[argmax(v)];
}

TEST(DialogStep, ImmediateEndOfUtterance) {
  const DialogEnv env(tiny_config());
  const auto out = env.step(env.initial_state(1), 0);
  EXPECT_TRUE(out.turn_done);
  EXPECT_TRUE(out.agent_utterance.empty());
  EXPECT_EQ(out.next.turn, 1u);
  ASSERT_TRUE(out.reply.has_value());
  EXPECT_EQ(out.user_input, Tokens{"hi"});
}

TEST(DialogStep, LengthCapForcesTurnEnd) {
  const DialogEnv env(tiny_config());
  auto state = env.initial_state(2);
  for (int i = 0; i < 29; ++i) {
    const auto out = env.step(state, 1 + static_cast<ActionIndex>(i % 2));
    ASSERT_FALSE(out.turn_done) << i;
    state = out.next;
  }
  const auto out = env.step(state, 1);
  EXPECT_TRUE(out.turn_done);
  EXPECT_EQ(out.agent_utterance.size(), 30u);
  EXPECT_TRUE(out.next.current.empty());
}

TEST(DialogStep, ReplyIsAppendedToTheState) {
  // Agent says "i ?": a question, so the user gives a long reply containing "i".
  const DialogEnv env(tiny_config());
  const auto s0 = env.initial_state(5);
  const auto s1 = env.step(s0, 1).next;
  const auto s2 = env.step(s1, 2).next;
  EXPECT_EQ(s2.current, (Tokens{"i", "?"}));
  const auto out = env.step(s2, 0);
  ASSERT_TRUE(out.turn_done);
  EXPECT_EQ(ScriptedUser::classify(out.agent_utterance), ScriptedUser::ReplyKind::engaged);

  const Tokens reply = env.user().respond(s2, Tokens{"i", "?"}).tokens;
  ASSERT_EQ(out.next.history.size(), 3u);
  EXPECT_EQ(out.next.history[0], (Utterance{Speaker::user, {"hi"}}));
  EXPECT_EQ(out.next.history[1], (Utterance{Speaker::agent, {"i", "?"}}));
  EXPECT_EQ(out.next.history[2], (Utterance{Speaker::user, reply}));

  // Features: [current bag | last token | last user bag | position | turn one-hot].
  const auto f = env.observe(out.next).features;
  const std::size_t v = 3;
  double i_count = 0.0;
  for (const auto& t : reply) i_count += t == "i" ? 1.0 : 0.0;
  EXPECT_GT(i_count, 0.0);
  EXPECT_EQ(f[2 * v + 1], i_count);
  EXPECT_EQ(f[2 * v + 2], 0.0);
  for (std::size_t k = 0; k < 2 * v; ++k) EXPECT_EQ(f[k], 0.0);
  EXPECT_EQ(f[3 * v], 0.0);
  EXPECT_EQ(f[3 * v + 1 + 1], 1.0);
}

TEST(DialogStep, OutOfVocabularyThrows) {
  const DialogEnv env(tiny_config());
  EXPECT_THROW(env.step(env.initial_state(0), 3), UsageError);
  EXPECT_THROW(env.token_index("hello"), UsageError);
}

TEST(DialogStep, WindowKeepsFiveUtterances) {
  const DialogEnv env(tiny_config(6));
  auto state = env.initial_state(3);
  for (int turn = 0; turn < 5 && !state.finished; ++turn) {
    state = env.step(state, 1).next;
    state = env.step(state, 2).next;
    state = env.step(state, 0).next;
    EXPECT_LE(state.history.size(), 5u);
  }
  EXPECT_EQ(state.history.size(), 5u);
}

TEST(ScriptedUser, DeterministicReplies) {
  const DialogEnv env(DialogConfig::defaults());
  const auto state = env.initial_state(42);
  const Tokens utterance{"how", "are", "you", "?"};
  EXPECT_EQ(env.user().respond(state, utterance), env.user().respond(state, utterance));
  EXPECT_EQ(ScriptedUser::classify(Tokens{"great", "day"}), ScriptedUser::ReplyKind::cheerful);
  EXPECT_EQ(ScriptedUser::classify(Tokens{"ok", "ok", "ok"}), ScriptedUser::ReplyKind::negative);
  EXPECT_EQ(ScriptedUser::classify(Tokens{"tell", "me"}), ScriptedUser::ReplyKind::neutral);
}

TEST(DialogEnvironment, RewardsLandOnFinalToken) {
  DialogEnvironment env(DialogConfig::defaults());
  const ActionIndex what = env.model().token_index("what");
  const ActionIndex mark = env.model().token_index("?");
  const std::vector<ActionIndex> script{what, mark, 0};
  std::size_t position = 0;
  Rng rng(9);
  const PolicyFn policy = [&](const State&, Rng&) { return script[position++ % script.size()]; };
  const auto episode = rollout_episode(env, policy, rng, "scripted");
  ASSERT_EQ(episode.size() % 3, 0u);
  for (std::size_t i = 0; i < episode.size(); ++i) {
    const auto& t = episode[i];
    EXPECT_EQ(t.rewards.size(), rewards::dialog_channels().size());
    if (i % 3 != 2) {
      for (const auto& [name, value] : t.rewards) EXPECT_EQ(value, 0.0) << name;
    } else {
      EXPECT_EQ(t.rewards.at("question"), 1.0);
      EXPECT_GT(t.rewards.at("conversation_length"), 0.0);
    }
  }
  EXPECT_TRUE(episode.back().terminal);
}

TEST(ReferenceSpeaker, DemonstrationsAreInVocabulary) {
  const DialogEnvironment env(DialogConfig::defaults());
  const auto demos = collect_dialog_demonstrations(env, 5, 11);
  ASSERT_EQ(demos.size(), 5u);
  for (const auto& d : demos) {
    EXPECT_FALSE(d.steps().empty());
    for (const auto& s : d.steps()) EXPECT_LT(s.action, env.action_count());
  }
}

class BoundaryTarget : public ::testing::Test {
 protected:
  BoundaryTarget() : env(tiny_config()), q(dialog_q(env, 3)), target(dialog_q(env, 4)), prior(3) {
    config.variant = Variant::batch_q;
    config.gamma = 0.9;
    spoken = env.step(env.step(env.initial_state(7), 1).next, 2).next;  // "i ?"
  }

  double boundary(ActionIndex token, const std::optional<Tokens>& response, bool over) {
    Rng rng(0);
    return utterance_boundary_target(env, spoken, token, response, over, {{"reward", 2.0}}, q,
                                     target, prior, config, rng);
  }

  DialogEnv env;
  QFunction q;
  QFunction target;
  UniformPrior prior;
  AlgoConfig config;
  DialogEnvState spoken;
};

TEST_F(BoundaryTarget, FinalTurnIsRewardOnly) {
  EXPECT_EQ(boundary(0, Tokens{"i"}, true), 2.0);
  EXPECT_EQ(boundary(0, std::nullopt, true), 2.0);
}

TEST_F(BoundaryTarget, MidUtteranceIgnoresResponse) {
  const double a = boundary(1, Tokens{"i"}, false);
  const double b = boundary(1, Tokens{"?", "?"}, false);
  const double c = boundary(1, std::nullopt, false);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  DialogEnvState next = spoken;
  next.current.push_back("i");
  EXPECT_DOUBLE_EQ(a, 2.0 + 0.9 * max_value(target, env.observe(next)));
}

TEST_F(BoundaryTarget, BootstrapsFromHandBuiltNextState) {
  const Tokens response{"i", "i", "?"};
  DialogEnvState hand;
  hand.user_seed = 7;
  hand.turn = 1;
  hand.history.push_back({Speaker::user, {"hi"}});
  hand.history.push_back({Speaker::agent, {"i", "?"}});
  hand.history.push_back({Speaker::user, response});
  const State s_next = env.observe(hand);
  EXPECT_EQ(s_next.features[2 * 3 + 1], 2.0);
  EXPECT_EQ(s_next.features[2 * 3 + 2], 1.0);
  EXPECT_DOUBLE_EQ(boundary(0, response, false), 2.0 + 0.9 * max_value(target, s_next));
}

TEST_F(BoundaryTarget, MissingResponseIsContractError) {
  EXPECT_THROW(boundary(0, std::nullopt, false), ContractError);
}

}  // namespace
}  // namespace batchrl
