#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <memory>

#include "isacbeam/bandit.hpp"
#include "isacbeam/error.hpp"

using namespace isacbeam;

namespace {

nn::QNetworkConfig tiny_network(const ScenarioConfig& scenario, const TrainingConfig& training) {
  nn::QNetworkConfig base;
  base.d_model = 10;
  base.ffn_dim = 32;
  base.hidden_sizes = {32};
  return network_config_for(scenario, training, base);
}

ScenarioConfig tiny_scenario(std::size_t users, std::size_t steps) {
  ScenarioConfig c = scenario_preset(users == 1 ? "s44-small" : "s42-small");
  c.image_height = 16;
  c.image_width = 16;
  c.n_steps = steps;
  return c;
}

Transition transition_with(std::size_t action, double reward) {
  Transition t;
  t.action = action;
  t.reward = reward;
  return t;
}

}  // namespace

TEST(Epsilon, LinearDecayOverEightyPercent) {
  const std::size_t total = 1000;
  const EpsilonSchedule s = EpsilonSchedule::for_training(total);
  EXPECT_DOUBLE_EQ(s(0), 1.0);
  EXPECT_NEAR(s(400), 0.51, 1e-12);
  EXPECT_DOUBLE_EQ(s(800), 0.02);
  EXPECT_DOUBLE_EQ(s(999), 0.02);
  for (std::uint64_t t = 1; t < total; ++t) EXPECT_LE(s(t), s(t - 1));
  EXPECT_DOUBLE_EQ(EpsilonSchedule::constant(0.1)(0), 0.1);
  EXPECT_DOUBLE_EQ(EpsilonSchedule::constant(0.1)(123456), 0.1);
}

TEST(Replay, FifoEvictsOldest) {
  ReplayMemory m(3);
  for (std::size_t i = 0; i < 5; ++i) m.push(transition_with(i, 0.0));
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(m.insertions(), 5u);
  EXPECT_EQ(m.at(0).action, 2u);
  EXPECT_EQ(m.at(1).action, 3u);
  EXPECT_EQ(m.at(2).action, 4u);
  EXPECT_ANY_THROW(m.at(3));
  EXPECT_ANY_THROW(ReplayMemory(0));
}

TEST(Replay, SamplingIsUniform) {
  ReplayMemory m(10);
  for (std::size_t i = 0; i < 10; ++i) m.push(transition_with(i, 0.0));
  Rng rng(4);
  std::map<std::size_t, std::size_t> counts;
  const std::size_t draws = 100000;
  for (const Transition* t : m.sample(draws, rng)) ++counts[t->action];
  ASSERT_EQ(counts.size(), 10u);
  // Chi-squared with 9 degrees of freedom; 27.88 is the 0.001 quantile.
  double chi2 = 0.0;
  for (const auto& [a, n] : counts) {
    const double d = static_cast<double>(n) - draws / 10.0;
    chi2 += d * d / (draws / 10.0);
  }
  EXPECT_LT(chi2, 27.88);
}

TEST(Actions, ArgmaxPrefersSmallestIndexOnTies) {
  const std::vector<float> q{0.5f, 2.0f, 1.0f, 2.0f};
  EXPECT_EQ(argmax_action(q), 1u);
  const std::vector<float> flat(5, 0.0f);
  EXPECT_EQ(argmax_action(flat), 0u);
}

TEST(Actions, FullExplorationIsUniform) {
  const ScenarioConfig sc = tiny_scenario(1, 20);
  const ScenarioTrace trace = build_scenario(sc);
  TrainingConfig tc;
  const nn::QNetwork<float> net(tiny_network(sc, tc), 1);
  const AgentContext ctx = build_contexts(trace.states[0], false)[0];
  Rng rng(8);
  std::vector<std::size_t> counts(8, 0);
  const std::size_t draws = 40000;
  for (std::size_t i = 0; i < draws; ++i) ++counts[select_action(net, ctx, sc, 1.0, rng)];
  for (std::size_t c : counts) EXPECT_NEAR(static_cast<double>(c) / draws, 1.0 / 8.0, 0.01);
}

TEST(Contexts, LocationFeaturesAreApOffsets) {
  ScenarioConfig sc = tiny_scenario(2, 10);
  EnvironmentState st;
  st.positions = {{6.0, 3.0}, {2.0, 7.5}};
  const auto own = build_contexts(st, false);
  EXPECT_EQ(location_features(own[0], sc), (std::vector<float>{1.0f, 3.0f}));
  EXPECT_EQ(location_features(own[1], sc), (std::vector<float>{-3.0f, 7.5f}));

  const auto all = build_contexts(st, true);
  EXPECT_EQ(location_features(all[1], sc), (std::vector<float>{-3.0f, 7.5f, 1.0f, 3.0f}));
  TrainingConfig tc;
  tc.context_all_locations = true;
  EXPECT_EQ(network_config_for(sc, tc).location_dim, 4u);
}

TEST(Reward, CommonRewardMatchesShapedSum) {
  const ScenarioConfig sc = tiny_scenario(2, 10);
  const ScenarioTrace trace = build_scenario(sc);
  const BeamCodebook cb = scenario_codebook(sc);
  const EnvironmentState& st = trace.states[3];
  const BeamAssignment joint{{2, 5}};
  const auto se = per_user_spectral_efficiency(st.channels, joint, cb, trace.budget);
  double expected = 0.0;
  for (std::size_t k = 0; k < 2; ++k) expected += se[k] * std::pow(st.distances[k], 0.4);
  EXPECT_NEAR(compute_common_reward(st, joint, cb, trace.budget, 0.4), expected, 1e-12);
}

TEST(Training, UpdateTicksAndTransitionsPerEpoch) {
  ScenarioConfig sc = tiny_scenario(2, 2100);
  TrainingConfig tc;
  tc.epochs = 1;
  ASSERT_EQ(sc.train_steps(), 1680u);
  BanditLearner learner = make_learner(sc, tc, tiny_network(sc, tc), sc.train_steps());
  const ScenarioTrace trace = build_scenario(sc);
  const auto log = train_epoch(learner, trace, scenario_codebook(sc));

  std::size_t ticks = 0;
  for (const TrainStepLog& l : log) ticks += l.update_tick;
  EXPECT_EQ(log.size(), 1680u);
  EXPECT_EQ(ticks, 33u);
  ASSERT_EQ(learner.agents.size(), 2u);
  for (const Agent& a : learner.agents) {
    EXPECT_EQ(a.memory.size(), 1680u);
    // The tick at step 50 finds 50 < 64 transitions and is skipped.
    EXPECT_EQ(a.updates, 32u);
    EXPECT_EQ(a.skipped_updates, 1u);
  }
  EXPECT_EQ(learner.global_step, 1680u);
  EXPECT_DOUBLE_EQ(log.front().epsilon, 1.0);
}

TEST(Training, UpdatesSkipUntilBatchIsAvailable) {
  ScenarioConfig sc = tiny_scenario(1, 100);
  TrainingConfig tc;
  tc.train_interval = 10;
  tc.batch_size = 35;
  BanditLearner learner = make_learner(sc, tc, tiny_network(sc, tc), sc.train_steps());
  train_epoch(learner, build_scenario(sc), scenario_codebook(sc));
  // Ticks at 10..80; memory reaches 35 from the fourth tick on.
  EXPECT_EQ(learner.agents[0].skipped_updates, 3u);
  EXPECT_EQ(learner.agents[0].updates, 5u);
}

TEST(Training, SharedAgentServesEveryUser) {
  ScenarioConfig sc = tiny_scenario(2, 60);
  TrainingConfig tc;
  tc.shared_agent = true;
  tc.train_interval = 10;
  BanditLearner learner = make_learner(sc, tc, tiny_network(sc, tc), sc.train_steps());
  ASSERT_EQ(learner.agents.size(), 1u);
  train_epoch(learner, build_scenario(sc), scenario_codebook(sc));
  EXPECT_EQ(learner.agents[0].memory.size(), 2 * sc.train_steps());
}

TEST(Training, TooFewAgentsIsRejected) {
  ScenarioConfig one = tiny_scenario(1, 40);
  ScenarioConfig two = tiny_scenario(2, 40);
  TrainingConfig tc;
  BanditLearner learner = make_learner(one, tc, tiny_network(one, tc), 32);
  EXPECT_THROW(train_epoch(learner, build_scenario(two), scenario_codebook(two)), InvalidArgument);
}

TEST(Training, ToyProblemConverges) {
  // Bright left half rewards action 0, bright right half action 1.
  ScenarioConfig sc = tiny_scenario(1, 10);
  TrainingConfig tc;
  tc.batch_size = 32;
  nn::QNetworkConfig net = tiny_network(sc, tc);
  net.n_actions = 2;
  Agent agent{nn::QNetwork<float>(net, 3), ReplayMemory(1000), Rng(9), 0, 0};

  auto context_for = [&](std::size_t side) {
    auto img = std::make_shared<Image>(Image{16, 16, std::vector<float>(256, 0.0f)});
    for (std::size_t r = 0; r < 16; ++r) {
      for (std::size_t c = side * 8; c < side * 8 + 8; ++c) img->pixels[r * 16 + c] = 1.0f;
    }
    AgentContext ctx;
    ctx.isac_image = img;
    ctx.own_location = {side == 0 ? 3.0 : 7.0, 4.0};
    return ctx;
  };
  Rng rng(2);
  for (std::size_t i = 0; i < 400; ++i) {
    const std::size_t side = rng() % 2;
    const std::size_t action = rng() % 2;
    agent.memory.push(Transition{context_for(side), action, action == side ? 1.0 : 0.0});
  }
  for (int i = 0; i < 300; ++i) ASSERT_TRUE(update_agent(agent, sc, tc));

  Rng unused(0);
  for (std::size_t side : {0u, 1u}) {
    EXPECT_EQ(select_action(agent.network, context_for(side), sc, 0.0, unused), side);
  }
}

TEST(Rollout, GreedyRolloutIsDeterministicAndSideEffectFree) {
  ScenarioConfig sc = tiny_scenario(2, 80);
  TrainingConfig tc;
  tc.train_interval = 10;
  tc.batch_size = 16;
  BanditLearner learner = make_learner(sc, tc, tiny_network(sc, tc), 2 * sc.train_steps());
  const ScenarioTrace trace = build_scenario(sc);
  const BeamCodebook cb = scenario_codebook(sc);
  train_epoch(learner, trace, cb);

  const std::size_t memory_before = learner.agents[0].memory.size();
  const RolloutLog a = greedy_rollout(learner, trace, cb, Split::kTest);
  const RolloutLog b = greedy_rollout(learner, trace, cb, Split::kTest);
  EXPECT_EQ(a.actions, b.actions);
  EXPECT_EQ(a.sum_se, b.sum_se);
  EXPECT_EQ(a.steps.size(), 16u);
  EXPECT_EQ(a.steps.front(), 64u);
  EXPECT_EQ(learner.agents[0].memory.size(), memory_before);
  for (std::size_t i = 0; i < a.sum_se.size(); ++i) {
    EXPECT_NEAR(a.sum_se[i], a.per_user_se[i][0] + a.per_user_se[i][1], 1e-12);
  }
}

TEST(Rollout, SameSeedSameTraining) {
  ScenarioConfig sc = tiny_scenario(2, 80);
  TrainingConfig tc;
  tc.train_interval = 10;
  tc.batch_size = 16;
  tc.seed = 5;
  const ScenarioTrace trace = build_scenario(sc);
  const BeamCodebook cb = scenario_codebook(sc);
  auto run = [&] {
    BanditLearner learner = make_learner(sc, tc, tiny_network(sc, tc), sc.train_steps());
    train_epoch(learner, trace, cb);
    return greedy_rollout(learner, trace, cb, Split::kTest).actions;
  };
  EXPECT_EQ(run(), run());
}
