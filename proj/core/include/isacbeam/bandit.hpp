#pragma once

// Multi-agent contextual bandit: per-agent contexts, epsilon-greedy
// selection, replay memories, the common shaped reward and the training
// loop that updates every agent each J steps.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "isacbeam/beamcore.hpp"
#include "isacbeam/envsim.hpp"
#include "isacbeam/nn/qnetwork.hpp"
#include "isacbeam/rng.hpp"

namespace isacbeam {

struct AgentContext {
  std::shared_ptr<const Image> isac_image;
  Point2 own_location;
  std::vector<Point2> all_locations;  // empty unless context_all_locations
  std::size_t user = 0;               // own index into all_locations
};

struct Transition {
  AgentContext context;
  std::size_t action = 0;
  double reward = 0.0;
};

// FIFO ring buffer with uniform sampling.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity = 10000);

  void push(Transition transition);
  // `count` items drawn uniformly with replacement.
  std::vector<const Transition*> sample(std::size_t count, Rng& rng) const;

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::uint64_t insertions() const noexcept { return insertions_; }
  // i = 0 is the oldest stored item.
  const Transition& at(std::size_t i) const;

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::size_t head_ = 0;  // oldest item once full
  std::uint64_t insertions_ = 0;
};

struct EpsilonSchedule {
  double eps_start = 1.0;
  double eps_end = 0.02;
  double decay_horizon = 0.0;  // steps; 0 means eps_end from the start

  double operator()(std::uint64_t step) const noexcept;

  // Decay over the first 80% of all training steps.
  static EpsilonSchedule for_training(std::size_t total_steps, double eps_start = 1.0,
                                      double eps_end = 0.02);
  static EpsilonSchedule constant(double eps);
};

struct TrainingConfig {
  std::size_t epochs = 100;
  std::size_t train_interval = 50;  // J
  std::size_t batch_size = 64;
  std::size_t replay_capacity = 10000;
  double learning_rate = 0.005;
  double reward_exponent = 0.4;  // p
  double eps_start = 1.0;
  double eps_end = 0.02;
  std::uint64_t seed = 0;
  bool context_all_locations = false;
  bool shared_agent = false;

  void validate() const;
};

struct Agent {
  nn::QNetwork<float> network;
  ReplayMemory memory;
  Rng train_rng;  // mini-batch sampling and dropout masks
  std::size_t updates = 0;
  std::size_t skipped_updates = 0;
};

// Learner state that persists across epochs.
struct BanditLearner {
  TrainingConfig config;
  std::vector<Agent> agents;
  EpsilonSchedule schedule;
  std::uint64_t global_step = 0;
  Rng explore_rng;

  std::size_t agent_for_user(std::size_t user) const noexcept {
    return config.shared_agent ? 0 : user;
  }
};

// Network shape matching a scenario and training config.
nn::QNetworkConfig network_config_for(const ScenarioConfig& scenario, const TrainingConfig& training,
                                      nn::QNetworkConfig base = {});

// Fresh agents with independently seeded networks; ε decays over
// `total_training_steps`.
BanditLearner make_learner(const ScenarioConfig& scenario, const TrainingConfig& training,
                           const nn::QNetworkConfig& network, std::size_t total_training_steps);

std::vector<AgentContext> build_contexts(const EnvironmentState& state, bool all_locations);

// Location features: offsets from the AP in meters, own location first.
std::vector<float> location_features(const AgentContext& context, const ScenarioConfig& scenario);

// Packs contexts into (B, 1, H, W) images and (B, L) locations.
void context_batch(std::span<const AgentContext* const> contexts, const ScenarioConfig& scenario,
                   nn::Tensor<float>& images, nn::Tensor<float>& locations);

// Smallest index among the maxima.
std::size_t argmax_action(std::span<const float> q_values);

std::size_t select_action(const nn::QNetwork<float>& network, const AgentContext& context,
                          const ScenarioConfig& scenario, double epsilon, Rng& rng);

double compute_common_reward(const EnvironmentState& state, const BeamAssignment& joint_action,
                             const BeamCodebook& codebook, const LinkBudget& budget,
                             double exponent);

// One masked-MSE Adam step on a uniform mini-batch. Returns false (and
// counts a skip) when the memory holds fewer than batch_size items.
bool update_agent(Agent& agent, const ScenarioConfig& scenario, const TrainingConfig& config);

struct TrainStepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double epsilon = 0.0;
  BeamAssignment actions;
  double sum_se = 0.0;
  double reward = 0.0;
  bool update_tick = false;
};

// One pass over the train split of `trace`. User k is served by agent
// (agent_for_user(k) + agent_offset) mod agents, which lets a scenario with
// fewer users than agents train each agent in turn.
std::vector<TrainStepLog> train_epoch(BanditLearner& learner, const ScenarioTrace& trace,
                                      const BeamCodebook& codebook, std::size_t epoch_index = 0,
                                      std::size_t agent_offset = 0);

struct RolloutLog {
  std::vector<std::size_t> steps;
  std::vector<BeamAssignment> actions;
  std::vector<std::vector<double>> per_user_se;
  std::vector<double> sum_se;
  std::vector<double> reward;
};

// ε = 0, eval mode, no replay writes, no updates.
RolloutLog greedy_rollout(const BanditLearner& learner, const ScenarioTrace& trace,
                          const BeamCodebook& codebook, Split split);

}  // namespace isacbeam
